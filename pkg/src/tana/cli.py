"""``tana`` command line: run, serve, eval.

Exit codes: 0 ok, 2 malformed input, 3 runtime fault, 4 bind failure,
5 evaluation gate missed.  Standard output only ever carries JSON or JSONL.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys
import tempfile
import threading
from pathlib import Path

from tana.detection import evaluate_against_truth
from tana.errors import GeometryError, SchemaError, TanaError, UnknownView
from tana.kernel import PacingMode
from tana.pipeline import run_scenario
from tana.simulation import ground_truth_events, load_scenario_file

EXIT_OK, EXIT_SCHEMA, EXIT_RUNTIME, EXIT_BIND, EXIT_GATE = 0, 2, 3, 4, 5

PACING = {"fast": PacingMode.FAST, "realtime": PacingMode.REALTIME}

log = logging.getLogger("tana")


def _error(msg: str) -> None:
    print(f"tana: {msg}", file=sys.stderr)


def _load(path: str, seed: int | None):
    try:
        scenario = load_scenario_file(path)
    except OSError as exc:
        raise SchemaError(path, f"cannot read scenario: {exc.strerror}") from None
    return scenario.with_seed(seed) if seed is not None else scenario


def _parse_listen(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit() or int(port) > 65535:
        raise ValueError(f"--listen expects HOST:PORT, got {value!r}")
    return host or "127.0.0.1", int(port)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = _load(args.scenario, args.seed)
        result = run_scenario(scenario, args.view or (), PACING[args.pace])
    except (SchemaError, GeometryError, UnknownView) as exc:
        _error(str(exc))
        return EXIT_SCHEMA
    except Exception as exc:
        log.debug("run failed", exc_info=True)
        _error(f"runtime fault: {exc}")
        return EXIT_RUNTIME
    text = "".join(line + "\n" for line in result.lines())
    if args.out in (None, "-"):
        sys.stdout.write(text)
        return EXIT_OK
    out = Path(args.out)
    fd, tmp = tempfile.mkstemp(dir=out.parent or Path("."), prefix=f".{out.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, out)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from tana.service import Hub, make_server

    listen = args.listen or os.environ.get("TANA_LISTEN") or "127.0.0.1:8080"
    try:
        host, port = _parse_listen(listen)
        scenario = _load(args.scenario, args.seed)
        hub = Hub(scenario, PACING[args.pace], args.subscriber_buffer)
    except (SchemaError, GeometryError, ValueError) as exc:
        _error(str(exc))
        return EXIT_SCHEMA
    try:
        server = make_server(hub, host, port)
    except OSError as exc:
        _error(f"cannot bind {host}:{port}: {exc.strerror or exc}")
        return EXIT_BIND

    stop = threading.Event()

    def _on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, _on_signal)
    signal.signal(signal.SIGTERM, _on_signal)

    server_thread = threading.Thread(target=server.serve_forever, name="tana-http", daemon=True)
    server_thread.start()
    bound_host, bound_port = server.server_address[:2]
    print(json.dumps({"listening": f"{bound_host}:{bound_port}"}), flush=True)
    log.info("serving %s on %s:%d", scenario.name, bound_host, bound_port)

    def _start_run():
        while not stop.is_set() and hub.subscriber_count() < args.wait_subscribers:
            stop.wait(0.01)
        if not stop.is_set():
            hub.run()

    runner = threading.Thread(target=_start_run, name="tana-run", daemon=True)
    runner.start()
    try:
        stop.wait()
    finally:
        hub.shutdown()
        runner.join(5.0)
        if not hub.finished.is_set():
            # the run never started; still close every stream cleanly
            hub.close_streams()
        server.shutdown()
        server.server_close()
    return EXIT_OK


def _read_alarms(path: str) -> list[dict]:
    alarms = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError(f"line {n}: not a JSON object")
            if obj.get("type") == "fall_alarm":
                if not isinstance(obj.get("t_s"), (int, float)):
                    raise ValueError(f"line {n}: fall_alarm without numeric t_s")
                alarms.append(obj)
    return sorted(alarms, key=lambda a: a["t_s"])


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        scenario = _load(args.scenario, None)
        alarms = _read_alarms(args.alarms)
    except (SchemaError, GeometryError) as exc:
        _error(str(exc))
        return EXIT_SCHEMA
    except (OSError, ValueError) as exc:
        _error(f"malformed alarms file: {exc}")
        return EXIT_SCHEMA
    report = evaluate_against_truth(alarms, ground_truth_events(scenario), args.match_window)
    print(json.dumps(report.to_json()))
    if args.min_precision is not None and report.precision < args.min_precision:
        return EXIT_GATE
    if args.min_recall is not None and report.recall < args.min_recall:
        return EXIT_GATE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tana", description=__doc__.splitlines()[0])
    parser.add_argument("--log", default="warn", choices=("error", "warn", "info", "debug"))
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario end to end")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out", help="output JSONL path (default: stdout)")
    run.add_argument("--seed", type=int)
    run.add_argument("--view", action="append", help="emit samples through this view (repeatable)")
    run.add_argument("--pace", choices=tuple(PACING), default="fast")
    run.set_defaults(func=cmd_run)

    serve = sub.add_parser("serve", help="serve the hub endpoints over a scenario run")
    serve.add_argument("--scenario", required=True)
    serve.add_argument("--listen", help="HOST:PORT (falls back to $TANA_LISTEN)")
    serve.add_argument("--seed", type=int)
    serve.add_argument("--pace", choices=tuple(PACING), default="realtime")
    serve.add_argument("--wait-subscribers", type=int, default=0,
                       help="hold the run until this many stream subscribers are attached")
    serve.add_argument("--subscriber-buffer", type=int, default=1024)
    serve.set_defaults(func=cmd_serve)

    ev = sub.add_parser("eval", help="score an alarm file against scenario ground truth")
    ev.add_argument("--alarms", required=True)
    ev.add_argument("--scenario", required=True)
    ev.add_argument("--min-precision", type=float)
    ev.add_argument("--min-recall", type=float)
    ev.add_argument("--match-window", type=float, default=2.0)
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {"warn": "WARNING"}.get(args.log, args.log.upper())
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TanaError as exc:
        _error(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
