import json
import os
import signal
import socket
import subprocess
import sys
import time
import urllib.request

from conftest import SCENARIOS
from tana.cli import main

FALL = str(SCENARIOS / "fall1.json")
SUITE_FALL = str(SCENARIOS / "suite" / "fall1.json")


def run_cli(*args):
    return main(list(args))


def test_run_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run_cli("run", "--scenario", FALL, "--out", str(a), "--view", "building") == 0
    assert run_cli("run", "--scenario", FALL, "--out", str(b), "--view", "building") == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert json.loads(lines[0]) == {"type": "view", "view": "building"}
    assert json.loads(lines[-1])["type"] == "run_summary"


def test_seed_override(tmp_path):
    outs = {}
    for seed in ("7", "7", "42"):
        path = tmp_path / f"s{seed}-{len(outs)}.jsonl"
        assert run_cli("run", "--scenario", FALL, "--seed", seed, "--out", str(path),
                       "--view", "native") == 0
        outs.setdefault(seed, []).append(path.read_bytes())
    assert outs["7"][0] == outs["7"][1]
    assert outs["7"][0] != outs["42"][0]


def test_malformed_scenario_writes_nothing(tmp_path):
    bad = tmp_path / "bad.json"
    doc = json.loads(open(FALL).read())
    del doc["seed"]
    bad.write_text(json.dumps(doc))
    out = tmp_path / "out.jsonl"
    assert run_cli("run", "--scenario", str(bad), "--out", str(out)) == 2
    assert not out.exists()
    assert list(tmp_path.iterdir()) == [bad]


def test_unknown_view_exit_2(tmp_path):
    assert run_cli("run", "--scenario", FALL, "--view", "nope", "--out",
                   str(tmp_path / "o.jsonl")) == 2


def test_eval_gates(tmp_path, capsys):
    perfect = tmp_path / "alarms.jsonl"
    assert run_cli("run", "--scenario", SUITE_FALL, "--out", str(perfect)) == 0
    capsys.readouterr()
    assert run_cli("eval", "--alarms", str(perfect), "--scenario", SUITE_FALL,
                   "--min-precision", "1.0", "--min-recall", "1.0") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["precision"] == 1.0 and report["recall"] == 1.0

    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert run_cli("eval", "--alarms", str(empty), "--scenario", SUITE_FALL,
                   "--min-recall", "1.0") == 5
    assert run_cli("eval", "--alarms", str(empty), "--scenario", SUITE_FALL) == 0

    junk = tmp_path / "junk.jsonl"
    junk.write_text("not json\n")
    assert run_cli("eval", "--alarms", str(junk), "--scenario", SUITE_FALL) == 2


# -- serve --------------------------------------------------------------------------------

def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def start_serve(*extra, scenario=SUITE_FALL):
    proc = subprocess.Popen(
        [sys.executable, "-m", "tana", "serve", "--scenario", scenario, *extra],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    line = proc.stdout.readline()
    if not line:
        proc.wait(10)
        return proc, None
    return proc, json.loads(line)["listening"]


def stop(proc):
    proc.send_signal(signal.SIGINT)
    try:
        return proc.wait(15)
    finally:
        if proc.poll() is None:
            proc.kill()


def test_serve_health_and_clean_shutdown():
    proc, addr = start_serve("--listen", f"127.0.0.1:{free_port()}", "--pace", "fast")
    assert addr
    with urllib.request.urlopen(f"http://{addr}/v1/health", timeout=10) as resp:
        assert json.loads(resp.read()) == {"status": "ok"}
    assert stop(proc) == 0


def test_serve_listen_from_environment():
    port = free_port()
    env = {**os.environ, "TANA_LISTEN": f"127.0.0.1:{port}"}
    proc = subprocess.Popen([sys.executable, "-m", "tana", "serve", "--scenario", SUITE_FALL],
                            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env)
    try:
        assert json.loads(proc.stdout.readline())["listening"] == f"127.0.0.1:{port}"
    finally:
        assert stop(proc) == 0


def test_serve_occupied_port():
    with socket.socket() as blocker:
        blocker.bind(("127.0.0.1", 0))
        blocker.listen()
        port = blocker.getsockname()[1]
        proc, addr = start_serve("--listen", f"127.0.0.1:{port}")
        assert addr is None
        assert proc.returncode == 4


def test_serve_realtime_rate(tmp_path):
    doc = json.loads(open(SUITE_FALL).read())
    doc["sensors"] = [doc["sensors"][0]]
    doc["sensors"][0]["period_ticks"] = 20
    doc["events"] = []
    doc["duration_ticks"] = 4000
    scenario = tmp_path / "fifty_hz.json"
    scenario.write_text(json.dumps(doc))
    proc, addr = start_serve("--listen", f"127.0.0.1:{free_port()}", "--pace", "realtime",
                             "--wait-subscribers", "1", scenario=str(scenario))
    try:
        stamps = []
        with urllib.request.urlopen(f"http://{addr}/v1/stream?view=native", timeout=30) as resp:
            for raw in resp:
                if b"run_summary" in raw:
                    break
                stamps.append(time.monotonic())
        rate = (len(stamps) - 1) / (stamps[-1] - stamps[0])
        assert len(stamps) == 200
        assert 40 <= rate <= 60
    finally:
        stop(proc)
