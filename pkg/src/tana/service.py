"""Streaming hub service.

:class:`Hub` owns one scenario run and fans normalized samples out to view
subscribers; :func:`make_server` puts it behind HTTP/1.1 with chunked
JSON-Lines streams.  Consumer endpoints never expose sensor identity; only
``/v1/admin/sensors`` does.
"""

from __future__ import annotations

import itertools
import json
import logging
import threading
from collections import deque
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Iterator
from urllib.parse import parse_qs, urlsplit

from tana.detection import FallAlarm, detect_falls
from tana.errors import MalformedQuery, NonIntegralPeriod, TanaError, UnknownSensor
from tana.kernel import PacingMode, RunSummary
from tana.pipeline import DETECTOR_VIEW, ScenarioRuntime, dumps
from tana.simulation import Scenario
from tana.spaces import apply_view, quantity_of, sample_to_line

log = logging.getLogger(__name__)

_ids = itertools.count(1)


class Subscription:
    """Per-subscriber bounded line buffer.

    Overflow closes the subscription with a terminal error record; the
    producer is never blocked.
    """

    def __init__(self, view_id: str, kind: str | None, started_at_tick: int,
                 capacity: int = 1024) -> None:
        self.subscription_id = f"sub-{next(_ids)}"
        self.view_id = view_id
        self.kind = kind
        self.started_at_tick = started_at_tick
        self.capacity = capacity
        self.closed = False
        self.overflowed = False
        self._lines: deque[str] = deque()
        self._cond = threading.Condition()

    def push(self, line: str) -> bool:
        with self._cond:
            if self.closed:
                return False
            if len(self._lines) >= self.capacity:
                self.overflowed = True
                self.closed = True
                self._lines.append(dumps({
                    "error": "subscriber_overflow",
                    "detail": f"buffer of {self.capacity} lines exceeded"}))
                self._cond.notify_all()
                return False
            self._lines.append(line)
            self._cond.notify_all()
            return True

    def finish(self, line: str | None = None) -> None:
        with self._cond:
            if self.closed:
                return
            if line is not None:
                self._lines.append(line)
            self.closed = True
            self._cond.notify_all()

    def lines(self, timeout: float | None = None) -> Iterator[str]:
        while True:
            with self._cond:
                if not self._cond.wait_for(lambda: self._lines or self.closed, timeout):
                    return
                if not self._lines:
                    return
                line = self._lines.popleft()
            yield line


class Hub:
    def __init__(self, scenario: Scenario, pacing: PacingMode = PacingMode.FAST,
                 subscriber_capacity: int = 1024) -> None:
        self.runtime = ScenarioRuntime.build(scenario)
        self.kernel = self.runtime.new_kernel(pacing)
        self.subscriber_capacity = subscriber_capacity
        self._subs: list[Subscription] = []
        self._lock = threading.Lock()
        self._alarms: list[FallAlarm] = []
        self._thread: threading.Thread | None = None
        self.finished = threading.Event()
        self.summary: RunSummary | None = None
        self.normalized_count = 0

    # -- queries -----------------------------------------------------------

    def list_spaces(self) -> list[dict]:
        return [s.to_json() for s in self.runtime.spaces.spaces()]

    def admin_sensors(self) -> list[dict]:
        out = []
        with self.kernel.lock:
            counts = dict(self.kernel._ok)
            for desc in self.kernel.registry.descriptors():
                entry = self.kernel.schedule.entry(desc.sensor_id)
                out.append({**desc.to_json(), "period_ticks": entry.period_ticks,
                            "phase_ticks": entry.phase_ticks, "enabled": entry.enabled,
                            "samples": counts.get(desc.sensor_id, 0)})
        return out

    def list_events(self, since_t_s: float) -> list[dict]:
        if isinstance(since_t_s, bool) or not isinstance(since_t_s, (int, float)) \
                or since_t_s != since_t_s or since_t_s < 0:
            raise MalformedQuery(f"since must be a non-negative number, got {since_t_s!r}")
        with self._lock:
            alarms = list(self._alarms)
        return [a.to_json() for a in alarms if a.t_s >= since_t_s]

    # -- subscriptions -------------------------------------------------------

    def subscribe(self, view_id: str, kind: str | None = None) -> Subscription:
        self.runtime.view(view_id)
        with self._lock:
            sub = Subscription(view_id, kind, self.kernel.clock.current_tick,
                               self.subscriber_capacity)
            if self.finished.is_set():
                sub.finish(self._terminal_line())
            else:
                self._subs.append(sub)
        return sub

    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._subs)

    def close_streams(self) -> None:
        """Terminate every open stream with the run-summary record."""
        with self._lock:
            subs, self._subs = self._subs, []
        for sub in subs:
            sub.finish(self._terminal_line())

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subs:
                self._subs.remove(sub)
        sub.finish()

    # -- control -------------------------------------------------------------

    def post_rate_command(self, sensor_id: str, rate_hz) -> dict:
        if sensor_id not in self.kernel.registry:
            raise UnknownSensor(sensor_id)
        if isinstance(rate_hz, bool) or not isinstance(rate_hz, (int, float)) \
                or not rate_hz > 0 or rate_hz == float("inf"):
            raise MalformedQuery(f"rate_hz must be a positive number, got {rate_hz!r}")
        period = Fraction(1_000_000) / (Fraction(repr(rate_hz)) * self.runtime.tick_quantum_us)
        if period.denominator != 1:
            raise NonIntegralPeriod(f"{rate_hz} Hz is {float(period):.4f} ticks")
        _, effective = self.kernel.submit_rate_command(sensor_id, int(period))
        return {"applied_period_ticks": int(period), "effective_from_tick": effective}

    # -- the run -------------------------------------------------------------

    def _terminal_line(self) -> str:
        return dumps(self.summary.to_json(anonymous=True)) if self.summary else dumps(
            {"type": "run_summary"})

    def run(self) -> RunSummary:
        """Execute the scenario in the calling thread, fanning out as it goes."""
        spaces = self.runtime.spaces
        detector_view = self.runtime.view(DETECTOR_VIEW)
        detector_samples = []
        try:
            for item in self.kernel.run(self.runtime.scenario.duration_ticks):
                if isinstance(item, RunSummary):
                    self.summary = item
                    continue
                if item.status != "ok":
                    continue
                sample = self.runtime.normalize(item)
                self.normalized_count += 1
                kind = quantity_of(sample, spaces)
                with self._lock:
                    subs = list(self._subs)
                rendered: dict[str, str | None] = {}
                for sub in subs:
                    if sub.kind is not None and sub.kind != kind:
                        continue
                    if sub.view_id not in rendered:
                        try:
                            view = self.runtime.view(sub.view_id)
                            rendered[sub.view_id] = sample_to_line(apply_view(sample, view, spaces))
                        except TanaError as exc:
                            log.warning("view %s cannot render sample: %s", sub.view_id, exc)
                            rendered[sub.view_id] = None
                    line = rendered[sub.view_id]
                    if line is not None and not sub.push(line):
                        with self._lock:
                            if sub in self._subs:
                                self._subs.remove(sub)
                detector_samples.append(apply_view(sample, detector_view, spaces))
            alarms = detect_falls(detector_samples, spaces, self.runtime.scenario.detector)
            with self._lock:
                self._alarms = alarms
        finally:
            if self.summary is None:
                self.summary = self.kernel.summary()
            self.finished.set()
            self.close_streams()
        return self.summary

    def start(self) -> threading.Thread:
        self._thread = threading.Thread(target=self.run, name="tana-kernel", daemon=True)
        self._thread.start()
        return self._thread

    def shutdown(self, timeout: float | None = 5.0) -> None:
        self.kernel.stop()
        if self._thread is not None:
            self._thread.join(timeout)

    def wait(self, timeout: float | None = None) -> bool:
        return self.finished.wait(timeout)


# ---------------------------------------------------------------------------
# HTTP
# ---------------------------------------------------------------------------

class HubRequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: HubServer

    def log_message(self, fmt, *args) -> None:
        log.debug("%s - " + fmt, self.address_string(), *args)

    def _send_json(self, status: int, body) -> None:
        data = (dumps(body) + "\n").encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _send_error(self, exc: TanaError) -> None:
        self._send_json(exc.http_status, {"error": exc.code, "detail": exc.detail})

    def do_GET(self) -> None:
        url = urlsplit(self.path)
        query = parse_qs(url.query)
        hub = self.server.hub
        try:
            if url.path == "/v1/health":
                self._send_json(200, {"status": "ok"})
            elif url.path == "/v1/spaces":
                self._send_json(200, hub.list_spaces())
            elif url.path == "/v1/admin/sensors":
                self._send_json(200, hub.admin_sensors())
            elif url.path == "/v1/events":
                raw = query.get("since", ["0"])[0]
                try:
                    since = float(raw)
                except ValueError:
                    raise MalformedQuery(f"since={raw!r} is not a number") from None
                self._send_json(200, hub.list_events(since))
            elif url.path == "/v1/stream":
                if "view" not in query:
                    raise MalformedQuery("view parameter is required")
                self._stream(query["view"][0], query.get("kind", [None])[0])
            else:
                self._send_json(404, {"error": "not_found", "detail": url.path})
        except TanaError as exc:
            self._send_error(exc)

    def do_POST(self) -> None:
        url = urlsplit(self.path)
        parts = url.path.strip("/").split("/")
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        try:
            if len(parts) == 4 and parts[:2] == ["v1", "sensors"] and parts[3] == "rate":
                try:
                    doc = json.loads(body or b"{}")
                    rate = doc["rate_hz"]
                except (ValueError, KeyError, TypeError):
                    raise MalformedQuery('body must be {"rate_hz": number}') from None
                self._send_json(202, self.server.hub.post_rate_command(parts[2], rate))
            else:
                self._send_json(404, {"error": "not_found", "detail": url.path})
        except TanaError as exc:
            self._send_error(exc)

    def _stream(self, view_id: str, kind: str | None) -> None:
        hub = self.server.hub
        sub = hub.subscribe(view_id, kind)
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Transfer-Encoding", "chunked")
        self.end_headers()
        try:
            for line in sub.lines():
                data = (line + "\n").encode()
                self.wfile.write(b"%x\r\n%s\r\n" % (len(data), data))
                self.wfile.flush()
            self.wfile.write(b"0\r\n\r\n")
            self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError):
            log.info("subscriber %s disconnected", sub.subscription_id)
        finally:
            hub.unsubscribe(sub)
        self.close_connection = True


class HubServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], hub: Hub) -> None:
        self.hub = hub
        super().__init__(address, HubRequestHandler)


def make_server(hub: Hub, host: str = "127.0.0.1", port: int = 8080) -> HubServer:
    """Bind the HTTP front end; raises ``OSError`` when the address is taken."""
    return HubServer((host, port), hub)
