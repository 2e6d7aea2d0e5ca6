"""Time-driven acquisition kernel.

Time is a logical tick counter.  Every registered driver fires on a
``phase + k * period`` grid, all due drivers of a tick fire in ascending
``sensor_id`` order, and rate commands take effect at the entry's next
scheduled fire so the already-emitted stream is never rewritten.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Sequence, Union

from tana.errors import (
    DisabledEntry,
    DuplicateEntry,
    DuplicateSensorId,
    InvalidDescriptor,
    PeriodOutOfBounds,
    QueueOverflow,
    UnknownSensor,
)
from tana.spaces import BodyWorn, Cartesian3, GraphNode, Position

log = logging.getLogger(__name__)

SENSOR_KINDS = ("accelerometer", "microphone-array", "thermometer")
DEFAULT_VALUE_SPACE = {
    "accelerometer": "accel-g",
    "thermometer": "celsius",
    "microphone-array": "sound-tdoa",
}

Driver = Callable[[int], Sequence[int]]


class PacingMode(str, Enum):
    FAST = "as-fast-as-possible"
    REALTIME = "real-time-paced"


@dataclass
class TickClock:
    """Logical clock; ``current_tick`` is the next tick the kernel will execute."""

    tick_quantum_us: int = 1000
    pacing_mode: PacingMode = PacingMode.FAST
    current_tick: int = 0

    def __post_init__(self) -> None:
        if self.tick_quantum_us < 1:
            raise ValueError("tick_quantum_us must be >= 1")
        self._origin: float | None = None

    def advance(self) -> int:
        self.current_tick += 1
        return self.current_tick

    def seconds(self, tick: int | None = None) -> float:
        tick = self.current_tick if tick is None else tick
        return float(Fraction(tick * self.tick_quantum_us, 1_000_000))

    def pace(self, tick: int) -> None:
        """Sleep until the wall-clock boundary of ``tick`` (real-time mode only)."""
        if self.pacing_mode is not PacingMode.REALTIME:
            return
        now = time.monotonic()
        if self._origin is None:
            self._origin = now
        delay = self._origin + tick * self.tick_quantum_us / 1e6 - now
        if delay > 0:
            time.sleep(delay)


def _as_fraction(value, name: str) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        # decimal literal semantics: 0.01 means 1/100, not its binary neighbour
        return Fraction(repr(value))
    try:
        return Fraction(value)
    except (TypeError, ValueError):
        raise InvalidDescriptor(name, f"not a rational number: {value!r}") from None


@dataclass(frozen=True)
class SensorDescriptor:
    sensor_id: str
    kind: str
    channel_count: int
    native_unit: str
    scale: Fraction
    offset: Fraction = Fraction(0)
    placement: Position = field(default_factory=lambda: Cartesian3(0.0, 0.0, 0.0))
    min_period_ticks: int = 1
    max_period_ticks: int = 1_000_000
    value_space_id: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.sensor_id, str) or not self.sensor_id:
            raise InvalidDescriptor("sensor_id", "must be a non-empty string")
        if self.kind not in SENSOR_KINDS:
            raise InvalidDescriptor("kind", f"unknown sensor kind {self.kind!r}")
        object.__setattr__(self, "scale", _as_fraction(self.scale, "scale"))
        object.__setattr__(self, "offset", _as_fraction(self.offset, "offset"))
        if self.scale == 0:
            raise InvalidDescriptor("scale", "must be non-zero")
        if not isinstance(self.channel_count, int) or self.channel_count < 1:
            raise InvalidDescriptor("channel_count", "must be a positive integer")
        expected = {"accelerometer": 3, "thermometer": 1}.get(self.kind)
        if expected is not None and self.channel_count != expected:
            raise InvalidDescriptor("channel_count", f"{self.kind} has {expected} channel(s)")
        if self.kind == "microphone-array" and self.channel_count < 3:
            raise InvalidDescriptor("channel_count", "a microphone array needs >= 3 microphones")
        if self.min_period_ticks < 1 or self.max_period_ticks < 1:
            raise InvalidDescriptor("min_period_ticks", "period bounds must be positive")
        if self.min_period_ticks > self.max_period_ticks:
            raise InvalidDescriptor("min_period_ticks", "exceeds max_period_ticks")
        if not isinstance(self.placement, (Cartesian3, GraphNode, BodyWorn)):
            raise InvalidDescriptor("placement", "not a position")
        if not self.value_space_id:
            object.__setattr__(self, "value_space_id", DEFAULT_VALUE_SPACE[self.kind])

    def to_json(self) -> dict:
        return {
            "sensor_id": self.sensor_id,
            "kind": self.kind,
            "channel_count": self.channel_count,
            "native_unit": self.native_unit,
            "scale": str(self.scale),
            "offset": str(self.offset),
            "placement": self.placement.to_wire(),
            "min_period_ticks": self.min_period_ticks,
            "max_period_ticks": self.max_period_ticks,
            "value_space": self.value_space_id,
        }


@dataclass(frozen=True)
class ScheduleEntry:
    """One fire grid. ``effective_from_tick`` > 0 only for segments created by rate commands."""

    sensor_id: str
    period_ticks: int
    phase_ticks: int = 0
    enabled: bool = True
    effective_from_tick: int = 0

    def is_due(self, tick: int) -> bool:
        return (
            self.enabled
            and tick >= self.effective_from_tick
            and (tick - self.phase_ticks) % self.period_ticks == 0
        )


@dataclass(frozen=True)
class RawSample:
    sensor_id: str
    tick: int
    sequence_no: int
    values: tuple[int, ...]
    status: str = "ok"  # "ok" | "driver-fault"

    def to_json(self) -> dict:
        return {
            "type": "raw_sample",
            "sensor_id": self.sensor_id,
            "tick": self.tick,
            "sequence_no": self.sequence_no,
            "values": list(self.values),
            "status": self.status,
        }


@dataclass(frozen=True)
class RateCommand:
    sensor_id: str
    new_period_ticks: int
    issued_at_tick: int = 0


@dataclass
class RunSummary:
    ticks_elapsed: int
    samples: dict[str, int]
    faults: dict[str, int]
    dropped: dict[str, int] = field(default_factory=dict)

    def to_json(self, anonymous: bool = False) -> dict:
        if anonymous:
            return {
                "type": "run_summary",
                "ticks_elapsed": self.ticks_elapsed,
                "samples_total": sum(self.samples.values()),
                "faults_total": sum(self.faults.values()),
            }
        return {
            "type": "run_summary",
            "ticks_elapsed": self.ticks_elapsed,
            "samples": dict(sorted(self.samples.items())),
            "faults": dict(sorted(self.faults.items())),
            "dropped": dict(sorted(self.dropped.items())),
        }


StreamItem = Union[RawSample, RunSummary]


# ---------------------------------------------------------------------------
# registry and schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegistrationHandle:
    sensor_id: str
    index: int


class SensorRegistry:
    def __init__(self) -> None:
        self._descriptors: dict[str, SensorDescriptor] = {}
        self._drivers: dict[str, Driver] = {}

    def register_driver(self, descriptor: SensorDescriptor, driver: Driver) -> RegistrationHandle:
        if not isinstance(descriptor, SensorDescriptor):
            raise InvalidDescriptor("descriptor", "not a SensorDescriptor")
        if descriptor.sensor_id in self._descriptors:
            raise DuplicateSensorId(descriptor.sensor_id)
        self._descriptors[descriptor.sensor_id] = descriptor
        self._drivers[descriptor.sensor_id] = driver
        return RegistrationHandle(descriptor.sensor_id, len(self._descriptors) - 1)

    def descriptor(self, sensor_id: str) -> SensorDescriptor:
        try:
            return self._descriptors[sensor_id]
        except KeyError:
            raise UnknownSensor(sensor_id) from None

    def driver(self, sensor_id: str) -> Driver:
        self.descriptor(sensor_id)
        return self._drivers[sensor_id]

    def descriptors(self) -> list[SensorDescriptor]:
        return list(self._descriptors.values())

    def __contains__(self, sensor_id: object) -> bool:
        return sensor_id in self._descriptors

    def __len__(self) -> int:
        return len(self._descriptors)


def _check_period(period: int, descriptor: SensorDescriptor) -> None:
    if not isinstance(period, int) or period < 1:
        raise PeriodOutOfBounds(f"{descriptor.sensor_id}: period must be a positive integer")
    if not descriptor.min_period_ticks <= period <= descriptor.max_period_ticks:
        raise PeriodOutOfBounds(
            f"{descriptor.sensor_id}: period {period} outside "
            f"[{descriptor.min_period_ticks}, {descriptor.max_period_ticks}]")


class SamplingSchedule:
    """Validated schedule.  Each sensor owns a list of segments ordered by
    ``effective_from_tick``; the last one governs the future."""

    def __init__(self, segments: dict[str, list[ScheduleEntry]],
                 descriptors: dict[str, SensorDescriptor]) -> None:
        self._segments = segments
        self._descriptors = descriptors
        self.sensor_ids = sorted(segments)

    def entry(self, sensor_id: str) -> ScheduleEntry:
        """Latest segment for ``sensor_id`` (the one governing future fires)."""
        try:
            return self._segments[sensor_id][-1]
        except KeyError:
            raise UnknownSensor(sensor_id) from None

    def segments(self, sensor_id: str) -> list[ScheduleEntry]:
        self.entry(sensor_id)
        return list(self._segments[sensor_id])

    def descriptor(self, sensor_id: str) -> SensorDescriptor:
        self.entry(sensor_id)
        return self._descriptors[sensor_id]

    def segment_at(self, sensor_id: str, tick: int) -> ScheduleEntry:
        segs = self._segments[sensor_id]
        for seg in reversed(segs):
            if tick >= seg.effective_from_tick:
                return seg
        return segs[0]

    def is_due(self, sensor_id: str, tick: int) -> bool:
        return self.segment_at(sensor_id, tick).is_due(tick)

    def due(self, tick: int) -> list[str]:
        return [sid for sid in self.sensor_ids if self.is_due(sid, tick)]

    def next_fire(self, sensor_id: str, now: int) -> int:
        """First fire strictly after ``now`` across all segments."""
        segs = self._segments.get(sensor_id)
        if segs is None:
            raise UnknownSensor(sensor_id)
        for i, seg in enumerate(segs):
            end = segs[i + 1].effective_from_tick if i + 1 < len(segs) else None
            if end is not None and end <= now + 1:
                continue
            if not seg.enabled:
                if end is None:
                    raise DisabledEntry(sensor_id)
                continue
            t = next_fire_tick(seg, now)
            if end is None or t < end:
                return t
        raise DisabledEntry(sensor_id)  # pragma: no cover - last segment always answers

    def frequency_hz(self, sensor_id: str, tick_quantum_us: int) -> float:
        return 1e6 / (self.entry(sensor_id).period_ticks * tick_quantum_us)

    def with_segments(self, sensor_id: str, segments: list[ScheduleEntry]) -> SamplingSchedule:
        merged = dict(self._segments)
        merged[sensor_id] = segments
        return SamplingSchedule(merged, self._descriptors)


def build_schedule(entries: Iterable[ScheduleEntry], registry: SensorRegistry) -> SamplingSchedule:
    segments: dict[str, list[ScheduleEntry]] = {}
    descriptors: dict[str, SensorDescriptor] = {}
    for entry in entries:
        if entry.sensor_id not in registry:
            raise UnknownSensor(entry.sensor_id)
        if entry.sensor_id in segments:
            raise DuplicateEntry(entry.sensor_id)
        desc = registry.descriptor(entry.sensor_id)
        _check_period(entry.period_ticks, desc)
        if not 0 <= entry.phase_ticks < entry.period_ticks:
            raise InvalidDescriptor("phase_ticks", "must satisfy 0 <= phase < period")
        segments[entry.sensor_id] = [replace(entry, effective_from_tick=0)]
        descriptors[entry.sensor_id] = desc
    return SamplingSchedule(segments, descriptors)


def next_fire_tick(entry: ScheduleEntry, now: int) -> int:
    """Smallest ``t > now`` on the entry's grid (and not before it takes effect)."""
    if not entry.enabled:
        raise DisabledEntry(entry.sensor_id)
    p, phase = entry.period_ticks, entry.phase_ticks
    lo = max(now + 1, entry.effective_from_tick)
    if lo <= phase:
        return phase
    return phase + -(-(lo - phase) // p) * p


def expected_sample_count(period_ticks: int, phase_ticks: int, duration_ticks: int) -> int:
    """Number of grid points ``phase + k * period`` below ``duration_ticks``."""
    if period_ticks < 1 or not 0 <= phase_ticks < period_ticks:
        raise ValueError("need period >= 1 and 0 <= phase < period")
    if duration_ticks <= phase_ticks:
        return 0
    return (duration_ticks - 1 - phase_ticks) // period_ticks + 1


def apply_rate_command(schedule: SamplingSchedule, cmd: RateCommand, now: int) -> SamplingSchedule:
    """Switch the entry to a new period starting at its next fire after ``now``.

    The switch fire happens where the old grid put it; the new grid is
    re-anchored on it (``phase = switch % new_period``).
    """
    current = schedule.entry(cmd.sensor_id)
    _check_period(cmd.new_period_ticks, schedule.descriptor(cmd.sensor_id))
    try:
        switch = schedule.next_fire(cmd.sensor_id, now)
    except DisabledEntry:
        switch = now + 1
    kept = [s for s in schedule.segments(cmd.sensor_id) if s.effective_from_tick < switch]
    new_seg = ScheduleEntry(
        cmd.sensor_id,
        cmd.new_period_ticks,
        switch % cmd.new_period_ticks,
        current.enabled,
        switch,
    )
    return schedule.with_segments(cmd.sensor_id, kept + [new_seg])


# ---------------------------------------------------------------------------
# queues
# ---------------------------------------------------------------------------

class CommandQueue:
    """Many-writer queue of rate commands, drained by the tick loop."""

    def __init__(self, commands: Iterable[RateCommand] = ()) -> None:
        self._lock = threading.Lock()
        self._items: list[RateCommand] = list(commands)

    def put(self, cmd: RateCommand) -> None:
        with self._lock:
            self._items.append(cmd)

    def drain(self, tick: int) -> list[RateCommand]:
        """Remove and return commands issued at or before ``tick``, in arrival order."""
        with self._lock:
            ready = [c for c in self._items if c.issued_at_tick <= tick]
            if ready:
                self._items = [c for c in self._items if c.issued_at_tick > tick]
            return ready

    def pending(self, sensor_id: str) -> list[RateCommand]:
        with self._lock:
            return [c for c in self._items if c.sensor_id == sensor_id]

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


OVERFLOW_POLICIES = ("block", "drop-newest", "fail")

_CLOSED = object()


class SampleQueue:
    """Bounded FIFO between the tick loop and its consumers."""

    def __init__(self, capacity: int = 4096, policy: str = "block") -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if policy not in OVERFLOW_POLICIES:
            raise ValueError(f"policy must be one of {OVERFLOW_POLICIES}")
        self.capacity = capacity
        self.policy = policy
        self.dropped = 0
        self._items: deque = deque()
        self._cond = threading.Condition()

    def put(self, item, force: bool = False) -> bool:
        """Enqueue ``item``; returns False when it was dropped."""
        with self._cond:
            if not force and len(self._items) >= self.capacity:
                if self.policy == "fail":
                    raise QueueOverflow(f"output queue full ({self.capacity})")
                if self.policy == "drop-newest":
                    self.dropped += 1
                    return False
                while len(self._items) >= self.capacity:
                    self._cond.wait()
            self._items.append(item)
            self._cond.notify_all()
            return True

    def close(self) -> None:
        with self._cond:
            self._items.append(_CLOSED)
            self._cond.notify_all()

    def get(self, timeout: float | None = None):
        with self._cond:
            if not self._cond.wait_for(lambda: self._items, timeout):
                raise TimeoutError("queue empty")
            item = self._items[0]
            if item is _CLOSED:
                return None
            self._items.popleft()
            self._cond.notify_all()
            return item

    def __iter__(self) -> Iterator:
        while True:
            item = self.get()
            if item is None:
                return
            yield item

    def __len__(self) -> int:
        with self._cond:
            return sum(1 for i in self._items if i is not _CLOSED)


# ---------------------------------------------------------------------------
# the tick loop
# ---------------------------------------------------------------------------

class AcquisitionKernel:
    """Runs the tick loop over a registry and a schedule.

    ``lock`` is held while a tick is executed; anything that must observe a
    consistent (clock, schedule) pair, such as the rate-command endpoint,
    takes it too.
    """

    def __init__(
        self,
        registry: SensorRegistry,
        schedule: SamplingSchedule,
        clock: TickClock | None = None,
        commands: CommandQueue | None = None,
    ) -> None:
        self.registry = registry
        self.schedule = schedule
        self.clock = clock or TickClock()
        self.commands = commands or CommandQueue()
        self.lock = threading.RLock()
        self.applied: list[tuple[RateCommand, int]] = []
        self._ok = {sid: 0 for sid in schedule.sensor_ids}
        self._faults = {sid: 0 for sid in schedule.sensor_ids}
        self._stop = threading.Event()

    def stop(self) -> None:
        self._stop.set()

    def submit_rate_command(self, sensor_id: str, new_period_ticks: int) -> tuple[RateCommand, int]:
        """Validate and enqueue a command for the next tick boundary.

        Returns the queued command and the tick at which the new period takes
        over, computed against the same schedule the tick loop will see.
        """
        with self.lock:
            cmd = RateCommand(sensor_id, new_period_ticks, self.clock.current_tick)
            # pending commands for the same sensor must be part of the preview
            preview = self.schedule
            for pending in self.commands.pending(sensor_id):
                preview = apply_rate_command(preview, pending, cmd.issued_at_tick)
            updated = apply_rate_command(preview, cmd, cmd.issued_at_tick)
            self.commands.put(cmd)
            return cmd, updated.entry(sensor_id).effective_from_tick

    def _fire(self, sensor_id: str, tick: int) -> RawSample:
        desc = self.registry.descriptor(sensor_id)
        seq = self._ok[sensor_id]
        try:
            values = tuple(int(v) for v in self.registry.driver(sensor_id)(tick))
            if len(values) != desc.channel_count:
                raise ValueError(f"driver returned {len(values)} channels")
        except Exception as exc:  # driver faults never abort the run
            log.debug("driver %s faulted at tick %d: %s", sensor_id, tick, exc)
            self._faults[sensor_id] += 1
            return RawSample(sensor_id, tick, seq, (), "driver-fault")
        self._ok[sensor_id] = seq + 1
        return RawSample(sensor_id, tick, seq, values)

    def step(self) -> list[RawSample]:
        """Execute one tick and return its samples."""
        with self.lock:
            t = self.clock.current_tick
            for cmd in self.commands.drain(t):
                try:
                    self.schedule = apply_rate_command(self.schedule, cmd, t)
                    self.applied.append((cmd, self.schedule.entry(cmd.sensor_id).effective_from_tick))
                except Exception as exc:
                    log.warning("rejected rate command %s: %s", cmd, exc)
            out = [self._fire(sid, t) for sid in self.schedule.due(t)]
            self.clock.advance()
            return out

    def summary(self) -> RunSummary:
        return RunSummary(self.clock.current_tick, dict(self._ok), dict(self._faults))

    def run(self, duration_ticks: int) -> Iterator[StreamItem]:
        """Yield every sample of ticks ``[0, duration)`` then a :class:`RunSummary`."""
        if duration_ticks < 0:
            raise ValueError("duration_ticks must be >= 0")
        while self.clock.current_tick < duration_ticks and not self._stop.is_set():
            self.clock.pace(self.clock.current_tick)
            yield from self.step()
        yield self.summary()

    def run_into(self, queue: SampleQueue, duration_ticks: int) -> RunSummary:
        summary = None
        try:
            for item in self.run(duration_ticks):
                if isinstance(item, RunSummary):
                    summary = item
                else:
                    queue.put(item)
            summary.dropped = {"*": queue.dropped} if queue.dropped else {}
            queue.put(summary, force=True)
        finally:
            queue.close()
        return summary


def run_acquisition(
    schedule: SamplingSchedule,
    registry: SensorRegistry,
    duration_ticks: int,
    commands: Iterable[RateCommand] | CommandQueue = (),
    clock: TickClock | None = None,
) -> Iterator[StreamItem]:
    """Functional entry point around :class:`AcquisitionKernel`."""
    if not isinstance(commands, CommandQueue):
        commands = CommandQueue(commands)
    kernel = AcquisitionKernel(registry, schedule, clock, commands)
    return kernel.run(duration_ticks)
