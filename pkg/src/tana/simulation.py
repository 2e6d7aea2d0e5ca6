"""Scenario files and the synthetic drivers they drive.

A scenario places sensors in a floorplan and scripts falls, music and
footsteps.  Drivers are pure functions of (scenario, tick, per-sensor RNG):
the accelerometer follows a freefall/impact/settle template, the microphone
array reports analytic arrival-time offsets and an inverse-distance loudness,
and the thermometer reports a constant ambient temperature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from tana.detection import DetectorParams
from tana.errors import GeometryError, InvalidDescriptor, SchemaError, UnknownEntity
from tana.kernel import RateCommand, ScheduleEntry, SensorDescriptor
from tana.spaces import (
    ArrayGeometry,
    BodyWorn,
    BuildingGraph,
    Cartesian3,
    GraphNode,
    Room,
    SubjectiveView,
)

EVENT_KINDS = ("fall", "music", "footstep")
# how long each kind of sound stays audible when the event gives no duration
DEFAULT_SOUND_MS = {"fall": 100, "music": 2000, "footstep": 50}
DEFAULT_SCALE = {"accelerometer": "0.001", "thermometer": "0.01", "microphone-array": "0.01"}
DEFAULT_UNIT = {"accelerometer": "g", "thermometer": "celsius", "microphone-array": "us/dB"}


@dataclass(frozen=True)
class AccelWaveformTemplate:
    rest_magnitude: float = 1.0
    freefall_magnitude: float = 0.05
    freefall_duration_ms: float = 300.0
    impact_peak_g: float = 3.0
    impact_width_ms: float = 40.0
    settle_ms: float = 500.0

    def __post_init__(self) -> None:
        for name in ("freefall_duration_ms", "impact_width_ms", "settle_ms"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.freefall_magnitude <= 0.1:
            raise ValueError("freefall_magnitude must lie in [0, 0.1] g")
        if not self.impact_peak_g > self.rest_magnitude:
            raise ValueError("impact_peak_g must exceed rest_magnitude")


@dataclass(frozen=True)
class MicArrayModel:
    mic_positions: tuple[tuple[float, float, float], ...]
    speed_of_sound_mps: float = 343.0
    frame_period_ticks: int = 10
    loudness_floor_db: float = 35.0

    def __post_init__(self) -> None:
        if len(self.mic_positions) < 3:
            raise ValueError("a microphone array needs at least 3 microphones")
        if len(set(self.mic_positions)) == 1:
            raise ValueError("microphones are all coincident")
        if not self.speed_of_sound_mps > 0:
            raise ValueError("speed_of_sound_mps must be positive")

    @property
    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.mic_positions, self.speed_of_sound_mps)


@dataclass(frozen=True)
class ScriptedEvent:
    kind: str
    t_start_ticks: int
    position: tuple[float, float, float]
    loudness_db: float
    entity_id: str | None = None
    duration_ms: float | None = None


@dataclass(frozen=True)
class NoiseParams:
    accel_sigma_g: float = 0.05
    tdoa_jitter_us: float = 20.0


@dataclass(frozen=True)
class SensorSpec:
    """A descriptor, its schedule entry and the kind-specific simulation model."""

    descriptor: SensorDescriptor
    schedule: ScheduleEntry
    template: AccelWaveformTemplate | None = None
    array: MicArrayModel | None = None
    ambient_c: float | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    duration_ticks: int
    tick_quantum_us: int
    floorplan: BuildingGraph
    sensors: tuple[SensorSpec, ...]
    events: tuple[ScriptedEvent, ...] = ()
    noise: NoiseParams = NoiseParams()
    detector: DetectorParams = DetectorParams()
    rate_commands: tuple[RateCommand, ...] = ()
    views: tuple[SubjectiveView, ...] = ()

    def sensor(self, sensor_id: str) -> SensorSpec:
        for s in self.sensors:
            if s.descriptor.sensor_id == sensor_id:
                return s
        raise KeyError(sensor_id)

    def ms_to_ticks(self, ms: float) -> int:
        return round(ms * 1000 / self.tick_quantum_us)

    def with_seed(self, seed: int) -> Scenario:
        return replace(self, seed=seed)


@dataclass(frozen=True)
class GroundTruthEvent:
    kind: str
    time_s: float
    position: tuple[float, float, float]
    entity_id: str | None = None

    def to_json(self) -> dict:
        return {"kind": self.kind, "time_s": self.time_s,
                "position": list(self.position), "entity_id": self.entity_id}


@dataclass(frozen=True)
class MicFrame:
    offsets_us: tuple[float, ...]
    loudness_db: float


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

class _Doc:
    """Tiny typed accessor that reports failures with a dotted path."""

    def __init__(self, data: Any, path: str = "") -> None:
        self.data = data
        self.path = path

    def _sub(self, key) -> str:
        if isinstance(key, int):
            return f"{self.path}[{key}]"
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self.data

    def get(self, key: str, kind, default=..., check: Callable[[Any], bool] | None = None,
            reason: str = "") -> Any:
        path = self._sub(key)
        if key not in self.data:
            if default is ...:
                raise SchemaError(path, "required field missing")
            return default
        value = self.data[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is not None and (not isinstance(value, kind) or isinstance(value, bool)
                                 and kind is not bool):
            raise SchemaError(path, f"expected {getattr(kind, '__name__', kind)}")
        if check is not None and not check(value):
            raise SchemaError(path, reason or "invalid value")
        return value

    def obj(self, key: str, required: bool = True) -> _Doc:
        value = self.get(key, dict, ... if required else {})
        return _Doc(value, self._sub(key))

    def items(self, key: str, required: bool = True) -> list[_Doc]:
        value = self.get(key, list, ... if required else [])
        return [_Doc(v, self._sub(key) + f"[{i}]") for i, v in enumerate(value)]

    def triple(self, key: str) -> tuple[float, float, float]:
        value = self.get(key, list)
        if len(value) != 3 or not all(_is_number(v) for v in value):
            raise SchemaError(self._sub(key), "expected [x, y, z]")
        return float(value[0]), float(value[1]), float(value[2])


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _rational(doc: _Doc, key: str, default: str) -> Fraction:
    raw = doc.data.get(key, default)
    if not (_is_number(raw) or isinstance(raw, str)):
        raise SchemaError(doc._sub(key), "expected a number")
    try:
        return Fraction(str(raw))
    except ValueError:
        raise SchemaError(doc._sub(key), "expected a number") from None


def _load_floorplan(doc: _Doc) -> BuildingGraph:
    rooms = []
    for rdoc in doc.items("rooms"):
        try:
            rooms.append(Room(
                rdoc.get("id", str),
                *(rdoc.get(k, float) for k in
                  ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")),
            ))
        except ValueError as exc:
            raise SchemaError(rdoc.path, str(exc)) from None
    adjacency = []
    for i, pair in enumerate(doc.get("adjacency", list, [])):
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(p, str) for p in pair)):
            raise SchemaError(f"{doc.path}.adjacency[{i}]", "expected [room_id, room_id]")
        adjacency.append((pair[0], pair[1]))
    try:
        return BuildingGraph(tuple(rooms), tuple(adjacency))
    except ValueError as exc:
        raise SchemaError(doc.path, str(exc)) from None


def _load_placement(doc: _Doc, kind: str, array: MicArrayModel | None):
    if not doc.has("placement"):
        if array is not None:
            return Cartesian3(*array.mic_positions[0])
        raise SchemaError(doc._sub("placement"), "required field missing")
    p = doc.obj("placement")
    if p.has("xyz"):
        return Cartesian3(*p.triple("xyz"))
    if p.has("room"):
        return GraphNode(p.get("room", str))
    if p.has("entity"):
        return BodyWorn(p.get("entity", str), p.get("attachment", str, "wrist"))
    raise SchemaError(p.path, "expected one of xyz, room, entity")


def _load_sensor(doc: _Doc, index: int, sound_spaces: list[str]) -> SensorSpec:
    kind = doc.get("kind", str, check=lambda k: k in ("accelerometer", "microphone-array",
                                                          "thermometer"),
                   reason="unknown sensor kind")
    sensor_id = doc.get("sensor_id", str, check=bool, reason="must be non-empty")
    template = array = ambient = None
    value_space = doc.get("value_space", str, "")
    if kind == "accelerometer":
        t = doc.obj("template", required=False)
        try:
            template = AccelWaveformTemplate(**{k: float(v) for k, v in t.data.items()})
        except (TypeError, ValueError) as exc:
            raise SchemaError(t.path or doc._sub("template"), str(exc)) from None
    elif kind == "microphone-array":
        mics = []
        for i, m in enumerate(doc.get("mic_positions", list)):
            if not (isinstance(m, list) and len(m) == 3 and all(_is_number(v) for v in m)):
                raise SchemaError(f"{doc._sub('mic_positions')}[{i}]", "expected [x, y, z]")
            mics.append(tuple(float(v) for v in m))
        try:
            array = MicArrayModel(
                tuple(mics),
                doc.get("speed_of_sound_mps", float, 343.0),
                doc.get("period_ticks", int),
                doc.get("loudness_floor_db", float, 35.0),
            )
        except ValueError as exc:
            raise SchemaError(doc._sub("mic_positions"), str(exc)) from None
        if not value_space:
            value_space = "sound-tdoa" if not sound_spaces else f"sound-tdoa-{len(sound_spaces) + 1}"
        sound_spaces.append(value_space)
    else:
        ambient = doc.get("ambient_c", float, 21.0)

    default_channels = {"accelerometer": 3, "thermometer": 1}.get(
        kind, len(array.mic_positions) if array else 3)
    try:
        descriptor = SensorDescriptor(
            sensor_id=sensor_id,
            kind=kind,
            channel_count=doc.get("channel_count", int, default_channels),
            native_unit=doc.get("native_unit", str, DEFAULT_UNIT[kind]),
            scale=_rational(doc, "scale", DEFAULT_SCALE[kind]),
            offset=_rational(doc, "offset", "0"),
            placement=_load_placement(doc, kind, array),
            min_period_ticks=doc.get("min_period_ticks", int, 1),
            max_period_ticks=doc.get("max_period_ticks", int, 1_000_000),
            value_space_id=value_space,
        )
    except InvalidDescriptor as exc:
        raise SchemaError(doc._sub(exc.field), str(exc)) from None
    if array is not None and descriptor.channel_count != len(array.mic_positions):
        raise SchemaError(doc._sub("channel_count"), "must equal the number of microphones")
    period = doc.get("period_ticks", int, check=lambda p: p >= 1, reason="must be >= 1")
    phase = doc.get("phase_ticks", int, 0, check=lambda p: 0 <= p < period,
                    reason="must satisfy 0 <= phase < period")
    entry = ScheduleEntry(sensor_id, period, phase, doc.get("enabled", bool, True))
    return SensorSpec(descriptor, entry, template, array, ambient)


def load_scenario(document: str | bytes | dict) -> Scenario:
    """Parse and validate a scenario document (JSON text or decoded dict)."""
    if isinstance(document, (str, bytes)):
        try:
            data = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"invalid JSON: {exc}") from None
    else:
        data = document
    if not isinstance(data, dict):
        raise SchemaError("$", "scenario must be a JSON object")
    doc = _Doc(data)

    name = doc.get("name", str)
    seed = doc.get("seed", int, check=lambda s: 0 <= s < 2**64, reason="must be a 64-bit integer")
    duration = doc.get("duration_ticks", int, check=lambda d: d >= 1, reason="must be >= 1")
    quantum = doc.get("tick_quantum_us", int, 1000, check=lambda q: q >= 1, reason="must be >= 1")
    floorplan = _load_floorplan(doc.obj("floorplan"))

    sound_spaces: list[str] = []
    sensors = [_load_sensor(s, i, sound_spaces) for i, s in enumerate(doc.items("sensors"))]
    ids = [s.descriptor.sensor_id for s in sensors]
    for i, sid in enumerate(ids):
        if sid in ids[:i]:
            raise SchemaError(f"sensors[{i}].sensor_id", "duplicate sensor id")

    events = []
    for i, e in enumerate(doc.items("events", required=False)):
        kind = e.get("kind", str, check=lambda k: k in EVENT_KINDS, reason="unknown event kind")
        t0 = e.get("t_start_ticks", int, check=lambda t: 0 <= t < duration,
                   reason="must lie in [0, duration_ticks)")
        pos = e.triple("position")
        loud = e.get("loudness_db", float, check=lambda v: 0 <= v <= 140,
                     reason="must lie in [0, 140]")
        entity = e.get("entity_id", str, None)
        if kind == "fall" and not entity:
            raise SchemaError(e._sub("entity_id"), "fall events need an entity_id")
        dur = e.get("duration_ms", float, None, check=lambda v: v > 0, reason="must be positive")
        if floorplan.locate(*pos) is None:
            raise GeometryError(f"events[{i}].position {list(pos)} is outside the floorplan")
        events.append(ScriptedEvent(kind, t0, pos, loud, entity, dur))

    n = doc.obj("noise", required=False)
    noise = NoiseParams(
        n.get("accel_sigma_g", float, 0.05, check=lambda v: v >= 0, reason="must be >= 0"),
        n.get("tdoa_jitter_us", float, 20.0, check=lambda v: v >= 0, reason="must be >= 0"),
    )

    det = doc.obj("detector", required=False)
    try:
        detector = DetectorParams.from_json(det.data)
    except (TypeError, ValueError) as exc:
        raise SchemaError(det.path or "detector", str(exc)) from None

    commands = []
    for c in doc.items("rate_commands", required=False):
        sid = c.get("sensor_id", str, check=lambda s: s in ids, reason="unknown sensor")
        commands.append(RateCommand(
            sid,
            c.get("new_period_ticks", int, check=lambda p: p >= 1, reason="must be >= 1"),
            c.get("issued_at_tick", int, check=lambda t: t >= 0, reason="must be >= 0"),
        ))

    views = []
    for v in doc.items("views", required=False):
        values = v.get("values", dict, {})
        views.append(SubjectiveView(v.get("view_id", str), v.get("physical", str, None),
                                    dict(values)))

    return Scenario(name, seed, duration, quantum, floorplan, tuple(sensors),
                    tuple(sorted(events, key=lambda ev: ev.t_start_ticks)),
                    noise, detector, tuple(commands), tuple(views))


def load_scenario_file(path: str | Path) -> Scenario:
    return load_scenario(Path(path).read_text())


# ---------------------------------------------------------------------------
# signal models
# ---------------------------------------------------------------------------

def sensor_rng(scenario: Scenario, index: int) -> np.random.Generator:
    """Independent stream for the sensor declared at ``index``.

    Keyed by declaration position rather than ``sensor_id`` so renaming a
    sensor leaves its noise untouched and appending one perturbs nobody.
    """
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(scenario.seed, spawn_key=(index,))))


def _template_for(scenario: Scenario, entity_id: str) -> AccelWaveformTemplate:
    for s in scenario.sensors:
        p = s.descriptor.placement
        if s.template is not None and isinstance(p, BodyWorn) and p.entity_id == entity_id:
            return s.template
    return AccelWaveformTemplate()


def impact_tick(scenario: Scenario, event: ScriptedEvent) -> int:
    """Tick of the impact peak (end of freefall) of a fall event."""
    template = _template_for(scenario, event.entity_id or "")
    return event.t_start_ticks + scenario.ms_to_ticks(template.freefall_duration_ms)


def accel_truth_g(scenario: Scenario, entity_id: str, tick: int,
                  template: AccelWaveformTemplate | None = None) -> tuple[float, float, float]:
    """Noise-free acceleration in g for ``entity_id`` at ``tick``."""
    template = template or _template_for(scenario, entity_id)
    fall = None
    for ev in scenario.events:
        if ev.kind == "fall" and ev.entity_id == entity_id and ev.t_start_ticks <= tick:
            fall = ev
    if fall is None:
        return 0.0, 0.0, template.rest_magnitude
    peak = fall.t_start_ticks + scenario.ms_to_ticks(template.freefall_duration_ms)
    width = max(1, scenario.ms_to_ticks(template.impact_width_ms))
    if tick < peak:
        return 0.0, 0.0, template.freefall_magnitude
    if tick < peak + width:
        frac = (tick - peak) / width
        mag = template.impact_peak_g - (template.impact_peak_g - template.rest_magnitude) * frac
        return 0.0, 0.0, mag
    # settled and lying: gravity along the device x axis
    return template.rest_magnitude, 0.0, 0.0


def _to_counts(value: float, descriptor: SensorDescriptor) -> int:
    return round((Fraction(value) - descriptor.offset) / descriptor.scale)


def synth_accel_sample(
    scenario: Scenario,
    entity_id: str,
    tick: int,
    rng: np.random.Generator,
    sensor_id: str | None = None,
) -> tuple[int, int, int]:
    """Raw counts of the accelerometer worn by ``entity_id``."""
    spec = None
    for s in scenario.sensors:
        p = s.descriptor.placement
        if (s.descriptor.kind == "accelerometer" and isinstance(p, BodyWorn)
                and p.entity_id == entity_id
                and (sensor_id is None or s.descriptor.sensor_id == sensor_id)):
            spec = s
            break
    if spec is None:
        raise UnknownEntity(entity_id)
    if not 0 <= tick < scenario.duration_ticks:
        raise ValueError("tick outside the scenario")
    base = accel_truth_g(scenario, entity_id, tick, spec.template)
    # always draw so the stream position depends only on the number of calls
    noise = rng.normal(0.0, 1.0, 3) * scenario.noise.accel_sigma_g
    return tuple(_to_counts(float(b + n), spec.descriptor) for b, n in zip(base, noise))


def _distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


def sound_window(scenario: Scenario, event: ScriptedEvent) -> tuple[int, int]:
    """Half-open tick interval during which ``event`` is audible."""
    start = impact_tick(scenario, event) if event.kind == "fall" else event.t_start_ticks
    ms = event.duration_ms if event.duration_ms is not None else DEFAULT_SOUND_MS[event.kind]
    return start, start + max(1, scenario.ms_to_ticks(ms))


def tdoa_offsets_us(mic_positions, source, speed_of_sound_mps: float) -> tuple[float, ...]:
    d0 = _distance(mic_positions[0], source)
    return tuple((_distance(m, source) - d0) / speed_of_sound_mps * 1e6 for m in mic_positions)


def received_loudness_db(event_db: float, mic0, source) -> float:
    """Inverse-distance attenuation from the 1 m reference level."""
    return event_db - 20.0 * math.log10(_distance(mic0, source) / 1.0)


def synth_mic_frame(
    scenario: Scenario,
    tick: int,
    rng: np.random.Generator,
    array: MicArrayModel | None = None,
) -> MicFrame:
    """Analytic TDOA frame (before integer rounding)."""
    if array is None:
        array = next(s.array for s in scenario.sensors if s.array is not None)
    mics = array.mic_positions
    jitter = rng.normal(0.0, 1.0, len(mics) - 1) * scenario.noise.tdoa_jitter_us
    best = None
    for ev in scenario.events:
        lo, hi = sound_window(scenario, ev)
        if lo <= tick < hi:
            level = received_loudness_db(ev.loudness_db, mics[0], ev.position)
            if best is None or level > best[0]:
                best = (level, ev)
    if best is None:
        return MicFrame((0.0,) * len(mics), array.loudness_floor_db)
    level, ev = best
    exact = tdoa_offsets_us(mics, ev.position, array.speed_of_sound_mps)
    offsets = (0.0,) + tuple(o + j for o, j in zip(exact[1:], jitter))
    return MicFrame(offsets, level)


def synth_temp_sample(scenario: Scenario, tick: int, sensor_id: str | None = None) -> int:
    spec = next(s for s in scenario.sensors
                if s.descriptor.kind == "thermometer"
                and (sensor_id is None or s.descriptor.sensor_id == sensor_id))
    return round((Fraction(repr(float(spec.ambient_c))) - spec.descriptor.offset)
                 / spec.descriptor.scale)


def ground_truth_events(scenario: Scenario) -> list[GroundTruthEvent]:
    q = scenario.tick_quantum_us
    return [
        GroundTruthEvent(ev.kind, float(Fraction(ev.t_start_ticks * q, 1_000_000)),
                         ev.position, ev.entity_id)
        for ev in sorted(scenario.events, key=lambda e: e.t_start_ticks)
    ]


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def make_driver(scenario: Scenario, index: int) -> Callable[[int], tuple[int, ...]]:
    """Driver callable for the sensor declared at ``index``."""
    spec = scenario.sensors[index]
    desc = spec.descriptor
    rng = sensor_rng(scenario, index)
    if desc.kind == "accelerometer":
        if not isinstance(desc.placement, BodyWorn):
            entity = None
        else:
            entity = desc.placement.entity_id

        def accel(tick: int) -> tuple[int, ...]:
            if entity is None:
                noise = rng.normal(0.0, 1.0, 3) * scenario.noise.accel_sigma_g
                base = (0.0, 0.0, spec.template.rest_magnitude)
                return tuple(_to_counts(float(b + n), desc) for b, n in zip(base, noise))
            return synth_accel_sample(scenario, entity, tick, rng, desc.sensor_id)

        return accel
    if desc.kind == "microphone-array":
        def mic(tick: int) -> tuple[int, ...]:
            frame = synth_mic_frame(scenario, tick, rng, spec.array)
            return (_to_counts(frame.loudness_db, desc),
                    *(_to_counts(o, desc) for o in frame.offsets_us[1:]))

        return mic

    counts = synth_temp_sample(scenario, 0, desc.sensor_id)
    return lambda tick: (counts,)
