"""Fall detection over normalized samples.

Accelerometer streams give freefall-then-impact events, microphone-array
frames give loud sounds whose source height is recovered by a TDOA grid
search, and the two are fused: an impact with a low sound nearby in time is a
corroborated fall, loud sounds in mid air on their own are ignored.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterable, Sequence

import numpy as np

from tana import _accel
from tana.errors import DegenerateArray, EmptyVolume, WrongPayloadSpace
from tana.spaces import (
    Accel3,
    BodyWorn,
    BuildingGraph,
    GraphNode,
    NormalizedSample,
    SoundFrame,
    SpaceRegistry,
)

CORROBORATED = "corroborated"
ACCEL_ONLY = "accel_only"


@dataclass(frozen=True)
class DetectorParams:
    theta_freefall_g: float = 0.3
    d_freefall_ms: float = 200.0
    theta_impact_g: float = 2.5
    max_gap_ms: float = 800.0
    theta_loud_db: float = 70.0
    refractory_ms: float = 500.0
    h_floor_m: float = 0.5
    fuse_window_s: float = 1.0
    grid_resolution_m: float = 0.025
    accel_only_policy: str = "suspected"  # or "suppressed"

    def __post_init__(self) -> None:
        for f in fields(self):
            if f.name == "accel_only_policy":
                continue
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")
        if not self.theta_freefall_g < 1.0 < self.theta_impact_g:
            raise ValueError("need theta_freefall_g < 1 < theta_impact_g")
        if self.accel_only_policy not in ("suspected", "suppressed"):
            raise ValueError("accel_only_policy must be 'suspected' or 'suppressed'")

    @classmethod
    def from_json(cls, doc: dict) -> DetectorParams:
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown detector parameter(s): {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class ImpactEvent:
    t_s: float
    entity_id: str
    peak_magnitude_g: float
    freefall_observed: bool = True


@dataclass(frozen=True)
class SoundEvent:
    t_s: float
    loudness_db: float
    offsets_us: tuple[float, ...] = field(repr=False, default=())
    space_id: str = ""
    estimated_height_m: float | None = None
    residual_us: float | None = None
    room: str | None = None


@dataclass(frozen=True)
class FallAlarm:
    t_s: float
    entity_id: str
    confidence: str
    room: str | None = None

    def to_json(self) -> dict:
        return {
            "type": "fall_alarm",
            "t_s": self.t_s,
            "entity": self.entity_id,
            "confidence": self.confidence,
            "room": self.room,
        }


@dataclass(frozen=True)
class SearchVolume:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def cells(self, resolution: float) -> tuple[int, int, int]:
        if resolution <= 0:
            raise EmptyVolume("grid resolution must be positive")
        out = []
        for a, b in zip(self.lo, self.hi):
            if not b > a:
                raise EmptyVolume(f"degenerate extent [{a}, {b}]")
            out.append(max(1, int((b - a) / resolution + 1e-9)))
        return out[0], out[1], out[2]


# ---------------------------------------------------------------------------
# accelerometer
# ---------------------------------------------------------------------------

def detect_impacts(
    samples: Sequence[NormalizedSample],
    params: DetectorParams = DetectorParams(),
    accel_space_id: str = "accel-g",
) -> list[ImpactEvent]:
    """Freefall-gated impacts for one entity's time-ordered accelerometer stream."""
    if not samples:
        return []
    for s in samples:
        if not isinstance(s.payload, Accel3) or s.payload.space_id != accel_space_id:
            raise WrongPayloadSpace(f"expected Accel3 in {accel_space_id}, got {s.payload.space_id}")
    entity = _entity_of(samples[0])
    t = np.array([s.time.t_s for s in samples], dtype=np.float64)
    acc = np.array([s.payload.values() for s in samples], dtype=np.float64)
    mag = np.sqrt(np.sum(acc * acc, axis=1))
    peaks = _accel.scan_impacts(
        t, mag, params.theta_freefall_g, params.d_freefall_ms / 1000.0,
        params.theta_impact_g, params.max_gap_ms / 1000.0,
    )
    return [ImpactEvent(float(t[k]), entity, float(mag[k])) for k in peaks]


def _entity_of(sample: NormalizedSample) -> str:
    pos = sample.position
    if isinstance(pos, BodyWorn):
        return pos.entity_id
    if isinstance(pos, GraphNode):
        return pos.room_id
    return "unknown"


# ---------------------------------------------------------------------------
# microphone array
# ---------------------------------------------------------------------------

def detect_sound_events(
    frames: Sequence[NormalizedSample], params: DetectorParams = DetectorParams()
) -> list[SoundEvent]:
    """Loudness upward crossings of ``theta_loud_db`` with a refractory period."""
    out: list[SoundEvent] = []
    refractory = params.refractory_ms / 1000.0
    prev_loud = False
    last_t = -math.inf
    for f in frames:
        if not isinstance(f.payload, SoundFrame):
            raise WrongPayloadSpace(f"expected SoundFrame, got {f.payload.space_id}")
        loud = f.payload.loudness_db >= params.theta_loud_db
        if loud and not prev_loud and f.time.t_s - last_t >= refractory:
            room = f.position.room_id if isinstance(f.position, GraphNode) else None
            out.append(SoundEvent(f.time.t_s, f.payload.loudness_db, f.payload.offsets_us,
                                  f.payload.space_id, room=room))
            last_t = f.time.t_s
        prev_loud = loud
    return out


def _check_array(mic_positions) -> np.ndarray:
    mics = np.asarray(mic_positions, dtype=np.float64)
    if mics.ndim != 2 or mics.shape[1] != 3 or mics.shape[0] < 3:
        raise DegenerateArray("need at least 3 microphones with xyz coordinates")
    for i in range(len(mics)):
        for j in range(i + 1, len(mics)):
            if np.array_equal(mics[i], mics[j]):
                raise DegenerateArray(f"microphones {i} and {j} are collocated")
    return mics


def locate_source(
    mic_positions,
    offsets_us: Sequence[float],
    speed_of_sound: float,
    search_volume: SearchVolume,
    grid_resolution_m: float,
) -> tuple[tuple[float, float, float], float]:
    """Arg-min cell centre of the TDOA misfit and its RMS residual in µs."""
    mics = _check_array(mic_positions)
    if len(offsets_us) != len(mics):
        raise ValueError("one offset per microphone required")
    shape = search_volume.cells(grid_resolution_m)
    iz, ix, iy, sse = _accel.grid_search(
        mics, np.asarray(offsets_us, dtype=np.float64), speed_of_sound,
        search_volume.lo, grid_resolution_m, shape,
    )
    lo, res = search_volume.lo, grid_resolution_m
    center = (lo[0] + (ix + 0.5) * res, lo[1] + (iy + 0.5) * res, lo[2] + (iz + 0.5) * res)
    return center, math.sqrt(sse / (len(mics) - 1))


def estimate_source_height(
    mic_positions,
    offsets_us: Sequence[float],
    speed_of_sound: float,
    search_volume: SearchVolume,
    grid_resolution_m: float = 0.025,
) -> tuple[float, float]:
    """``(estimated_height_m, residual_us)`` by exhaustive grid search."""
    center, residual = locate_source(
        mic_positions, offsets_us, speed_of_sound, search_volume, grid_resolution_m)
    return center[2], residual


# ---------------------------------------------------------------------------
# fusion and evaluation
# ---------------------------------------------------------------------------

RoomLookup = Callable[[ImpactEvent, "SoundEvent | None"], "str | None"]


def _room_from_sound(impact: ImpactEvent, sound: SoundEvent | None) -> str | None:
    return sound.room if sound is not None else None


def fuse_events(
    impacts: Iterable[ImpactEvent],
    sounds: Iterable[SoundEvent],
    params: DetectorParams = DetectorParams(),
    room_lookup: RoomLookup = _room_from_sound,
) -> list[FallAlarm]:
    low = [s for s in sounds
           if s.estimated_height_m is not None and s.estimated_height_m <= params.h_floor_m]
    alarms = []
    for imp in impacts:
        near = [s for s in low if abs(s.t_s - imp.t_s) <= params.fuse_window_s]
        if near:
            best = min(near, key=lambda s: (abs(s.t_s - imp.t_s), s.t_s))
            alarms.append(FallAlarm(imp.t_s, imp.entity_id, CORROBORATED, room_lookup(imp, best)))
        elif params.accel_only_policy == "suspected":
            alarms.append(FallAlarm(imp.t_s, imp.entity_id, ACCEL_ONLY, room_lookup(imp, None)))
    return alarms


@dataclass(frozen=True)
class EvaluationReport:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float

    def to_json(self) -> dict:
        return asdict(self)


def _time_of(item) -> float:
    if isinstance(item, dict):
        return float(item["t_s"] if "t_s" in item else item["time_s"])
    return float(item.t_s if hasattr(item, "t_s") else item.time_s)


def _kind_of(item) -> str:
    if isinstance(item, dict):
        return item.get("kind", "fall")
    return getattr(item, "kind", "fall")


def evaluate_against_truth(alarms, ground_truth, match_window_s: float = 2.0) -> EvaluationReport:
    """Greedy time-ordered one-to-one matching of alarms to truth falls."""
    alarm_times = sorted(_time_of(a) for a in alarms)
    truth_times = sorted(_time_of(g) for g in ground_truth if _kind_of(g) == "fall")
    used = [False] * len(truth_times)
    tp = 0
    for ta in alarm_times:
        for i, tt in enumerate(truth_times):
            if not used[i] and abs(ta - tt) <= match_window_s:
                used[i] = True
                tp += 1
                break
    fp = len(alarm_times) - tp
    fn = len(truth_times) - tp
    precision = tp / (tp + fp) if alarm_times else 1.0
    recall = tp / (tp + fn) if truth_times else 1.0
    return EvaluationReport(tp, fp, fn, precision, recall)


# ---------------------------------------------------------------------------
# whole-stream driver
# ---------------------------------------------------------------------------

def detect_falls(
    samples: Iterable[NormalizedSample],
    registry: SpaceRegistry,
    params: DetectorParams = DetectorParams(),
    search_volume: SearchVolume | None = None,
) -> list[FallAlarm]:
    """Run the full chain over view-applied samples.

    Accelerometer streams are grouped by wearer, sound frames by value space;
    the array geometry is read from the sound space itself.
    """
    accel: dict[str, list[NormalizedSample]] = {}
    sound: dict[str, list[NormalizedSample]] = {}
    for s in samples:
        if isinstance(s.payload, Accel3):
            accel.setdefault(_entity_of(s), []).append(s)
        elif isinstance(s.payload, SoundFrame):
            sound.setdefault(s.payload.space_id, []).append(s)

    impacts = []
    for entity in sorted(accel):
        impacts.extend(detect_impacts(accel[entity], params))
    impacts.sort(key=lambda e: (e.t_s, e.entity_id))

    floorplan = _floorplan(registry)
    heard = []
    for space_id in sorted(sound):
        geometry = registry.space(space_id).array
        if geometry is None:
            raise WrongPayloadSpace(f"sound space {space_id} has no array geometry")
        for ev in detect_sound_events(sound[space_id], params):
            volume = search_volume or _volume_for(ev, floorplan)
            h, res = estimate_source_height(
                geometry.mic_positions, ev.offsets_us, geometry.speed_of_sound_mps,
                volume, params.grid_resolution_m)
            heard.append(SoundEvent(ev.t_s, ev.loudness_db, ev.offsets_us, ev.space_id,
                                    h, res, ev.room))
    heard.sort(key=lambda e: e.t_s)
    return fuse_events(impacts, heard, params)


def _floorplan(registry: SpaceRegistry) -> BuildingGraph | None:
    for space in registry.spaces():
        if space.floorplan is not None:
            return space.floorplan
    return None


def _volume_for(event: SoundEvent, floorplan: BuildingGraph | None) -> SearchVolume:
    """The room the array hears in, or the whole floorplan when that is unknown."""
    if floorplan is None:
        raise EmptyVolume("no search volume given and no floorplan registered")
    if event.room is not None:
        r = floorplan.room(event.room)
        return SearchVolume((r.x_min, r.y_min, r.z_min), (r.x_max, r.y_max, r.z_max))
    lo, hi = floorplan.bounds()
    return SearchVolume(lo, hi)
