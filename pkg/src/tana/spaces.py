"""Normalization layer: spaces, normalized samples, mappings and subjective views.

A normalized sample is a position in a physical space, a payload in a value
space and a coordinate in a temporal space.  Who produced it is kept only in a
quarantined provenance envelope that never survives a view boundary or the
wire encoder.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import TYPE_CHECKING, Callable, Iterable, Mapping, Union

from tana.errors import (
    ChannelMismatch,
    DuplicateMappingId,
    DuplicateSpaceId,
    FaultedSample,
    InvalidDescriptor,
    NoPath,
    NonFiniteInput,
    OutsideFloorplan,
    RegistryFrozen,
    UnknownSpace,
)

if TYPE_CHECKING:
    from tana.kernel import RawSample, SensorDescriptor

STANDARD_GRAVITY = 9.80665


class SpaceKind(str, Enum):
    CARTESIAN = "physical-cartesian"
    BUILDING_GRAPH = "building-graph"
    BODY = "body-frame"
    TEMPORAL = "temporal"
    VALUE = "value"


# kinds whose positions can be re-expressed through the mapping graph
LOCATED_KINDS = frozenset({SpaceKind.CARTESIAN, SpaceKind.BUILDING_GRAPH})


# ---------------------------------------------------------------------------
# floorplan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Room:
    """Axis-aligned half-open box ``[min, max)`` on every axis."""

    room_id: str
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max and self.z_min < self.z_max):
            raise ValueError(f"room {self.room_id!r} has an empty box")

    def contains(self, x: float, y: float, z: float) -> bool:
        return (
            self.x_min <= x < self.x_max
            and self.y_min <= y < self.y_max
            and self.z_min <= z < self.z_max
        )

    def overlaps(self, other: Room) -> bool:
        return (
            self.x_min < other.x_max and other.x_min < self.x_max
            and self.y_min < other.y_max and other.y_min < self.y_max
            and self.z_min < other.z_max and other.z_min < self.z_max
        )


@dataclass(frozen=True)
class BuildingGraph:
    rooms: tuple[Room, ...]
    adjacency: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not self.rooms:
            raise ValueError("floorplan has no rooms")
        ids = [r.room_id for r in self.rooms]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate room id in floorplan")
        for i, a in enumerate(self.rooms):
            for b in self.rooms[i + 1:]:
                if a.overlaps(b):
                    raise ValueError(f"rooms {a.room_id!r} and {b.room_id!r} overlap")
        known = set(ids)
        for a, b in self.adjacency:
            if a not in known or b not in known:
                raise ValueError(f"adjacency ({a!r}, {b!r}) names an unknown room")

    def room(self, room_id: str) -> Room:
        for r in self.rooms:
            if r.room_id == room_id:
                return r
        raise KeyError(room_id)

    def neighbors(self, room_id: str) -> list[str]:
        out = []
        for a, b in self.adjacency:
            if a == room_id:
                out.append(b)
            elif b == room_id:
                out.append(a)
        return out

    def bounds(self) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
        """Bounding box of the room union as ``(lo, hi)``."""
        lo = (min(r.x_min for r in self.rooms), min(r.y_min for r in self.rooms),
              min(r.z_min for r in self.rooms))
        hi = (max(r.x_max for r in self.rooms), max(r.y_max for r in self.rooms),
              max(r.z_max for r in self.rooms))
        return lo, hi

    def locate(self, x: float, y: float, z: float) -> str | None:
        for r in self.rooms:
            if r.contains(x, y, z):
                return r.room_id
        return None


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone layout that gives meaning to a TDOA value space."""

    mic_positions: tuple[tuple[float, float, float], ...]
    speed_of_sound_mps: float = 343.0


# ---------------------------------------------------------------------------
# positions, payloads, time
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Cartesian3:
    x: float
    y: float
    z: float
    space_id: str = "cartesian"

    def to_wire(self) -> dict:
        return {"space": self.space_id, "coords": [self.x, self.y, self.z]}


@dataclass(frozen=True)
class GraphNode:
    room_id: str
    space_id: str = "apartment-graph"

    def to_wire(self) -> dict:
        return {"space": self.space_id, "room": self.room_id}


@dataclass(frozen=True)
class BodyWorn:
    entity_id: str
    attachment: str = "wrist"
    space_id: str = "body"

    def to_wire(self) -> dict:
        return {"space": self.space_id, "entity": self.entity_id, "attachment": self.attachment}


Position = Union[Cartesian3, GraphNode, BodyWorn]


@dataclass(frozen=True)
class Accel3:
    ax: float
    ay: float
    az: float
    space_id: str = "accel-g"

    def values(self) -> list[float]:
        return [self.ax, self.ay, self.az]

    @property
    def magnitude(self) -> float:
        return math.sqrt(self.ax * self.ax + self.ay * self.ay + self.az * self.az)


@dataclass(frozen=True)
class SoundFrame:
    """Per-microphone arrival offsets (µs, relative to mic 0) and loudness (dB SPL)."""

    offsets_us: tuple[float, ...]
    loudness_db: float
    space_id: str = "sound-tdoa"

    def values(self) -> list[float]:
        return [*self.offsets_us, self.loudness_db]


@dataclass(frozen=True)
class Temperature:
    degrees: float
    space_id: str = "celsius"

    def values(self) -> list[float]:
        return [self.degrees]


@dataclass(frozen=True)
class Rgb:
    r: int
    g: int
    b: int
    space_id: str = "rgb"

    def __post_init__(self) -> None:
        for c in (self.r, self.g, self.b):
            if not 0 <= c <= 255:
                raise ValueError("rgb components must lie in [0, 255]")

    def values(self) -> list[int]:
        return [self.r, self.g, self.b]


Payload = Union[Accel3, SoundFrame, Temperature, Rgb]


@dataclass(frozen=True)
class TemporalCoordinate:
    t_s: float
    space_id: str = "run-time"


@dataclass(frozen=True)
class Provenance:
    sensor_id: str
    sequence_no: int


@dataclass(frozen=True)
class NormalizedSample:
    position: Position
    payload: Payload
    time: TemporalCoordinate
    provenance: Provenance | None = field(default=None, compare=False)

    def to_wire(self) -> dict:
        """Consumer-facing dict; provenance is never included."""
        return {
            "t_s": self.time.t_s,
            "position": self.position.to_wire(),
            "payload": {"space": self.payload.space_id, "values": self.payload.values()},
        }


def sample_to_line(sample: NormalizedSample) -> str:
    return json.dumps(sample.to_wire(), separators=(",", ":"))


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpaceDescriptor:
    space_id: str
    kind: SpaceKind
    unit: str
    dimensionality: int
    quantity: str | None = None  # value spaces only: acceleration, temperature, sound, color
    floorplan: BuildingGraph | None = field(default=None, repr=False)
    array: ArrayGeometry | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.dimensionality < 1:
            raise InvalidDescriptor("dimensionality", "must be positive")
        if self.kind == SpaceKind.TEMPORAL and self.dimensionality != 1:
            raise InvalidDescriptor("dimensionality", "temporal spaces are one-dimensional")
        if self.kind == SpaceKind.VALUE and not self.quantity:
            raise InvalidDescriptor("quantity", "value spaces must name their quantity")

    def to_json(self) -> dict:
        out = {
            "space_id": self.space_id,
            "kind": self.kind.value,
            "unit": self.unit,
            "dimensionality": self.dimensionality,
        }
        if self.quantity:
            out["quantity"] = self.quantity
        return out


@dataclass(frozen=True)
class MappingFunction:
    mapping_id: str
    from_space_id: str
    to_space_id: str
    invertible: bool = False
    total: bool = True

    def __post_init__(self) -> None:
        if self.from_space_id == self.to_space_id:
            raise InvalidDescriptor("to_space_id", "mapping endpoints must differ")


@dataclass(frozen=True)
class MappingStep:
    mapping_id: str
    from_space_id: str
    to_space_id: str
    inverse: bool = False


Transform = Callable[[object], object]


class SpaceRegistry:
    """Spaces plus the directed graph of mapping functions between them.

    Registrations happen during setup; :meth:`freeze` makes the registry
    read-only so it can be shared across threads.
    """

    def __init__(self) -> None:
        self._spaces: dict[str, SpaceDescriptor] = {}
        self._mappings: dict[str, MappingFunction] = {}
        self._transforms: dict[tuple[str, bool], Transform] = {}
        self._edges: dict[str, list[MappingStep]] = {}
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> SpaceRegistry:
        self._frozen = True
        return self

    def _check_mutable(self) -> None:
        if self._frozen:
            raise RegistryFrozen("registry is frozen")

    def register_space(self, descriptor: SpaceDescriptor) -> SpaceRegistry:
        self._check_mutable()
        if descriptor.space_id in self._spaces:
            raise DuplicateSpaceId(descriptor.space_id)
        self._spaces[descriptor.space_id] = descriptor
        self._edges[descriptor.space_id] = []
        return self

    def register_mapping(
        self,
        mapping: MappingFunction,
        forward: Transform,
        inverse: Transform | None = None,
    ) -> SpaceRegistry:
        self._check_mutable()
        for sid in (mapping.from_space_id, mapping.to_space_id):
            if sid not in self._spaces:
                raise UnknownSpace(sid)
        if mapping.mapping_id in self._mappings:
            raise DuplicateMappingId(mapping.mapping_id)
        if mapping.invertible and inverse is None:
            raise InvalidDescriptor("inverse", "invertible mapping needs an inverse transform")
        self._mappings[mapping.mapping_id] = mapping
        self._transforms[(mapping.mapping_id, False)] = forward
        self._edges[mapping.from_space_id].append(
            MappingStep(mapping.mapping_id, mapping.from_space_id, mapping.to_space_id)
        )
        if mapping.invertible:
            self._transforms[(mapping.mapping_id, True)] = inverse
            self._edges[mapping.to_space_id].append(
                MappingStep(mapping.mapping_id, mapping.to_space_id, mapping.from_space_id, True)
            )
        return self

    def space(self, space_id: str) -> SpaceDescriptor:
        try:
            return self._spaces[space_id]
        except KeyError:
            raise UnknownSpace(space_id) from None

    def spaces(self) -> list[SpaceDescriptor]:
        return list(self._spaces.values())

    def mappings(self) -> list[MappingFunction]:
        return list(self._mappings.values())

    def has_space(self, space_id: str) -> bool:
        return space_id in self._spaces

    def resolve_mapping_path(self, from_space_id: str, to_space_id: str) -> list[MappingStep]:
        """Fewest-hop chain of mapping steps; earlier registrations win ties."""
        self.space(from_space_id)
        self.space(to_space_id)
        if from_space_id == to_space_id:
            return []
        parent: dict[str, MappingStep | None] = {from_space_id: None}
        queue = deque([from_space_id])
        while queue:
            node = queue.popleft()
            for step in self._edges[node]:
                if step.to_space_id in parent:
                    continue
                parent[step.to_space_id] = step
                if step.to_space_id == to_space_id:
                    path = []
                    cur = to_space_id
                    while parent[cur] is not None:
                        path.append(parent[cur])
                        cur = parent[cur].from_space_id
                    return path[::-1]
                queue.append(step.to_space_id)
        raise NoPath(f"{from_space_id} -> {to_space_id}")

    def transform(self, obj, to_space_id: str):
        """Carry a position or payload into ``to_space_id`` along the resolved path."""
        for step in self.resolve_mapping_path(obj.space_id, to_space_id):
            obj = self._transforms[(step.mapping_id, step.inverse)](obj)
        return obj


# ---------------------------------------------------------------------------
# stock transforms
# ---------------------------------------------------------------------------

def _finite(value: float) -> float:
    if not math.isfinite(value):
        raise NonFiniteInput(repr(value))
    return value


def celsius_to_fahrenheit(degrees_c: float) -> float:
    return _finite(degrees_c) * 9.0 / 5.0 + 32.0


def fahrenheit_to_celsius(degrees_f: float) -> float:
    return (_finite(degrees_f) - 32.0) * 5.0 / 9.0


def cartesian_to_room(
    point: Cartesian3, floorplan: BuildingGraph, space_id: str = "apartment-graph"
) -> GraphNode:
    room = floorplan.locate(point.x, point.y, point.z)
    if room is None:
        raise OutsideFloorplan(f"({point.x}, {point.y}, {point.z}) is in no room")
    return GraphNode(room, space_id)


def build_default_registry(
    floorplan: BuildingGraph | None = None,
    sound_spaces: Mapping[str, ArrayGeometry] | None = None,
    freeze: bool = True,
) -> SpaceRegistry:
    """Registry with the stock spaces and mappings used by the hub."""
    reg = SpaceRegistry()
    reg.register_space(SpaceDescriptor("cartesian", SpaceKind.CARTESIAN, "m", 3))
    if floorplan is not None:
        reg.register_space(SpaceDescriptor(
            "apartment-graph", SpaceKind.BUILDING_GRAPH, "room", 1, floorplan=floorplan))
    reg.register_space(SpaceDescriptor("body", SpaceKind.BODY, "attachment", 1))
    reg.register_space(SpaceDescriptor("run-time", SpaceKind.TEMPORAL, "s", 1))
    reg.register_space(SpaceDescriptor("accel-g", SpaceKind.VALUE, "g", 3, "acceleration"))
    reg.register_space(SpaceDescriptor("accel-mps2", SpaceKind.VALUE, "m/s^2", 3, "acceleration"))
    reg.register_space(SpaceDescriptor("celsius", SpaceKind.VALUE, "celsius", 1, "temperature"))
    reg.register_space(SpaceDescriptor("fahrenheit", SpaceKind.VALUE, "fahrenheit", 1, "temperature"))
    reg.register_space(SpaceDescriptor("rgb", SpaceKind.VALUE, "rgb", 3, "color"))
    for space_id, geometry in (sound_spaces or {}).items():
        reg.register_space(SpaceDescriptor(
            space_id, SpaceKind.VALUE, "us/dB", len(geometry.mic_positions) + 1, "sound",
            array=geometry))

    reg.register_mapping(
        MappingFunction("celsius-fahrenheit", "celsius", "fahrenheit", invertible=True),
        lambda t: Temperature(celsius_to_fahrenheit(t.degrees), "fahrenheit"),
        lambda t: Temperature(fahrenheit_to_celsius(t.degrees), "celsius"),
    )
    reg.register_mapping(
        MappingFunction("g-mps2", "accel-g", "accel-mps2", invertible=True),
        lambda a: Accel3(a.ax * STANDARD_GRAVITY, a.ay * STANDARD_GRAVITY,
                         a.az * STANDARD_GRAVITY, "accel-mps2"),
        lambda a: Accel3(a.ax / STANDARD_GRAVITY, a.ay / STANDARD_GRAVITY,
                         a.az / STANDARD_GRAVITY, "accel-g"),
    )
    if floorplan is not None:
        reg.register_mapping(
            MappingFunction("cartesian-room", "cartesian", "apartment-graph", total=False),
            lambda p: cartesian_to_room(p, floorplan),
        )
    return reg.freeze() if freeze else reg


# ---------------------------------------------------------------------------
# normalization and views
# ---------------------------------------------------------------------------

def _scaled(counts: Iterable[int], scale: Fraction, offset: Fraction) -> list[float]:
    return [float(c * scale + offset) for c in counts]


def tick_to_seconds(tick: int, tick_quantum_us: int) -> float:
    return float(Fraction(tick * tick_quantum_us, 1_000_000))


def normalize_sample(
    raw: RawSample, descriptor: SensorDescriptor, tick_quantum_us: int
) -> NormalizedSample:
    """Turn one raw reading into a source-agnostic normalized sample."""
    if raw.status != "ok":
        raise FaultedSample(f"sample {raw.sequence_no} of {raw.sensor_id} is {raw.status}")
    if raw.sensor_id != descriptor.sensor_id:
        raise ChannelMismatch(f"descriptor {descriptor.sensor_id} does not match sample")
    if len(raw.values) != descriptor.channel_count:
        raise ChannelMismatch(
            f"expected {descriptor.channel_count} channels, got {len(raw.values)}")
    vals = _scaled(raw.values, descriptor.scale, descriptor.offset)
    space = descriptor.value_space_id
    if descriptor.kind == "accelerometer":
        payload: Payload = Accel3(vals[0], vals[1], vals[2], space)
    elif descriptor.kind == "thermometer":
        payload = Temperature(vals[0], space)
    else:
        # channel 0 is loudness; mic 0 is the reference so its offset is implicit
        payload = SoundFrame((0.0, *vals[1:]), vals[0], space)
    return NormalizedSample(
        position=descriptor.placement,
        payload=payload,
        time=TemporalCoordinate(tick_to_seconds(raw.tick, tick_quantum_us)),
        provenance=Provenance(raw.sensor_id, raw.sequence_no),
    )


@dataclass(frozen=True)
class SubjectiveView:
    view_id: str
    physical_space_id: str | None = None
    value_spaces: Mapping[str, str] = field(default_factory=dict)

    def validate(self, registry: SpaceRegistry) -> None:
        if self.physical_space_id is not None:
            registry.space(self.physical_space_id)
        for space_id in self.value_spaces.values():
            registry.space(space_id)


def apply_view(
    sample: NormalizedSample, view: SubjectiveView, registry: SpaceRegistry
) -> NormalizedSample:
    """Re-express ``sample`` in the view's preferred spaces and strip provenance.

    Body-frame positions are relative to a person rather than the building and
    pass through untouched.
    """
    position = sample.position
    pos_kind = registry.space(position.space_id).kind
    target = view.physical_space_id
    if target is not None and position.space_id != target and pos_kind in LOCATED_KINDS:
        position = registry.transform(position, target)

    payload = sample.payload
    quantity = registry.space(payload.space_id).quantity
    target = view.value_spaces.get(quantity) if quantity else None
    if target is not None and payload.space_id != target:
        payload = registry.transform(payload, target)

    if position is sample.position and payload is sample.payload and sample.provenance is None:
        return sample
    return replace(sample, position=position, payload=payload, provenance=None)


def quantity_of(sample: NormalizedSample, registry: SpaceRegistry) -> str | None:
    return registry.space(sample.payload.space_id).quantity


DEFAULT_VIEWS = (
    SubjectiveView("native"),
    SubjectiveView("building", "apartment-graph"),
    SubjectiveView("fahrenheit", None, {"temperature": "fahrenheit"}),
    SubjectiveView("si", None, {"acceleration": "accel-mps2"}),
    SubjectiveView("detector", "apartment-graph", {"acceleration": "accel-g"}),
)
