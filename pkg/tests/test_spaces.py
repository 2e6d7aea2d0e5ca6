import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import accel_descriptor, thermo_descriptor
from tana.errors import (
    DuplicateSpaceId,
    FaultedSample,
    NoPath,
    NonFiniteInput,
    OutsideFloorplan,
    RegistryFrozen,
    UnknownSpace,
)
from tana.kernel import RawSample, SensorDescriptor
from tana.spaces import (
    Accel3,
    ArrayGeometry,
    BodyWorn,
    Cartesian3,
    GraphNode,
    MappingFunction,
    NormalizedSample,
    Provenance,
    SoundFrame,
    SpaceDescriptor,
    SpaceKind,
    SpaceRegistry,
    SubjectiveView,
    Temperature,
    TemporalCoordinate,
    apply_view,
    build_default_registry,
    cartesian_to_room,
    celsius_to_fahrenheit,
    fahrenheit_to_celsius,
    normalize_sample,
    sample_to_line,
)


def value_space(sid, quantity="temperature"):
    return SpaceDescriptor(sid, SpaceKind.VALUE, sid, 1, quantity)


def thermo_sample(c=25.0, pos=None):
    return NormalizedSample(pos or Cartesian3(2.0, 1.0, 1.0), Temperature(c),
                            TemporalCoordinate(0.5), Provenance("thermo-1", 7))


# -- registry ---------------------------------------------------------------------

def test_register_space_and_duplicates(kitchen_living):
    reg = SpaceRegistry()
    reg.register_space(value_space("celsius"))
    reg.register_space(SpaceDescriptor("apartment-graph", SpaceKind.BUILDING_GRAPH, "room", 1,
                                       floorplan=kitchen_living))
    assert [s.space_id for s in reg.spaces()] == ["celsius", "apartment-graph"]
    with pytest.raises(DuplicateSpaceId):
        reg.register_space(value_space("celsius"))


def test_invertible_mapping_resolves_both_ways():
    reg = build_default_registry()
    assert len(reg.resolve_mapping_path("celsius", "fahrenheit")) == 1
    back = reg.resolve_mapping_path("fahrenheit", "celsius")
    assert len(back) == 1 and back[0].inverse
    assert reg.resolve_mapping_path("celsius", "celsius") == []
    with pytest.raises(NoPath):
        reg.resolve_mapping_path("celsius", "rgb")


def test_partial_mapping_is_forward_only(kitchen_living):
    reg = build_default_registry(kitchen_living)
    assert len(reg.resolve_mapping_path("cartesian", "apartment-graph")) == 1
    with pytest.raises(NoPath):
        reg.resolve_mapping_path("apartment-graph", "cartesian")


def test_mapping_needs_registered_endpoints():
    reg = SpaceRegistry().register_space(value_space("celsius"))
    with pytest.raises(UnknownSpace):
        reg.register_mapping(MappingFunction("m", "celsius", "kelvin"), lambda v: v)


def test_frozen_registry_rejects_writes():
    reg = build_default_registry()
    with pytest.raises(RegistryFrozen):
        reg.register_space(value_space("kelvin"))


def _all_simple_path_lengths(edges, src, dst):
    best = None
    nodes = {a for a, _ in edges} | {b for _, b in edges}
    for r in range(0, len(nodes)):
        for mid in itertools.permutations(nodes - {src, dst}, r):
            hops = (src, *mid, dst)
            if all((a, b) in edges for a, b in zip(hops, hops[1:])):
                best = r + 1 if best is None else min(best, r + 1)
        if best is not None:
            return best
    return None


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 6), st.data())
def test_path_minimality_against_exhaustive_search(n, data):
    ids = [f"s{i}" for i in range(n)]
    pairs = [(a, b) for a in ids for b in ids if a != b]
    chosen = data.draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    invertible = data.draw(st.lists(st.booleans(), min_size=len(chosen), max_size=len(chosen)))
    reg = SpaceRegistry()
    for sid in ids:
        reg.register_space(value_space(sid))
    edges = set()
    for k, ((a, b), inv) in enumerate(zip(chosen, invertible)):
        reg.register_mapping(MappingFunction(f"m{k}", a, b, invertible=inv),
                             lambda v: v, (lambda v: v) if inv else None)
        edges.add((a, b))
        if inv:
            edges.add((b, a))
    src, dst = data.draw(st.sampled_from(pairs))
    expected = _all_simple_path_lengths(edges, src, dst)
    if expected is None:
        with pytest.raises(NoPath):
            reg.resolve_mapping_path(src, dst)
    else:
        path = reg.resolve_mapping_path(src, dst)
        assert len(path) == expected
        assert path[0].from_space_id == src and path[-1].to_space_id == dst
        assert all(a.to_space_id == b.from_space_id for a, b in zip(path, path[1:]))


def test_ties_go_to_earliest_registration():
    reg = SpaceRegistry()
    for sid in "abcd":
        reg.register_space(value_space(sid))
    reg.register_mapping(MappingFunction("a-c", "a", "c"), lambda v: v)
    reg.register_mapping(MappingFunction("a-b", "a", "b"), lambda v: v)
    reg.register_mapping(MappingFunction("b-d", "b", "d"), lambda v: v)
    reg.register_mapping(MappingFunction("c-d", "c", "d"), lambda v: v)
    assert [s.mapping_id for s in reg.resolve_mapping_path("a", "d")] == ["a-c", "c-d"]


# -- normalization ---------------------------------------------------------------------

def test_normalize_accel_and_temp():
    s = normalize_sample(RawSample("wrist-1", 500, 0, (0, 0, 1000), "ok"), accel_descriptor(), 1000)
    assert s.payload == Accel3(0.0, 0.0, 1.0)
    assert s.time.t_s == 0.5
    assert isinstance(s.position, BodyWorn)
    t = normalize_sample(RawSample("thermo-1", 0, 0, (2550,), "ok"), thermo_descriptor(), 1000)
    assert t.payload == Temperature(25.5)


def test_normalize_mic_frame_channel_layout():
    desc = SensorDescriptor("mic", "microphone-array", 3, "us", "0.01",
                            placement=Cartesian3(0, 0, 0))
    s = normalize_sample(RawSample("mic", 10, 1, (8000, -17945, 0), "ok"), desc, 1000)
    assert s.payload.loudness_db == 80.0
    assert s.payload.offsets_us == (0.0, -179.45, 0.0)


def test_normalize_rejects_faults():
    with pytest.raises(FaultedSample):
        normalize_sample(RawSample("wrist-1", 0, 0, (), "driver-fault"), accel_descriptor(), 1000)


# -- stock mappings ------------------------------------------------------------------------

@pytest.mark.parametrize("c,f", [(0, 32), (100, 212), (-40, -40)])
def test_celsius_anchor_points(c, f):
    assert abs(celsius_to_fahrenheit(c) - f) <= 1e-12
    assert abs(fahrenheit_to_celsius(f) - c) <= 1e-12


def test_non_finite_temperature():
    with pytest.raises(NonFiniteInput):
        celsius_to_fahrenheit(float("nan"))


def test_invertible_round_trips():
    reg = build_default_registry()
    rng = np.random.default_rng(42)
    for v in rng.uniform(-50, 150, 1000):
        back = reg.transform(reg.transform(Temperature(float(v)), "fahrenheit"), "celsius")
        assert abs(back.degrees - v) <= 1e-9
    for a in rng.uniform(-16, 16, (1000, 3)):
        src = Accel3(*map(float, a))
        back = reg.transform(reg.transform(src, "accel-mps2"), "accel-g")
        assert max(abs(x - y) for x, y in zip(back.values(), src.values())) <= 1e-9


@pytest.mark.parametrize("pt,room", [((2, 1, 1), "kitchen"), ((4, 1, 1), "living")])
def test_cartesian_to_room(kitchen_living, pt, room):
    assert cartesian_to_room(Cartesian3(*pt), kitchen_living) == GraphNode(room)


def test_cartesian_outside(kitchen_living):
    with pytest.raises(OutsideFloorplan):
        cartesian_to_room(Cartesian3(9, 9, 9), kitchen_living)


def test_room_partition(kitchen_living):
    rng = np.random.default_rng(7)
    pts = rng.uniform([0, 0, 0], [8, 3, 3], (10_000, 3))
    # snap a share of points to shared walls so the half-open rule gets exercised
    pts[::10, 0] = 4.0
    for x, y, z in pts:
        hits = [r for r in kitchen_living.rooms if r.contains(x, y, z)]
        assert len(hits) == 1
        node = cartesian_to_room(Cartesian3(x, y, z), kitchen_living)
        assert node.room_id == hits[0].room_id


# -- views -------------------------------------------------------------------------------------

def test_view_examples(kitchen_living):
    reg = build_default_registry(kitchen_living)
    f = apply_view(thermo_sample(25.0), SubjectiveView("f", None, {"temperature": "fahrenheit"}), reg)
    assert f.payload == Temperature(77.0, "fahrenheit")
    b = apply_view(thermo_sample(), SubjectiveView("b", "apartment-graph"), reg)
    assert b.position == GraphNode("kitchen")
    native = apply_view(thermo_sample(), SubjectiveView("n"), reg)
    assert native == thermo_sample() and native.provenance is None


def test_body_worn_passes_through(kitchen_living):
    reg = build_default_registry(kitchen_living)
    s = NormalizedSample(BodyWorn("resident-1"), Accel3(0, 0, 1), TemporalCoordinate(0.0))
    out = apply_view(s, SubjectiveView("si", "apartment-graph", {"acceleration": "accel-mps2"}), reg)
    assert out.position == BodyWorn("resident-1")
    assert out.payload.az == pytest.approx(9.80665)


views = st.sampled_from([
    SubjectiveView("native"),
    SubjectiveView("building", "apartment-graph"),
    SubjectiveView("f", "apartment-graph", {"temperature": "fahrenheit"}),
    SubjectiveView("si", None, {"acceleration": "accel-mps2", "temperature": "celsius"}),
])
points = st.tuples(st.floats(0, 7.99), st.floats(0, 2.99), st.floats(0, 2.99))


@settings(max_examples=100, deadline=None)
@given(views, points, st.floats(-50, 150), st.booleans())
def test_view_idempotence_and_opacity(view, pt, c, accel):
    from tana.spaces import BuildingGraph, Room
    fp = BuildingGraph((Room("kitchen", 0, 4, 0, 3, 0, 3), Room("living", 4, 8, 0, 3, 0, 3)),
                       (("kitchen", "living"),))
    reg = build_default_registry(fp)
    payload = Accel3(c / 100, 0.0, 1.0) if accel else Temperature(c)
    s = NormalizedSample(Cartesian3(*pt), payload, TemporalCoordinate(1.25),
                         Provenance("secret-sensor-77", 12345))
    once = apply_view(s, view, reg)
    assert apply_view(once, view, reg) == once
    line = sample_to_line(once)
    assert "secret-sensor-77" not in line
    assert "sensor_id" not in line and "sequence_no" not in line
    doc = json.loads(line)
    assert list(doc) == ["t_s", "position", "payload"]
    assert 12345 not in doc["position"].values()


def test_sound_space_carries_geometry():
    geo = ArrayGeometry(((0, 0, 0.5), (0, 0, 1.0), (0, 0, 1.5)))
    reg = build_default_registry(None, {"sound-tdoa": geo})
    assert reg.space("sound-tdoa").array == geo
    assert reg.space("sound-tdoa").quantity == "sound"
    frame = NormalizedSample(Cartesian3(0, 0, 0), SoundFrame((0.0, 1.0, 2.0), 80.0),
                             TemporalCoordinate(0.0))
    assert frame.to_wire()["payload"] == {"space": "sound-tdoa", "values": [0.0, 1.0, 2.0, 80.0]}
