import json
from pathlib import Path

import pytest

from tana.kernel import SensorDescriptor, SensorRegistry
from tana.spaces import BodyWorn, BuildingGraph, Cartesian3, Room

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"
SUITE = sorted((SCENARIOS / "suite").glob("*.json"))


def accel_descriptor(sensor_id="wrist-1", **kw):
    kw.setdefault("placement", BodyWorn("resident-1"))
    return SensorDescriptor(sensor_id, "accelerometer", 3, "g", "0.001", **kw)


def thermo_descriptor(sensor_id="thermo-1", **kw):
    kw.setdefault("placement", Cartesian3(1.0, 1.0, 1.0))
    return SensorDescriptor(sensor_id, "thermometer", 1, "celsius", "0.01", **kw)


def counting_driver(channels):
    return lambda tick: [tick] * channels


def make_registry(*descriptors):
    reg = SensorRegistry()
    for d in descriptors:
        reg.register_driver(d, counting_driver(d.channel_count))
    return reg


@pytest.fixture
def kitchen_living():
    return BuildingGraph(
        (Room("kitchen", 0, 4, 0, 3, 0, 3), Room("living", 4, 8, 0, 3, 0, 3)),
        (("kitchen", "living"),),
    )


def load_doc(path):
    return json.loads(Path(path).read_text())


@pytest.fixture
def fall_doc():
    return load_doc(SCENARIOS / "suite" / "fall1.json")
