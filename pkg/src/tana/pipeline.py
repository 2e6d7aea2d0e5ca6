"""Wires a scenario into kernel, normalization and detection."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from tana.detection import FallAlarm, detect_falls
from tana.errors import UnknownView
from tana.kernel import (
    AcquisitionKernel,
    CommandQueue,
    PacingMode,
    RawSample,
    RunSummary,
    SamplingSchedule,
    SensorRegistry,
    TickClock,
    build_schedule,
)
from tana.simulation import Scenario, make_driver
from tana.spaces import (
    DEFAULT_VIEWS,
    NormalizedSample,
    SpaceRegistry,
    SubjectiveView,
    apply_view,
    build_default_registry,
    normalize_sample,
    sample_to_line,
)

DETECTOR_VIEW = "detector"


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


@dataclass
class ScenarioRuntime:
    """Everything derived from a scenario that does not carry run state."""

    scenario: Scenario
    spaces: SpaceRegistry
    views: dict[str, SubjectiveView]
    descriptors: dict = field(default_factory=dict)

    @classmethod
    def build(cls, scenario: Scenario) -> ScenarioRuntime:
        sound = {s.descriptor.value_space_id: s.array.geometry
                 for s in scenario.sensors if s.array is not None}
        spaces = build_default_registry(scenario.floorplan, sound)
        views = {v.view_id: v for v in DEFAULT_VIEWS}
        views.update({v.view_id: v for v in scenario.views})
        for v in views.values():
            v.validate(spaces)
        descriptors = {s.descriptor.sensor_id: s.descriptor for s in scenario.sensors}
        return cls(scenario, spaces, views, descriptors)

    @property
    def tick_quantum_us(self) -> int:
        return self.scenario.tick_quantum_us

    def view(self, view_id: str) -> SubjectiveView:
        try:
            return self.views[view_id]
        except KeyError:
            raise UnknownView(view_id) from None

    def new_kernel(self, pacing: PacingMode = PacingMode.FAST) -> AcquisitionKernel:
        """Fresh registry, drivers and kernel; every run needs its own."""
        registry = SensorRegistry()
        for i, spec in enumerate(self.scenario.sensors):
            registry.register_driver(spec.descriptor, make_driver(self.scenario, i))
        schedule: SamplingSchedule = build_schedule(
            [s.schedule for s in self.scenario.sensors], registry)
        clock = TickClock(self.scenario.tick_quantum_us, pacing)
        return AcquisitionKernel(registry, schedule, clock,
                                 CommandQueue(self.scenario.rate_commands))

    def normalize(self, raw: RawSample) -> NormalizedSample:
        return normalize_sample(raw, self.descriptors[raw.sensor_id], self.tick_quantum_us)


@dataclass
class RunResult:
    view_lines: dict[str, list[str]]
    alarms: list[FallAlarm]
    summary: RunSummary

    def lines(self) -> list[str]:
        out = []
        for view_id, lines in self.view_lines.items():
            out.append(dumps({"type": "view", "view": view_id}))
            out.extend(lines)
        out.extend(dumps(a.to_json()) for a in self.alarms)
        out.append(dumps(self.summary.to_json()))
        return out


def run_scenario(
    scenario: Scenario,
    view_ids: tuple[str, ...] | list[str] = (),
    pacing: PacingMode = PacingMode.FAST,
) -> RunResult:
    runtime = ScenarioRuntime.build(scenario)
    views = [runtime.view(v) for v in view_ids]
    detector_view = runtime.view(DETECTOR_VIEW)
    kernel = runtime.new_kernel(pacing)
    view_lines: dict[str, list[str]] = {v.view_id: [] for v in views}
    detector_samples = []
    summary = None
    for item in kernel.run(scenario.duration_ticks):
        if isinstance(item, RunSummary):
            summary = item
            continue
        if item.status != "ok":
            continue
        sample = runtime.normalize(item)
        for v in views:
            view_lines[v.view_id].append(sample_to_line(apply_view(sample, v, runtime.spaces)))
        detector_samples.append(apply_view(sample, detector_view, runtime.spaces))
    alarms = detect_falls(detector_samples, runtime.spaces, scenario.detector)
    return RunResult(view_lines, alarms, summary)
