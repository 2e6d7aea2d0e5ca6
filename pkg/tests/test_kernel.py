import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import accel_descriptor, make_registry, thermo_descriptor
from tana.errors import (
    DisabledEntry,
    DuplicateEntry,
    DuplicateSensorId,
    InvalidDescriptor,
    PeriodOutOfBounds,
    QueueOverflow,
    UnknownSensor,
)
from tana.kernel import (
    AcquisitionKernel,
    CommandQueue,
    PacingMode,
    RateCommand,
    RawSample,
    RunSummary,
    SampleQueue,
    ScheduleEntry,
    SensorDescriptor,
    SensorRegistry,
    TickClock,
    apply_rate_command,
    build_schedule,
    expected_sample_count,
    next_fire_tick,
    run_acquisition,
)


def samples_of(stream):
    items = list(stream)
    assert isinstance(items[-1], RunSummary)
    return items[:-1], items[-1]


def brute_count(period, phase, duration):
    return sum(1 for t in range(duration) if t >= phase and (t - phase) % period == 0)


def brute_next(period, phase, now):
    t = now + 1
    while (t - phase) % period or t < phase:
        t += 1
    return t


def simulate_fires(period, phase, duration, cmd_tick, new_period):
    """Independent tick-by-tick model of the rate-switch rule."""
    fires, cur, anchor, pending = [], period, phase, None
    for t in range(duration):
        if t >= anchor and (t - anchor) % cur == 0:
            fires.append(t)
            if pending is not None:
                cur, anchor, pending = pending, t, None
        if t == cmd_tick:
            pending = new_period
    return fires


# -- registration -------------------------------------------------------------

def test_register_driver_lists_sensor():
    reg = SensorRegistry()
    handle = reg.register_driver(accel_descriptor(), lambda t: (0, 0, 1000))
    assert handle.sensor_id == "wrist-1"
    assert len(reg) == 1
    assert reg.descriptor("wrist-1").scale * 1000 == 1


def test_register_duplicate_id():
    reg = make_registry(accel_descriptor())
    with pytest.raises(DuplicateSensorId):
        reg.register_driver(accel_descriptor(), lambda t: (0, 0, 0))


def test_thermometer_with_two_channels_is_invalid():
    with pytest.raises(InvalidDescriptor) as exc:
        SensorDescriptor("t", "thermometer", 2, "celsius", "0.01")
    assert exc.value.field == "channel_count"


@pytest.mark.parametrize("kw,field", [
    ({"scale": 0}, "scale"),
    ({"min_period_ticks": 10, "max_period_ticks": 5}, "min_period_ticks"),
])
def test_descriptor_invariants(kw, field):
    args = dict(sensor_id="a", kind="accelerometer", channel_count=3, native_unit="g", scale="0.001")
    args.update(kw)
    with pytest.raises(InvalidDescriptor) as exc:
        SensorDescriptor(**args)
    assert exc.value.field == field


# -- schedule -------------------------------------------------------------------

def test_build_schedule_50hz():
    reg = make_registry(accel_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", 20, 0)], reg)
    assert sched.frequency_hz("wrist-1", 1000) == pytest.approx(50.0)


def test_build_schedule_errors():
    reg = make_registry(accel_descriptor())
    with pytest.raises(PeriodOutOfBounds):
        build_schedule([ScheduleEntry("wrist-1", 0, 0)], reg)
    with pytest.raises(DuplicateEntry):
        build_schedule([ScheduleEntry("wrist-1", 20), ScheduleEntry("wrist-1", 10)], reg)
    with pytest.raises(UnknownSensor):
        build_schedule([ScheduleEntry("nope", 20)], reg)


def test_disabled_entry_never_fires():
    reg = make_registry(accel_descriptor(), thermo_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", 20, 0, enabled=False),
                            ScheduleEntry("thermo-1", 100)], reg)
    samples, summary = samples_of(run_acquisition(sched, reg, 1000))
    assert {s.sensor_id for s in samples} == {"thermo-1"}
    assert summary.samples["wrist-1"] == 0


@pytest.mark.parametrize("period,phase,now,expected", [
    (20, 5, 47, 65),
    (20, 0, 0, 20),
    (7, 3, 2, 3),
])
def test_next_fire_tick_examples(period, phase, now, expected):
    assert next_fire_tick(ScheduleEntry("s", period, phase), now) == expected


def test_next_fire_tick_disabled():
    with pytest.raises(DisabledEntry):
        next_fire_tick(ScheduleEntry("s", 20, 0, enabled=False), 0)


@given(st.integers(1, 60), st.data(), st.integers(0, 500))
def test_next_fire_tick_matches_linear_scan(period, data, now):
    phase = data.draw(st.integers(0, period - 1))
    assert next_fire_tick(ScheduleEntry("s", period, phase), now) == brute_next(period, phase, now)


@pytest.mark.parametrize("args,expected", [((20, 0, 10000), 500), ((20, 5, 10000), 500),
                                           ((100, 0, 50), 1)])
def test_expected_sample_count_examples(args, expected):
    assert expected_sample_count(*args) == expected


@given(st.integers(1, 50), st.data(), st.integers(0, 400))
def test_expected_sample_count_matches_enumeration(period, data, duration):
    phase = data.draw(st.integers(0, period - 1))
    assert expected_sample_count(period, phase, duration) == brute_count(period, phase, duration)


# -- the run loop -----------------------------------------------------------------

def test_run_one_50hz_sensor():
    reg = make_registry(accel_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", 20, 0)], reg)
    samples, summary = samples_of(run_acquisition(sched, reg, 10_000, clock=TickClock(1000)))
    assert len(samples) == expected_sample_count(20, 0, 10_000) == 500
    assert [s.sequence_no for s in samples] == list(range(500))
    assert all(s.status == "ok" for s in samples)
    assert summary.ticks_elapsed == 10_000


def test_same_tick_sensors_ordered_by_id():
    reg = make_registry(thermo_descriptor("b-thermo"), accel_descriptor("a-wrist"))
    sched = build_schedule([ScheduleEntry("b-thermo", 10), ScheduleEntry("a-wrist", 10)], reg)
    samples, _ = samples_of(run_acquisition(sched, reg, 30))
    assert [(s.tick, s.sensor_id) for s in samples] == [
        (0, "a-wrist"), (0, "b-thermo"), (10, "a-wrist"), (10, "b-thermo"),
        (20, "a-wrist"), (20, "b-thermo")]


def test_faulting_driver_is_captured():
    calls = []

    def flaky(tick):
        calls.append(tick)
        if len(calls) % 3 == 0:
            raise RuntimeError("bus error")
        return (1, 2, 3)

    reg = SensorRegistry()
    reg.register_driver(accel_descriptor(), flaky)
    sched = build_schedule([ScheduleEntry("wrist-1", 10)], reg)
    samples, summary = samples_of(run_acquisition(sched, reg, 90))

    # enumeration oracle: call k (1-based) faults iff k % 3 == 0
    expected_status = ["driver-fault" if k % 3 == 0 else "ok" for k in range(1, 10)]
    assert [s.status for s in samples] == expected_status
    ok = [s for s in samples if s.status == "ok"]
    assert [s.sequence_no for s in ok] == list(range(6))
    assert all(s.values == () for s in samples if s.status != "ok")
    assert summary.samples["wrist-1"] == 6 and summary.faults["wrist-1"] == 3


def test_fault_isolation():
    def broken(tick):
        raise OSError("gone")

    reg = SensorRegistry()
    reg.register_driver(accel_descriptor(), broken)
    reg.register_driver(thermo_descriptor(), lambda t: (2100,))
    sched = build_schedule([ScheduleEntry("wrist-1", 7, 3), ScheduleEntry("thermo-1", 20, 5)], reg)
    samples, summary = samples_of(run_acquisition(sched, reg, 1000))
    thermo = [s.tick for s in samples if s.sensor_id == "thermo-1"]
    assert thermo == list(range(5, 1000, 20))
    assert summary.samples["thermo-1"] == expected_sample_count(20, 5, 1000)
    assert summary.faults["wrist-1"] == expected_sample_count(7, 3, 1000)


def test_wrong_channel_count_from_driver_is_a_fault():
    reg = SensorRegistry()
    reg.register_driver(accel_descriptor(), lambda t: (1, 2))
    sched = build_schedule([ScheduleEntry("wrist-1", 10)], reg)
    samples, _ = samples_of(run_acquisition(sched, reg, 10))
    assert samples[0].status == "driver-fault"


def test_run_is_deterministic():
    def run():
        reg = make_registry(accel_descriptor(), thermo_descriptor())
        sched = build_schedule([ScheduleEntry("wrist-1", 20, 3), ScheduleEntry("thermo-1", 7)], reg)
        return list(run_acquisition(sched, reg, 2000, [RateCommand("wrist-1", 10, 500)]))

    assert run() == run()


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.data(), st.integers(0, 600))
def test_fire_tick_exactness(period, data, duration):
    phase = data.draw(st.integers(0, period - 1))
    reg = make_registry(accel_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", period, phase)], reg)
    samples, _ = samples_of(run_acquisition(sched, reg, duration))
    ticks = [s.tick for s in samples]
    assert ticks == [phase + k * period for k in range(duration) if phase + k * period < duration]
    assert len(ticks) == expected_sample_count(period, phase, duration)


# -- rate commands ------------------------------------------------------------------

def test_rate_command_switches_at_next_fire():
    reg = make_registry(accel_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", 20, 0)], reg)
    samples, _ = samples_of(run_acquisition(sched, reg, 100, [RateCommand("wrist-1", 10, 47)]))
    ticks = [s.tick for s in samples]
    assert ticks == simulate_fires(20, 0, 100, 47, 10)
    assert ticks[ticks.index(60):] == [60, 70, 80, 90]
    assert 50 not in ticks


def test_apply_rate_command_same_period_only_reanchors():
    reg = make_registry(accel_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", 20, 0)], reg)
    updated = apply_rate_command(sched, RateCommand("wrist-1", 20, 47), 47)
    entry = updated.entry("wrist-1")
    assert (entry.period_ticks, entry.phase_ticks) == (20, 0)
    assert [t for t in range(200) if updated.is_due("wrist-1", t)] == list(range(0, 200, 20))


def test_apply_rate_command_bounds():
    reg = make_registry(accel_descriptor(min_period_ticks=10, max_period_ticks=100))
    sched = build_schedule([ScheduleEntry("wrist-1", 20, 0)], reg)
    with pytest.raises(PeriodOutOfBounds):
        apply_rate_command(sched, RateCommand("wrist-1", 5, 0), 0)
    with pytest.raises(UnknownSensor):
        apply_rate_command(sched, RateCommand("ghost", 20, 0), 0)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 30), st.data(), st.integers(0, 300), st.integers(1, 30))
def test_rate_command_against_simulation(period, data, cmd_tick, new_period):
    phase = data.draw(st.integers(0, period - 1))
    reg = make_registry(accel_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", period, phase)], reg)
    samples, _ = samples_of(run_acquisition(
        sched, reg, 400, [RateCommand("wrist-1", new_period, cmd_tick)]))
    ticks = [s.tick for s in samples]
    assert ticks == simulate_fires(period, phase, 400, cmd_tick, new_period)
    # the fire set before the switch is unaffected
    switch = next_fire_tick(ScheduleEntry("wrist-1", period, phase), cmd_tick)
    assert [t for t in ticks if t < switch] == [
        t for t in range(min(switch, 400)) if t >= phase and (t - phase) % period == 0]
    assert ticks == sorted(set(ticks))


def test_second_command_before_switch_replaces_first():
    reg = make_registry(accel_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", 20, 0)], reg)
    samples, _ = samples_of(run_acquisition(
        sched, reg, 120, [RateCommand("wrist-1", 10, 47), RateCommand("wrist-1", 5, 50)]))
    assert [s.tick for s in samples] == [0, 20, 40, 60, 65, 70, 75, 80, 85, 90, 95, 100, 105,
                                         110, 115]


def test_submit_rate_command_reports_switch_tick():
    reg = make_registry(accel_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", 20, 0)], reg)
    kernel = AcquisitionKernel(reg, sched)
    for _ in range(48):
        kernel.step()
    cmd, effective = kernel.submit_rate_command("wrist-1", 10)
    assert cmd.issued_at_tick == 48 and effective == 60
    rest = list(kernel.run(100))
    ticks = [s.tick for s in rest if isinstance(s, RawSample)]
    assert ticks == [60, 70, 80, 90]


def test_command_queue_many_writers():
    q = CommandQueue()

    def writer(k):
        for i in range(100):
            q.put(RateCommand(f"s{k}", 10, i))

    threads = [threading.Thread(target=writer, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(q) == 400
    assert len(q.drain(49)) == 200
    assert len(q) == 200


# -- queues and pacing -----------------------------------------------------------------

def test_sample_queue_policies():
    q = SampleQueue(2, "drop-newest")
    assert q.put(1) and q.put(2)
    assert not q.put(3)
    assert q.dropped == 1
    q.close()
    assert list(q) == [1, 2]

    q = SampleQueue(1, "fail")
    q.put(1)
    with pytest.raises(QueueOverflow):
        q.put(2)


def test_block_policy_is_lossless():
    reg = make_registry(accel_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", 1)], reg)
    kernel = AcquisitionKernel(reg, sched)
    q = SampleQueue(8, "block")
    producer = threading.Thread(target=kernel.run_into, args=(q, 500))
    producer.start()
    items = list(q)
    producer.join()
    assert [s.sequence_no for s in items[:-1]] == list(range(500))
    assert isinstance(items[-1], RunSummary)


def test_fail_policy_raises_overflow():
    reg = make_registry(accel_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", 1)], reg)
    kernel = AcquisitionKernel(reg, sched)
    with pytest.raises(QueueOverflow):
        kernel.run_into(SampleQueue(4, "fail"), 100)


def test_realtime_pacing_changes_timing_not_content():
    import time

    def run(mode):
        reg = make_registry(accel_descriptor())
        sched = build_schedule([ScheduleEntry("wrist-1", 10)], reg)
        return list(run_acquisition(sched, reg, 200, clock=TickClock(1000, mode)))

    start = time.monotonic()
    paced = run(PacingMode.REALTIME)
    elapsed = time.monotonic() - start
    assert paced == run(PacingMode.FAST)
    assert elapsed >= 0.18


def test_clock_advances_by_one_per_step():
    reg = make_registry(accel_descriptor())
    sched = build_schedule([ScheduleEntry("wrist-1", 10)], reg)
    kernel = AcquisitionKernel(reg, sched)
    seen = []
    for _ in range(5):
        kernel.step()
        seen.append(kernel.clock.current_tick)
    assert seen == [1, 2, 3, 4, 5]
    with pytest.raises(ValueError):
        TickClock(0)
