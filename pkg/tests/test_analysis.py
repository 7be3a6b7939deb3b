import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcl_testbed import analysis
from tcl_testbed.analysis import InsufficientDataError
from tcl_testbed.etp import Mode
from tcl_testbed.fleet import Cause, FleetSpec, SwitchEvent, SwitchLog, build_fleet
from tcl_testbed.telemetry import TraceWriter, read_trace_csv


def square_log(on_s, off_s, n, phase=0.0, houses=1):
    log = SwitchLog(houses)
    for h in range(houses):
        t = phase * h
        for _ in range(n):
            log.record(SwitchEvent(t, h, Mode.OFF, Cause.THERMOSTAT))
            log.record(SwitchEvent(t + off_s, h, Mode.ON, Cause.THERMOSTAT))
            t += off_s + on_s
        log.record(SwitchEvent(t, h, Mode.OFF, Cause.THERMOSTAT))
    return log


def test_square_wave_duty():
    log = square_log(300.0, 700.0, 10)
    d = analysis.duty_cycle(log, 0)
    assert d.percent == pytest.approx(30.0)
    assert d.n_cycles == 7  # three warm-up cycles dropped
    stats = analysis.cycle_durations(log)[0]
    assert (stats.on_s, stats.off_s, stats.full_s) == pytest.approx((300.0, 700.0, 1000.0))


@given(on=st.floats(1.0, 5000.0), off=st.floats(1.0, 5000.0))
def test_duty_of_any_square_wave(on, off):
    d = analysis.duty_cycle(square_log(on, off, 5), 0, warmup_cycles=0)
    assert d.percent == pytest.approx(100 * on / (on + off), rel=1e-9)
    assert 0.0 < d.percent < 100.0


def test_duty_edge_cases():
    log = SwitchLog(3)
    log.record(SwitchEvent(5.0, 0, Mode.ON, Cause.THERMOSTAT))
    assert analysis.duty_cycle(log, 0) == analysis.DutyCycle(100.0, 0, "no complete cycle")
    assert analysis.duty_cycle(log, 1).percent is None
    log.record(SwitchEvent(5.0, 2, Mode.OFF, Cause.THERMOSTAT))
    assert analysis.duty_cycle(log, 2).percent == 0.0
    assert analysis.cycle_durations(log) == {0: None, 1: None, 2: None}
    assert analysis.fleet_cycle_stats(log) is None


def test_fleet_stats_pool_cycles():
    log = SwitchLog(2)
    for h, (on, off) in enumerate([(100.0, 300.0), (200.0, 200.0)]):
        t = 0.0
        for _ in range(2):
            log.record(SwitchEvent(t, h, Mode.OFF, Cause.THERMOSTAT))
            log.record(SwitchEvent(t + off, h, Mode.ON, Cause.THERMOSTAT))
            t += on + off
        log.record(SwitchEvent(t, h, Mode.OFF, Cause.THERMOSTAT))
    pooled = analysis.fleet_cycle_stats(log, warmup_cycles=0)
    assert pooled.n_cycles == 4
    assert pooled.on_s == pytest.approx(150.0)
    assert pooled.duty_pct == pytest.approx(37.5)


def mode_runs(modes):
    """Lengths of maximal runs of equal values, as (value, length)."""
    runs = []
    for m in modes:
        if runs and runs[-1][0] == m:
            runs[-1][1] += 1
        else:
            runs.append([m, 1])
    return runs


def test_cycles_agree_with_sampled_mode_column(tmp_path):
    # Oracle: count 1 s samples per ON and OFF run in the trace file. Each run
    # length is within one sample of the event-based duration.
    fleet = build_fleet(FleetSpec(n_houses=3, rng_seed=12))
    path = tmp_path / "trace.csv"
    with open(path, "w", newline="", encoding="utf-8") as f:
        tw = TraceWriter(f)
        for _ in range(6 * 3600):
            fleet.advance(1.0)
            tw.write(fleet)
    tr = read_trace_csv(path)
    for h in range(3):
        runs = mode_runs(list(tr["mode"][tr["house_id"] == h]))[1:-1]  # drop clipped ends
        ev = fleet.log.house(h)
        spans = [(b.time - a.time, a.mode.value) for a, b in zip(ev, ev[1:])]
        assert len(runs) == len(spans)
        for (mode, n), (dur, emode) in zip(runs, spans):
            assert mode == emode
            assert abs(n - dur) <= 1.0
        sampled_on = np.mean([n for m, n in runs if m == "ON"])
        stats = analysis.house_cycle_stats(ev, warmup_cycles=0)
        assert abs(sampled_on - stats.on_s) <= 1.0


def test_histogram():
    temps = np.linspace(21.0, 25.0, 401)
    modes = [Mode.ON if k % 2 else Mode.OFF for k in range(401)]
    counts, edges = analysis.temperature_histogram(temps, modes, Mode.OFF, 4, (21.0, 25.0))
    assert counts.sum() == 201
    assert np.allclose(edges, [21, 22, 23, 24, 25])
    assert max(counts) - min(counts) <= 2
    counts, _ = analysis.temperature_histogram(temps, ["ON"] * 401, Mode.OFF, 3, (21.0, 25.0))
    assert counts.sum() == 0


def test_histogram_errors():
    with pytest.raises(InsufficientDataError):
        analysis.temperature_histogram([], [], Mode.ON, 5)
    with pytest.raises(ValueError):
        analysis.temperature_histogram([1.0], [Mode.ON], Mode.ON, 0)
    with pytest.raises(ValueError):
        analysis.temperature_histogram([1.0, 2.0], [Mode.ON], Mode.ON, 2)


def test_power_fit_recovers_slope():
    rng = np.random.default_rng(3)
    amb = np.repeat(np.arange(20.0, 33.0), 50)
    base = 1200.0 * (1 + 0.0136 * (amb - 26.0))
    fit = analysis.power_temperature_fit(base + rng.normal(0, 2.0, amb.size), amb,
                                         reference_ambient=26.0)
    assert fit.slope_pct_per_c == pytest.approx(1.36, abs=0.02)
    assert fit.reference_power == pytest.approx(1200.0, rel=1e-3)
    assert fit.n_samples == amb.size


def test_power_fit_drops_start_up():
    amb = np.array([20.0, 20.0, 30.0, 30.0])
    power = np.array([9999.0, 100.0, 9999.0, 110.0])
    age = np.array([0.0, 100.0, 5.0, 100.0])
    fit = analysis.power_temperature_fit(power, amb, age)
    assert fit.slope_w_per_c == pytest.approx(1.0)
    assert fit.n_samples == 2
    with pytest.raises(InsufficientDataError):
        analysis.power_temperature_fit([1.0, 2.0], [25.0, 25.0])


def test_circular_variance():
    assert analysis.circular_variance([1.3] * 5) == pytest.approx(0.0, abs=1e-15)
    assert analysis.circular_variance([0.0, math.pi]) == pytest.approx(1.0)
    assert analysis.circular_variance([0.0, 2 * math.pi]) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InsufficientDataError):
        analysis.circular_variance([])


@settings(max_examples=50)
@given(st.lists(st.floats(-100.0, 100.0), min_size=1, max_size=30))
def test_circular_variance_bounded_and_shift_invariant(phases):
    v = analysis.circular_variance(phases)
    assert 0.0 <= v <= 1.0
    assert analysis.circular_variance([p + 1.0 for p in phases]) == pytest.approx(v, abs=1e-9)


def test_dephasing_synthetic():
    same = square_log(300.0, 700.0, 6, houses=3)
    d = analysis.dephasing_metric(same, -1.0, 5)
    assert d.period_s == pytest.approx(1000.0)
    assert max(d.circular_variance) < 1e-12
    assert d.houses_per_cycle == [3] * 5


def test_dephasing_errors():
    with pytest.raises(InsufficientDataError):
        analysis.dephasing_metric(square_log(1.0, 1.0, 5), 0.0)
    with pytest.raises(InsufficientDataError):
        analysis.dephasing_metric(SwitchLog(3), 0.0)
