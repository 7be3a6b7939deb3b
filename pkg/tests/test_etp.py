import dataclasses
import math
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cooling_ratio_decimal, euler_time_to_threshold, network_derivatives
from tcl_testbed.etp import (
    R410A_SATURATION,
    AmbientInput,
    Event,
    HouseParams,
    HouseState,
    IntegrationError,
    Mode,
    ModelDomainError,
    amplitude_for_nameplate,
    compressor_power,
    cooling_power,
    derivatives,
    effective_coupling,
    electrical_power,
    fit_latent_ratio,
    integrate_to_event,
    tank_heat_capacity,
    thermostat_temperature,
)

# frozen from the decimal oracle in tests/oracles.py (50 significant digits)
RATIO_290_300_LR2600 = Decimal("0.76724506080207699967020020388560518550011519290108")
COUPLING_12_012 = 0.9950248756218905
A_LR2375 = 1205378741.464750358058449582142434876496
LR_FIT = 2373.649855804774063040509390566023652406


def test_cooling_power_is_pure():
    p = HouseParams()
    assert cooling_power(288.0, p) == cooling_power(288.0, p)


def test_nameplate_amplitude():
    p = HouseParams()
    assert cooling_power(300.0, p) == pytest.approx(1465.0, rel=1e-12)
    assert p.a_comp == pytest.approx(1465.0 * 300.0 * math.exp(p.l_over_r / 300.0), rel=1e-12)
    assert amplitude_for_nameplate(2375.0) == pytest.approx(A_LR2375, rel=1e-12)


def test_cooling_ratio_matches_decimal_oracle():
    p = HouseParams(a_comp=1.0, l_over_r=2600.0)
    ratio = cooling_power(290.0, p) / cooling_power(300.0, p)
    assert ratio == pytest.approx(float(RATIO_290_300_LR2600), rel=1e-12)
    # the frozen constant and a fresh oracle evaluation agree
    assert cooling_ratio_decimal("1", "2600", "300", "290") == RATIO_290_300_LR2600


@pytest.mark.parametrize("t", [0.0, -5.0])
def test_cooling_power_domain(t):
    with pytest.raises(ModelDomainError):
        cooling_power(t, HouseParams())


@given(lr=st.floats(1000.0, 5000.0))
def test_cooling_power_monotone_on_grid(lr):
    p = HouseParams(l_over_r=lr)
    grid = np.linspace(270.0, 320.0, 101)
    q = np.array([cooling_power(t, p) for t in grid])
    assert np.all(np.diff(q) > 0)


def test_compressor_power_examples():
    p = HouseParams(gamma=1.0, w_fric=50.0)
    assert compressor_power(1000.0, 280.0, 308.0, p) == pytest.approx(150.0, rel=1e-12)
    assert compressor_power(777.0, 295.0, 295.0, HouseParams()) == HouseParams().w_fric
    with pytest.raises(ModelDomainError):
        compressor_power(100.0, 0.0, 300.0, p)
    with pytest.raises(ModelDomainError):
        compressor_power(-1.0, 290.0, 300.0, p)


def test_off_compressor_draws_nothing():
    p = HouseParams()
    s = HouseState(25.0, 25.0, 10.0, 40.0, Mode.OFF)
    assert electrical_power(s, p) == 0.0
    assert electrical_power(dataclasses.replace(s, mode=Mode.ON), p) > p.w_fric


def test_global_equilibrium_is_stationary():
    p = HouseParams()
    s = HouseState(27.0, 27.0, 27.0, 27.0, Mode.OFF)
    assert np.array_equal(derivatives(s, 0.0, AmbientInput(27.0), p), np.zeros(4))


def test_analytic_fixed_point_is_stationary():
    p = HouseParams(u_a=5.0, h_m=25.0)
    s = HouseState(37.0, 35.0, 35.0, 25.0, Mode.OFF)
    assert np.allclose(derivatives(s, 50.0, 25.0, p), 0.0, atol=1e-15)


def test_negative_heat_rejected():
    with pytest.raises(ValueError):
        derivatives(HouseState.initial(HouseParams(), 24.0), -1.0, 24.0, HouseParams())


@settings(max_examples=200)
@given(
    temps=st.lists(st.floats(-5.0, 60.0), min_size=4, max_size=4),
    on=st.booleans(),
    q_w=st.floats(0.0, 2000.0),
    t_amb=st.floats(-10.0, 45.0),
    scale=st.lists(st.floats(0.5, 2.0), min_size=6, max_size=6),
    f_hm=st.floats(0.0, 1.0),
)
def test_derivatives_match_network_oracle(temps, on, q_w, t_amb, scale, f_hm):
    base = HouseParams()
    p = base.replace(c_r=base.c_r * scale[0], c_1=base.c_1 * scale[1], u_a=base.u_a * scale[2],
                     h_m=base.h_m * scale[3], h_1=base.h_1 * scale[4], h_2=base.h_2 * scale[5],
                     f_hm=f_hm)
    s = HouseState(*temps, Mode.ON if on else Mode.OFF)
    ours = derivatives(s, q_w, t_amb, p)
    ref = network_derivatives(temps, on, q_w, t_amb, p.as_dict())
    assert np.allclose(ours, ref, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("f,expected", [(0.0, 24.0), (1.0, 30.0), (0.5, 27.0)])
def test_thermostat_temperature_examples(f, expected):
    s = HouseState(30.0, 24.0, 20.0, 30.0)
    assert thermostat_temperature(s, HouseParams(f_hm=f)) == expected


@given(f=st.floats(0.0, 1.0), ta=st.floats(-20, 60), tw=st.floats(-20, 60))
def test_thermostat_temperature_is_convex_combination(f, ta, tw):
    t = thermostat_temperature(HouseState(tw, ta, 0.0, 0.0), HouseParams(f_hm=f))
    assert min(ta, tw) - 1e-12 <= t <= max(ta, tw) + 1e-12


def test_effective_coupling():
    assert effective_coupling(0.01, 12.0) == pytest.approx(COUPLING_12_012, rel=1e-15)
    assert effective_coupling(1e-6, 12.0) == 1.0
    assert effective_coupling(1e6, 12.0) < 1e-6
    assert effective_coupling(1.0, 12.0) == pytest.approx(2 * effective_coupling(2.0, 12.0))
    for bad in [dict(air_speed=0.0, h=12.0), dict(air_speed=1.0, h=-1.0),
                dict(air_speed=1.0, h=1.0, rho=0.0)]:
        with pytest.raises(ModelDomainError):
            effective_coupling(**bad)


def test_latent_ratio_fit_record():
    assert fit_latent_ratio() == pytest.approx(LR_FIT, rel=1e-9)
    assert abs(HouseParams().l_over_r - LR_FIT) < 2.0
    assert len(R410A_SATURATION) >= 6


def test_tank_capacity():
    assert tank_heat_capacity(20) == pytest.approx(317e3, rel=0.01)
    assert tank_heat_capacity(30) == pytest.approx(476e3, rel=0.01)


@pytest.mark.parametrize("bad", [dict(c_w=0.0), dict(h_m=-1.0), dict(f_hm=1.5), dict(gamma=0.9),
                                 dict(w_fric=-1.0), dict(deadband_width=0.0),
                                 dict(lockout=-1.0), dict(a_comp=-1.0)])
def test_param_invariants(bad):
    with pytest.raises(ValueError):
        HouseParams(**bad)


def test_overload_never_reaches_lower_limit():
    p = HouseParams()
    s = HouseState.initial(p, 24.0, Mode.ON)
    r = integrate_to_event(s, 3000.0, 24.0, p, horizon=4 * 3600.0)
    assert r.event is Event.HORIZON
    assert thermostat_temperature(r.state, p) > p.t_minus


def test_event_time_matches_euler_oracle():
    p = HouseParams()
    y0 = [p.t_minus] * 3 + [24.0]
    s = HouseState(*y0, Mode.OFF, 0.0, 1e9)
    r = integrate_to_event(s, 250.0 + p.q_fixed, 24.0, p, horizon=1e5)
    assert r.event is Event.REACHED_T_PLUS
    ref = euler_time_to_threshold(p.as_dict(), y0, 250.0 + p.q_fixed, 24.0, False,
                                  p.t_plus, True)
    assert ref > 0
    assert abs(r.elapsed - ref) <= 0.005 * ref


def test_tiny_horizon():
    p = HouseParams()
    s = HouseState.initial(p, 24.0)
    r = integrate_to_event(s, 300.0, 24.0, p, horizon=0.001)
    assert r.event is Event.HORIZON
    assert r.elapsed == pytest.approx(0.001)
    assert r.state.clock == pytest.approx(0.001)
    assert np.allclose(r.state.temperatures(), s.temperatures(), atol=1e-5)


@pytest.mark.parametrize("kw", [dict(horizon=0.0), dict(horizon=1.0, dt=0.0),
                                dict(horizon=-1.0)])
def test_integrator_rejects_bad_steps(kw):
    p = HouseParams()
    with pytest.raises(IntegrationError):
        integrate_to_event(HouseState.initial(p, 24.0), 100.0, 24.0, p, **kw)


def test_overflow_is_reported():
    p = HouseParams()
    s = HouseState.initial(p, 30.0)
    # a step far beyond the explicit stability limit blows the state up
    with pytest.raises(IntegrationError, match="non-finite"):
        integrate_to_event(s, 100.0, 30.0, p, horizon=1e6, dt=500.0, detect=False)


def _cycle_events(p, q=375.0, amb=24.0, n=8):
    """State at each of the first n thermostat events, with the mode still un-flipped."""
    s = HouseState.initial(p, amb)
    out = []
    for _ in range(n):
        r = integrate_to_event(s, q, amb, p, 1e5)
        assert r.event is not Event.HORIZON
        out.append(r)
        s = dataclasses.replace(r.state, mode=s.mode.flipped(), time_in_mode=0.0,
                                time_since_off=0.0 if s.mode is Mode.ON else r.state.time_since_off)
    return out


@pytest.mark.parametrize("f_hm", [0.0, 0.5, 0.8])
def test_events_land_on_deadband_edges(f_hm):
    p = HouseParams(f_hm=f_hm)
    for r in _cycle_events(p):
        s = r.state
        t = thermostat_temperature(s, p)
        rate = abs(float(np.dot([f_hm, 1 - f_hm, 0, 0],
                                derivatives(s, 375.0, 24.0, p))))
        edge = p.t_minus if r.event is Event.REACHED_T_MINUS else p.t_plus
        assert abs(t - edge) <= rate * 1e-3 + 1e-12


def test_evaporator_colder_than_room_while_on():
    p = HouseParams()
    q, amb = 375.0, 24.0
    last = _cycle_events(p, q, amb, 5)[-1]  # fifth event: OFF phase reaches T+
    assert last.event is Event.REACHED_T_PLUS
    s = dataclasses.replace(last.state, mode=Mode.ON, time_in_mode=0.0)
    while True:
        r = integrate_to_event(s, q, amb, p, 1.0)
        assert r.state.t_1 <= r.state.t_a
        s = r.state
        if r.event is not Event.HORIZON:
            break


def test_mean_on_power_rises_with_ambient():
    means = []
    for amb in (20.0, 24.0, 28.0, 32.0):
        p = HouseParams()
        s = HouseState.initial(p, amb)
        draws = []
        for r_idx in range(10):
            r = integrate_to_event(s, 375.0, amb, p, 1e5)
            s = dataclasses.replace(r.state, mode=s.mode.flipped(), time_in_mode=0.0,
                                    time_since_off=0.0 if s.mode is Mode.ON else
                                    r.state.time_since_off)
            if s.mode is Mode.ON and r_idx >= 4:
                x = s
                while True:
                    rr = integrate_to_event(x, 375.0, amb, p, 5.0)
                    x = rr.state
                    draws.append(electrical_power(x, p))
                    if rr.event is not Event.HORIZON:
                        break
        means.append(np.mean(draws))
    assert all(b > a for a, b in zip(means, means[1:]))
