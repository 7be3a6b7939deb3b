"""Extended equivalent-thermal-parameter model of one model house.

Four lumped nodes exchange heat::

    C_w dT_w/dt = H_m (T_a - T_w) + Q_w
    C_r dT_a/dt = U_a (T_amb - T_a) + H_m (T_w - T_a) + H_1 (T_1 - T_a)
    C_1 dT_1/dt = H_1 (T_a - T_1) - Q_c
    C_2 dT_2/dt = H_2 (T_amb - T_2) + Q_c + W

with the single-speed compressor lifting ``Q_c = A exp(-(L/R)/T_1) / T_1``
from the evaporator at electrical cost ``W = gamma Q_c (T_2 - T_1)/T_1 + W_fric``
while ON, and nothing while OFF.  All heat that enters the house from pumps,
fans and the programmable heater is lumped into ``Q_w``.

Temperatures are °C everywhere except the compressor laws, which take kelvin.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K

WATER_HEAT_CAPACITY = 4186.0  # J/(kg·°C)
LITRES_PER_GALLON = 3.785411784
NAMEPLATE_COOLING_W = 1465.0  # 5000 BTU/h
NAMEPLATE_T1_K = 300.0

# R-410A saturation (bubble) pressure, kPa absolute
R410A_SATURATION: tuple[tuple[float, float], ...] = (
    (-20.0, 399.6),
    (-10.0, 573.1),
    (0.0, 798.7),
    (10.0, 1085.7),
    (20.0, 1444.4),
    (30.0, 1885.8),
    (40.0, 2420.6),
    (50.0, 3062.1),
)

DEFAULT_DT = 0.1
EVENT_TOL = 1e-3


class ModelDomainError(ValueError):
    """A physical law was evaluated outside its domain."""


class IntegrationError(RuntimeError):
    """The ODE integration produced non-finite values or was misconfigured."""


class Mode(str, Enum):
    ON = "ON"
    OFF = "OFF"

    def flipped(self) -> "Mode":
        return Mode.OFF if self is Mode.ON else Mode.ON


class Event(str, Enum):
    REACHED_T_MINUS = "REACHED_T_MINUS"
    REACHED_T_PLUS = "REACHED_T_PLUS"
    HORIZON = "HORIZON"


_EVENT_CODES = {
    K.EV_HORIZON: Event.HORIZON,
    K.EV_T_MINUS: Event.REACHED_T_MINUS,
    K.EV_T_PLUS: Event.REACHED_T_PLUS,
}


def tank_heat_capacity(gallons: float) -> float:
    """Heat capacity (J/°C) of a water heater tank holding ``gallons``."""
    return gallons * LITRES_PER_GALLON * WATER_HEAT_CAPACITY


def fit_latent_ratio(
    table: Sequence[tuple[float, float]] = R410A_SATURATION,
    t_min: float = -10.0,
    t_max: float = 40.0,
) -> float:
    """Least-squares L/R (K) for ``P ∝ exp(-(L/R)/T)`` over a saturation table.

    ``table`` rows are (temperature °C, pressure in any unit).  Only rows with
    ``t_min <= T <= t_max`` enter the fit.
    """
    rows = [(t, p) for t, p in table if t_min <= t <= t_max]
    if len(rows) < 2:
        raise ValueError("need at least two saturation points in range")
    inv_t = np.array([1.0 / (t + K.KELVIN) for t, _ in rows])
    log_p = np.log([p for _, p in rows])
    slope, _ = np.polyfit(inv_t, log_p, 1)
    return float(-slope)


DEFAULT_L_OVER_R = 2375.0


def amplitude_for_nameplate(
    l_over_r: float, q_nominal: float = NAMEPLATE_COOLING_W, t1_k: float = NAMEPLATE_T1_K
) -> float:
    """Compressor constant A giving ``q_nominal`` watts of lift at ``t1_k``."""
    return q_nominal * t1_k * math.exp(l_over_r / t1_k)


@dataclass(frozen=True)
class HouseParams:
    """Thermal, compressor and thermostat constants for one house.

    Heat capacities in J/°C, conductances in W/°C, powers in W, times in s.
    """

    c_w: float = tank_heat_capacity(20)
    c_r: float = 2.2e3
    c_1: float = 5.0e3
    c_2: float = 5.0e3
    u_a: float = 5.0
    h_m: float = 150.0
    h_1: float = 150.0
    h_2: float = 120.0
    l_over_r: float = DEFAULT_L_OVER_R
    a_comp: float = field(default=float("nan"))
    gamma: float = 1.5
    w_fric: float = 320.0
    f_hm: float = 0.8
    q_fixed: float = 125.0
    setpoint: float = 23.0
    deadband_width: float = 1.5
    lockout: float = 180.0
    min_on: float = 0.0

    def __post_init__(self) -> None:
        if math.isnan(self.a_comp):
            object.__setattr__(self, "a_comp", amplitude_for_nameplate(self.l_over_r))
        for name in ("c_w", "c_r", "c_1", "c_2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"heat capacity {name} must be > 0")
        for name in ("u_a", "h_m", "h_1", "h_2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"conductance {name} must be > 0")
        if not 0.0 <= self.f_hm <= 1.0:
            raise ValueError("f_hm must lie in [0, 1]")
        if not self.gamma >= 1.0:
            raise ValueError("gamma must be >= 1")
        if self.w_fric < 0:
            raise ValueError("w_fric must be >= 0")
        if not self.deadband_width > 0:
            raise ValueError("deadband_width must be > 0")
        if self.lockout < 0 or self.min_on < 0:
            raise ValueError("lockout and min_on must be >= 0")
        if self.q_fixed < 0:
            raise ValueError("q_fixed must be >= 0")
        if not (self.a_comp > 0 and self.l_over_r > 0):
            raise ValueError("a_comp and l_over_r must be > 0")
        q = self.a_comp * math.exp(-self.l_over_r / NAMEPLATE_T1_K) / NAMEPLATE_T1_K
        if not (math.isfinite(q) and q > 0):
            raise ValueError("compressor constants give no finite cooling at 300 K")

    @property
    def t_minus(self) -> float:
        return self.setpoint - self.deadband_width / 2

    @property
    def t_plus(self) -> float:
        return self.setpoint + self.deadband_width / 2

    def replace(self, **changes) -> "HouseParams":
        # keep A tied to L/R unless the caller sets it explicitly
        if "l_over_r" in changes and "a_comp" not in changes:
            changes["a_comp"] = float("nan")
        return replace(self, **changes)

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_array(self) -> np.ndarray:
        p = np.empty(K.N_P)
        p[K.P_CW], p[K.P_CR], p[K.P_C1], p[K.P_C2] = self.c_w, self.c_r, self.c_1, self.c_2
        p[K.P_UA], p[K.P_HM], p[K.P_H1], p[K.P_H2] = self.u_a, self.h_m, self.h_1, self.h_2
        p[K.P_A], p[K.P_LR] = self.a_comp, self.l_over_r
        p[K.P_GAMMA], p[K.P_WFRIC], p[K.P_FHM] = self.gamma, self.w_fric, self.f_hm
        return p


@dataclass(frozen=True)
class HouseState:
    t_w: float
    t_a: float
    t_1: float
    t_2: float
    mode: Mode = Mode.OFF
    time_in_mode: float = 0.0
    time_since_off: float = math.inf
    clock: float = 0.0

    @classmethod
    def initial(cls, params: HouseParams, t_amb: float, mode: Mode = Mode.OFF) -> "HouseState":
        """Mid-deadband start with the compressor immediately switchable."""
        sp = params.setpoint
        return cls(sp, sp, sp, t_amb, mode, 0.0, params.lockout, 0.0)

    def temperatures(self) -> np.ndarray:
        return np.array([self.t_w, self.t_a, self.t_1, self.t_2])


@dataclass(frozen=True)
class AmbientInput:
    """Outside temperature: a constant or a piecewise-linear profile.

    Profile rows are (time s, °C); values are clamped outside the breakpoints.
    """

    t_amb: float = 24.0
    profile: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if not math.isfinite(self.t_amb):
            raise ValueError("t_amb must be finite")
        times = [t for t, _ in self.profile]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("ambient profile times must be strictly increasing")
        if not all(math.isfinite(v) for _, v in self.profile):
            raise ValueError("ambient profile values must be finite")

    def at(self, t: float) -> float:
        if not self.profile:
            return self.t_amb
        times, values = zip(*self.profile)
        return float(np.interp(t, times, values))


AmbientLike = AmbientInput | float | Callable[[float], float]


def _ambient_at(ambient: AmbientLike, t: float) -> float:
    if isinstance(ambient, AmbientInput):
        return ambient.at(t)
    if callable(ambient):
        return float(ambient(t))
    return float(ambient)


def cooling_power(t_1: float, params: HouseParams) -> float:
    """Heat lifted from the evaporator (W) at absolute temperature ``t_1`` (K)."""
    if not t_1 > 0:
        raise ModelDomainError(f"absolute temperature must be positive, got {t_1}")
    return K.cooling_power_k(float(t_1), params.a_comp, params.l_over_r)


def compressor_power(q_c: float, t_1: float, t_2: float, params: HouseParams) -> float:
    """Electrical power (W) while lifting ``q_c`` from ``t_1`` to ``t_2`` (both K).

    The friction term is billed whenever this is called; an OFF compressor draws
    nothing and callers must not call this for it.
    """
    if not t_1 > 0:
        raise ModelDomainError(f"absolute temperature must be positive, got {t_1}")
    if q_c < 0:
        raise ModelDomainError("q_c must be >= 0")
    return K.compressor_power_k(float(q_c), float(t_1), float(t_2), params.gamma, params.w_fric)


def electrical_power(state: HouseState, params: HouseParams) -> float:
    """Compressor draw for ``state``: zero when OFF."""
    if state.mode is Mode.OFF:
        return 0.0
    t1k = state.t_1 + K.KELVIN
    qc = cooling_power(t1k, params)
    return compressor_power(qc, t1k, state.t_2 + K.KELVIN, params)


def derivatives(
    state: HouseState, q_w: float, ambient: AmbientLike, params: HouseParams
) -> np.ndarray:
    """Time derivatives (°C/s) of ``(t_w, t_a, t_1, t_2)``."""
    if q_w < 0:
        raise ValueError("q_w must be >= 0")
    if state.mode is Mode.ON and not state.t_1 + K.KELVIN > 0:
        raise ModelDomainError("evaporator below absolute zero")
    y = np.zeros(K.N_Y)
    y[:4] = state.temperatures()
    out = np.empty(K.N_Y)
    K.rhs(y, state.mode is Mode.ON, float(q_w), _ambient_at(ambient, state.clock),
          params.to_array(), out)
    return out[:4].copy()


def thermostat_temperature(state: HouseState, params: HouseParams) -> float:
    """Temperature seen by the thermostat: air blended toward the water by f_hm."""
    return (1.0 - params.f_hm) * state.t_a + params.f_hm * state.t_w


def effective_coupling(air_speed: float, h: float, rho: float = 1.2, cp: float = 1005.0) -> float:
    """Thermometer-to-water coupling implied by the air speed at the sensor.

    Balancing the heat-exchanger flux ``h (T_w - T_a)`` against the advected
    flux ``rho cp v (T_therm - T_a)`` gives ``h / (rho cp v)``, clipped to [0, 1].
    """
    if not (air_speed > 0 and h > 0 and rho > 0 and cp > 0):
        raise ModelDomainError("air_speed, h, rho and cp must all be > 0")
    return min(1.0, h / (rho * cp * air_speed))


@dataclass(frozen=True)
class EventResult:
    state: HouseState
    event: Event
    elapsed: float
    flows: np.ndarray  # heat-flow integrals over the call, J (layout of _kernels.ACC_*)


def pack_state(state: HouseState) -> np.ndarray:
    y = np.zeros(K.N_Y)
    y[:4] = state.temperatures()
    return y


def integrate_to_event(
    state: HouseState,
    q_w: float,
    ambient: AmbientLike,
    params: HouseParams,
    horizon: float,
    dt: float = DEFAULT_DT,
    tol: float = EVENT_TOL,
    detect: bool = True,
) -> EventResult:
    """Advance one house with its compressor mode frozen.

    Stops early when the thermostat temperature falls to T- (while ON) or rises
    to T+ (while OFF).  The mode is never changed here.  ``q_w`` and the ambient
    temperature (sampled at ``state.clock``) are held for the whole call.
    """
    if not horizon > 0 or not dt > 0 or not tol > 0:
        raise IntegrationError("horizon, dt and tol must be > 0")
    on = state.mode is Mode.ON
    if detect:
        threshold, direction = (params.t_minus, -1) if on else (params.t_plus, 1)
    else:
        threshold, direction = 0.0, 0
    y = pack_state(state)
    t_amb = _ambient_at(ambient, state.clock)
    elapsed, code = K.integrate(y, on, float(q_w), t_amb, params.to_array(),
                                threshold, direction, float(horizon), float(dt), float(tol))
    if code == K.EV_ERROR:
        raise IntegrationError(
            f"non-finite state after {elapsed:.3f} s from t={state.clock:.3f} s "
            f"(mode={state.mode.value}, q_w={q_w}, t_amb={t_amb}, y={y[:4]})"
        )
    new = HouseState(
        float(y[0]), float(y[1]), float(y[2]), float(y[3]),
        state.mode,
        state.time_in_mode + elapsed,
        state.time_since_off + elapsed,
        state.clock + elapsed,
    )
    return EventResult(new, _EVENT_CODES[code], elapsed, y[4:].copy())


def node_energy_residuals(
    start: HouseState, end: HouseState, flows: np.ndarray, params: HouseParams
) -> np.ndarray:
    """Per-node mismatch (J) between stored-heat change and integrated flows."""
    q_w, leak, hm, h1, qc, w, cond = (flows[i - 4] for i in range(4, K.N_Y))
    return np.array([
        params.c_w * (end.t_w - start.t_w) - (hm + q_w),
        params.c_r * (end.t_a - start.t_a) - (leak - hm - h1),
        params.c_1 * (end.t_1 - start.t_1) - (h1 - qc),
        params.c_2 * (end.t_2 - start.t_2) - (cond + qc + w),
    ])
