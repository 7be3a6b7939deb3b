"""A seeded, heterogeneous ensemble of model houses advanced on a latch clock.

Houses never read each other's state; the fleet only shares the clock, the
ambient temperature and the switch log.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels as K
from .etp import (
    DEFAULT_DT,
    EVENT_TOL,
    AmbientInput,
    HouseParams,
    HouseState,
    IntegrationError,
    Mode,
    tank_heat_capacity,
)
from .switching import SwitchRequest, Verdict, Reason, adjudicate, thermostat_decision

# slack for float round-off in dwell-time comparisons
DWELL_EPS = 1e-9

JITTER_FIELDS = (
    "c_w", "c_r", "c_1", "c_2", "u_a", "h_m", "h_1", "h_2",
    "a_comp", "gamma", "w_fric", "f_hm", "q_fixed",
)

DEFAULT_JITTER: Mapping[str, float] = {"q_fixed": 0.05, "h_m": 0.05, "u_a": 0.10, "f_hm": 0.005}


class ScheduleKind(str, Enum):
    CONSTANT = "CONSTANT"
    RANDOM_PERTURBED = "RANDOM_PERTURBED"
    PROFILE = "PROFILE"


@dataclass(frozen=True)
class HeatSchedule:
    """Programmable water-heater power.

    RANDOM_PERTURBED adds an Ornstein-Uhlenbeck perturbation with stationary
    standard deviation ``amplitude / 2``, bounded to ``±amplitude``.
    """

    kind: ScheduleKind = ScheduleKind.CONSTANT
    base_watts: float = 250.0
    amplitude: float = 0.0
    correlation_time: float = 600.0
    profile: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        object.__setattr__(self, "profile", tuple((float(t), float(w)) for t, w in self.profile))
        if self.base_watts < 0 or self.amplitude < 0:
            raise ValueError("base_watts and amplitude must be >= 0")
        if not self.correlation_time > 0:
            raise ValueError("correlation_time must be > 0")
        if self.kind is ScheduleKind.PROFILE:
            if not self.profile:
                raise ValueError("PROFILE schedule needs at least one breakpoint")
            times = [t for t, _ in self.profile]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError("profile breakpoints must be strictly increasing in time")
            if any(w < 0 for _, w in self.profile):
                raise ValueError("profile watts must be >= 0")


class PerturbationStream:
    """Seeded OU perturbation sampled on a fixed time grid.

    Values are generated lazily in grid order, so the value at any time depends
    only on the seed, never on the order of queries.
    """

    def __init__(self, rng: np.random.Generator, amplitude: float,
                 correlation_time: float, grid: float = 1.0) -> None:
        self._rng = rng
        self.amplitude = amplitude
        self.grid = grid
        self._rho = math.exp(-grid / correlation_time)
        self._sigma = amplitude / 2.0
        self._x: list[float] = []

    def _extend(self, n: int) -> None:
        need = n - len(self._x)
        if need <= 0:
            return
        noise = self._rng.standard_normal(max(need, 1024))
        x = self._x[-1] if self._x else None
        innov = self._sigma * math.sqrt(1.0 - self._rho**2)
        for z in noise:
            x = self._sigma * z if x is None else self._rho * x + innov * z
            self._x.append(x)

    def at(self, t: float) -> float:
        if self.amplitude == 0:
            return 0.0
        k = int(t // self.grid)
        self._extend(k + 1)
        return min(self.amplitude, max(-self.amplitude, self._x[k]))


def schedule_eval(schedule: HeatSchedule, t: float,
                  rng_stream: PerturbationStream | None = None) -> float:
    """Programmed heater power (W) at time ``t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if schedule.kind is ScheduleKind.CONSTANT:
        return schedule.base_watts
    if schedule.kind is ScheduleKind.PROFILE:
        times, watts = zip(*schedule.profile)
        return float(np.interp(t, times, watts))
    if schedule.amplitude == 0 or rng_stream is None:
        return schedule.base_watts
    return max(0.0, schedule.base_watts + rng_stream.at(t))


@dataclass(frozen=True)
class Heterogeneity:
    """Per-house parameter spread.

    ``jitter`` maps a HouseParams field to a relative half-width: each house
    draws ``value * (1 + U(-j, j))``.  A non-empty ``tank_gallons`` replaces
    ``c_w`` with a tank size chosen uniformly from the list.
    """

    jitter: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_JITTER))
    tank_gallons: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tank_gallons", tuple(self.tank_gallons))
        for name, frac in self.jitter.items():
            if name not in JITTER_FIELDS:
                raise ValueError(f"cannot jitter unknown field {name!r}")
            if not 0.0 <= frac <= 0.5:
                raise ValueError(f"jitter for {name} must lie in [0, 0.5], got {frac}")
        if any(g <= 0 for g in self.tank_gallons):
            raise ValueError("tank sizes must be > 0")


NO_SPREAD = Heterogeneity(jitter={})


@dataclass(frozen=True)
class FleetSpec:
    n_houses: int = 20
    base_params: HouseParams = field(default_factory=HouseParams)
    heterogeneity: Heterogeneity = field(default_factory=Heterogeneity)
    rng_seed: int = 0
    ambient: AmbientInput = field(default_factory=AmbientInput)
    schedules: HeatSchedule | tuple[HeatSchedule, ...] = field(default_factory=HeatSchedule)
    dt: float = DEFAULT_DT

    def __post_init__(self) -> None:
        if self.n_houses < 1:
            raise ValueError("n_houses must be >= 1")
        if isinstance(self.schedules, (list, tuple)):
            object.__setattr__(self, "schedules", tuple(self.schedules))
            if len(self.schedules) != self.n_houses:
                raise ValueError("need one schedule per house")
        if not self.dt > 0:
            raise ValueError("integrator dt must be > 0")

    def schedule_for(self, i: int) -> HeatSchedule:
        if isinstance(self.schedules, tuple):
            return self.schedules[i]
        return self.schedules


class Cause(str, Enum):
    THERMOSTAT = "THERMOSTAT"
    EXTERNAL = "EXTERNAL"


@dataclass(frozen=True)
class SwitchEvent:
    time: float
    house_id: int
    mode: Mode
    cause: Cause


SWITCH_LOG_HEADER = ("time_s", "house_id", "mode", "cause")


class SwitchLog:
    """Per-house record of compressor transitions."""

    def __init__(self, n_houses: int) -> None:
        self._by_house: list[list[SwitchEvent]] = [[] for _ in range(n_houses)]

    @property
    def n_houses(self) -> int:
        return len(self._by_house)

    def record(self, event: SwitchEvent) -> None:
        evs = self._by_house[event.house_id]
        if evs:
            last = evs[-1]
            if event.mode is last.mode:
                raise ValueError(f"house {event.house_id}: two {event.mode.value} events in a row")
            if not event.time > last.time:
                raise ValueError(f"house {event.house_id}: event at {event.time} s does not "
                                 f"follow {last.time} s")
        evs.append(event)

    def house(self, house_id: int) -> list[SwitchEvent]:
        return list(self._by_house[house_id])

    def events(self) -> list[SwitchEvent]:
        merged = [e for evs in self._by_house for e in evs]
        merged.sort(key=lambda e: (e.time, e.house_id))
        return merged

    def __len__(self) -> int:
        return sum(len(evs) for evs in self._by_house)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SwitchLog) and self._by_house == other._by_house

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(SWITCH_LOG_HEADER)
            for e in self.events():
                w.writerow([repr(float(e.time)), e.house_id, e.mode.value, e.cause.value])

    @classmethod
    def read_csv(cls, path: str | Path, n_houses: int | None = None) -> "SwitchLog":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        events = [SwitchEvent(float(r["time_s"]), int(r["house_id"]), Mode(r["mode"]),
                              Cause(r["cause"])) for r in rows]
        n = n_houses if n_houses is not None else 1 + max((e.house_id for e in events), default=-1)
        log = cls(n)
        for e in sorted(events, key=lambda e: (e.house_id, e.time)):
            log.record(e)
        return log

    @classmethod
    def from_events(cls, n_houses: int, events: Iterable[SwitchEvent]) -> "SwitchLog":
        log = cls(n_houses)
        for e in events:
            log.record(e)
        return log


class UnknownHouseError(KeyError):
    pass


class House:
    """Mutable per-house simulation record; the fleet owns all mutation."""

    __slots__ = ("house_id", "params", "p", "y", "mode", "t_mode", "t_off",
                 "schedule", "stream")

    def __init__(self, house_id: int, params: HouseParams, schedule: HeatSchedule,
                 stream: PerturbationStream, t_amb: float) -> None:
        self.house_id = house_id
        self.params = params
        self.p = params.to_array()
        self.y = np.zeros(K.N_Y)
        self.y[:4] = HouseState.initial(params, t_amb).temperatures()
        self.mode = Mode.OFF
        self.t_mode = 0.0  # clock of the last transition
        self.t_off = -params.lockout  # clock of the last ON->OFF, placed so restart is allowed
        self.schedule = schedule
        self.stream = stream

    def t_therm(self) -> float:
        f = self.params.f_hm
        return float((1.0 - f) * self.y[K.Y_TA] + f * self.y[K.Y_TW])

    def state(self, clock: float) -> HouseState:
        y = self.y
        return HouseState(float(y[0]), float(y[1]), float(y[2]), float(y[3]), self.mode,
                          clock - self.t_mode, clock - self.t_off, clock)

    def compressor_power(self) -> float:
        if self.mode is Mode.OFF:
            return 0.0
        t1k = self.y[K.Y_T1] + K.KELVIN
        qc = K.cooling_power_k(t1k, self.params.a_comp, self.params.l_over_r)
        return K.compressor_power_k(qc, t1k, self.y[K.Y_T2] + K.KELVIN,
                                    self.params.gamma, self.params.w_fric)

    def real_power(self) -> float:
        return self.compressor_power() + self.params.q_fixed


@dataclass(frozen=True)
class AdvanceResult:
    events: list[SwitchEvent]
    power: np.ndarray  # per-house real power at the end of the step, W


class Fleet:
    def __init__(self, spec: FleetSpec, houses: list[House]) -> None:
        self.spec = spec
        self.houses = houses
        self.clock = 0.0
        self.log = SwitchLog(len(houses))
        self._elapsed = 0.0

    @property
    def n_houses(self) -> int:
        return len(self.houses)

    def house(self, house_id: int) -> House:
        if not (isinstance(house_id, int) and 0 <= house_id < len(self.houses)):
            raise UnknownHouseError(house_id)
        return self.houses[house_id]

    def state(self, house_id: int) -> HouseState:
        return self.house(house_id).state(self.clock)

    def states(self) -> list[HouseState]:
        return [h.state(self.clock) for h in self.houses]

    def ambient(self) -> float:
        return self.spec.ambient.at(self.clock)

    def power(self) -> np.ndarray:
        return np.array([h.real_power() for h in self.houses])

    def aggregate_power(self) -> float:
        return float(sum(h.real_power() for h in self.houses))

    def electrical_energy(self, house_id: int) -> float:
        """Metered energy (J) since the fleet was built: compressor work plus fixed loads."""
        h = self.house(house_id)
        return float(h.y[K.ACC_W]) + h.params.q_fixed * self.clock

    def _switch(self, h: House, t: float, mode: Mode, cause: Cause) -> SwitchEvent:
        if mode is Mode.OFF:
            h.t_off = t
        h.mode = mode
        h.t_mode = t
        ev = SwitchEvent(t, h.house_id, mode, cause)
        self.log.record(ev)
        return ev

    def request(self, house_id: int, desired_mode: Mode) -> Verdict:
        """Adjudicate an external request at the current latch and apply it if accepted."""
        h = self.house(house_id)
        verdict = adjudicate(SwitchRequest(house_id, Mode(desired_mode), self.clock),
                             h.state(self.clock + DWELL_EPS), h.params)
        if verdict.reason is Reason.APPLIED:
            self._switch(h, self.clock, Mode(desired_mode), Cause.EXTERNAL)
        return verdict

    def _advance_house(self, h: House, dt: float, t_amb: float, events: list) -> None:
        params = h.params
        q_w = schedule_eval(h.schedule, self.clock, h.stream) + params.q_fixed
        start = self.clock
        t = 0.0
        while dt - t > 1e-12:
            now = start + t
            want = thermostat_decision(h.t_therm(), h.mode, params)
            on = h.mode is Mode.ON
            if want is not h.mode:
                if on:
                    wait = params.min_on - (now - h.t_mode)
                else:
                    wait = params.lockout - (now - h.t_off)
                if wait <= DWELL_EPS:
                    events.append(self._switch(h, now, want, Cause.THERMOSTAT))
                    continue
                horizon = min(wait, dt - t)
                threshold, direction = 0.0, 0
            else:
                horizon = dt - t
                threshold, direction = ((params.t_minus, -1) if on else (params.t_plus, 1))
            elapsed, code = K.integrate(h.y, on, q_w, t_amb, h.p, threshold, direction,
                                        horizon, self.spec.dt, EVENT_TOL)
            if code == K.EV_ERROR:
                raise IntegrationError(
                    f"house {h.house_id}: non-finite state at t={now + elapsed:.3f} s "
                    f"(mode={h.mode.value}, q_w={q_w:.1f} W, t_amb={t_amb:.2f} °C)"
                )
            t += elapsed

    def advance(self, dt: float = 1.0) -> AdvanceResult:
        """Advance every house by one latch step of ``dt`` seconds."""
        if not dt > 0:
            raise ValueError("latch step must be > 0")
        t_amb = self.ambient()
        events: list[SwitchEvent] = []
        for h in self.houses:
            self._advance_house(h, dt, t_amb, events)
        self._elapsed += dt
        self.clock = self._elapsed
        events.sort(key=lambda e: (e.time, e.house_id))
        return AdvanceResult(events, self.power())

    def run(self, duration: float, dt: float = 1.0) -> None:
        for _ in range(int(round(duration / dt))):
            self.advance(dt)


def _draw_params(base: HouseParams, het: Heterogeneity, rng: np.random.Generator) -> HouseParams:
    changes: dict[str, float] = {}
    if het.tank_gallons:
        changes["c_w"] = tank_heat_capacity(float(rng.choice(het.tank_gallons)))
    for name in sorted(het.jitter):
        frac = het.jitter[name]
        value = changes.get(name, getattr(base, name))
        changes[name] = value * (1.0 + frac * rng.uniform(-1.0, 1.0))
    if "f_hm" in changes:
        changes["f_hm"] = min(1.0, max(0.0, changes["f_hm"]))
    if "gamma" in changes:
        changes["gamma"] = max(1.0, changes["gamma"])
    if not changes:
        return base
    return base.replace(a_comp=changes.pop("a_comp", base.a_comp), **changes)


def build_fleet(spec: FleetSpec) -> Fleet:
    """Draw every house deterministically from ``spec.rng_seed``."""
    seeds = np.random.SeedSequence(spec.rng_seed).spawn(spec.n_houses)
    t_amb = spec.ambient.at(0.0)
    houses = []
    for i, seed in enumerate(seeds):
        param_seed, stream_seed = seed.spawn(2)
        params = _draw_params(spec.base_params, spec.heterogeneity,
                              np.random.default_rng(param_seed))
        schedule = spec.schedule_for(i)
        stream = PerturbationStream(np.random.default_rng(stream_seed), schedule.amplitude,
                                    schedule.correlation_time)
        houses.append(House(i, params, schedule, stream, t_amb))
    return Fleet(spec, houses)


def aggregate_power(fleet: Fleet) -> float:
    return fleet.aggregate_power()


def advance(fleet: Fleet, dt: float = 1.0) -> AdvanceResult:
    return fleet.advance(dt)


def scan_lockout_violations(log: SwitchLog, lockouts: Sequence[float],
                            tol: float = 1e-6) -> list[tuple[int, float, float]]:
    """(house, off time, dwell) for every OFF->ON restart sooner than the lockout."""
    bad = []
    for i in range(log.n_houses):
        last_off = None
        for e in log.house(i):
            if e.mode is Mode.OFF:
                last_off = e.time
            elif last_off is not None and e.time - last_off < lockouts[i] - tol:
                bad.append((i, last_off, e.time - last_off))
    return bad
