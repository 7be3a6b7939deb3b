"""Cycle statistics, histograms, regressions and phase metrics over run outputs.

A cycle is an OFF->ON->OFF triple of consecutive transitions: its OFF part runs
from the first switch-off to the switch-on, its ON part from the switch-on to
the next switch-off, and the full cycle spans both.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .etp import Mode
from .fleet import SwitchEvent, SwitchLog

DEFAULT_WARMUP_CYCLES = 3


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class CycleStats:
    on_s: float
    off_s: float
    full_s: float
    n_cycles: int

    @property
    def duty_pct(self) -> float:
        return 100.0 * self.on_s / self.full_s


@dataclass(frozen=True)
class DutyCycle:
    percent: float | None
    n_cycles: int
    caveat: str | None = None


def cycle_triples(events: Sequence[SwitchEvent], warmup_cycles: int = DEFAULT_WARMUP_CYCLES
                  ) -> list[tuple[float, float, float]]:
    """(off, on, next off) times for each complete cycle after the warm-up."""
    triples = []
    for a, b, c in zip(events, events[1:], events[2:]):
        if a.mode is Mode.OFF and b.mode is Mode.ON and c.mode is Mode.OFF:
            triples.append((a.time, b.time, c.time))
    return triples[warmup_cycles:]


def house_cycle_stats(events: Sequence[SwitchEvent],
                      warmup_cycles: int = DEFAULT_WARMUP_CYCLES) -> CycleStats | None:
    triples = cycle_triples(events, warmup_cycles)
    if not triples:
        return None
    arr = np.array(triples)
    off = arr[:, 1] - arr[:, 0]
    on = arr[:, 2] - arr[:, 1]
    return CycleStats(float(on.mean()), float(off.mean()), float((on + off).mean()), len(arr))


def cycle_durations(log: SwitchLog, warmup_cycles: int = DEFAULT_WARMUP_CYCLES
                    ) -> dict[int, CycleStats | None]:
    """Mean ON, OFF and full-cycle durations per house (None without a complete cycle)."""
    return {i: house_cycle_stats(log.house(i), warmup_cycles) for i in range(log.n_houses)}


def duty_cycle(log: SwitchLog, house: int, warmup_cycles: int = DEFAULT_WARMUP_CYCLES
               ) -> DutyCycle:
    """Percent of the cycle spent ON, averaged over complete post-warm-up cycles."""
    events = log.house(house)
    stats = house_cycle_stats(events, warmup_cycles)
    if stats is not None:
        return DutyCycle(stats.duty_pct, stats.n_cycles)
    if len(events) == 1:
        pct = 100.0 if events[0].mode is Mode.ON else 0.0
        return DutyCycle(pct, 0, "no complete cycle")
    return DutyCycle(None, 0, "insufficient cycles")


def fleet_cycle_stats(log: SwitchLog, warmup_cycles: int = DEFAULT_WARMUP_CYCLES
                      ) -> CycleStats | None:
    """Cycle statistics pooled over every complete cycle of every house."""
    triples = [t for i in range(log.n_houses) for t in cycle_triples(log.house(i), warmup_cycles)]
    if not triples:
        return None
    arr = np.array(triples)
    off = arr[:, 1] - arr[:, 0]
    on = arr[:, 2] - arr[:, 1]
    return CycleStats(float(on.mean()), float(off.mean()), float((on + off).mean()), len(arr))


def temperature_histogram(temps: Sequence[float] | np.ndarray, modes: Sequence[Mode] | np.ndarray,
                          mode_filter: Mode, bins: int,
                          value_range: tuple[float, float] | None = None
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Counts of (house, second) samples per temperature bin for one compressor mode."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    temps = np.asarray(temps, dtype=float)
    modes = np.asarray([Mode(m).value for m in modes])
    if temps.size == 0:
        raise InsufficientDataError("empty temperature trace")
    if temps.shape != modes.shape:
        raise ValueError("temps and modes must have the same length")
    selected = temps[modes == Mode(mode_filter).value]
    return np.histogram(selected, bins=bins, range=value_range)


@dataclass(frozen=True)
class PowerFit:
    slope_pct_per_c: float
    slope_w_per_c: float
    intercept_w: float
    reference_ambient: float
    reference_power: float
    n_samples: int


def power_temperature_fit(power: Sequence[float], ambient: Sequence[float],
                          time_since_on: Sequence[float] | None = None,
                          min_on_age: float = 60.0,
                          reference_ambient: float | None = None) -> PowerFit:
    """Least-squares ON-state power vs ambient slope, as a percent of the power at
    ``reference_ambient`` (default: mean ambient of the samples used).

    Inputs must already be restricted to ON-state samples; ``time_since_on``
    drops each cycle's start-up transient.
    """
    p = np.asarray(power, dtype=float)
    t = np.asarray(ambient, dtype=float)
    if time_since_on is not None:
        keep = np.asarray(time_since_on, dtype=float) >= min_on_age
        p, t = p[keep], t[keep]
    if np.unique(t).size < 2:
        raise InsufficientDataError("need ON-state samples at two or more ambient temperatures")
    slope, intercept = np.polyfit(t, p, 1)
    t_ref = float(t.mean()) if reference_ambient is None else float(reference_ambient)
    p_ref = intercept + slope * t_ref
    return PowerFit(100.0 * slope / p_ref, float(slope), float(intercept), t_ref, float(p_ref),
                    int(p.size))


@dataclass(frozen=True)
class Dephasing:
    circular_variance: list[float]
    period_s: float
    houses_per_cycle: list[int]


def circular_variance(phases: Sequence[float]) -> float:
    if not len(phases):
        raise InsufficientDataError("no phases")
    mean = sum(cmath.exp(1j * a) for a in phases) / len(phases)
    return max(0.0, 1.0 - abs(mean))


def dephasing_metric(log: SwitchLog, release_time: float, n_cycles: int = 5) -> Dephasing:
    """Circular variance of the k-th post-release switch-on across houses, k = 1..n_cycles.

    Switch-on times are mapped to phases with the fleet's mean natural period, so
    houses with identical dynamics stay at zero variance and a spread of natural
    periods shows up as growing variance.
    """
    if log.n_houses < 2:
        raise InsufficientDataError("dephasing needs at least two houses")
    ons = []
    for i in range(log.n_houses):
        ons.append([e.time for e in log.house(i) if e.mode is Mode.ON and e.time > release_time])
    periods = [np.diff(o).mean() for o in ons if len(o) >= 2]
    if len(periods) < 2 or any(len(o) < 2 for o in ons):
        raise InsufficientDataError("need at least two post-release switch-ons per house")
    period = float(np.mean(periods))
    variances, counts = [], []
    for k in range(n_cycles):
        phases = [2 * math.pi * (o[k] - release_time) / period for o in ons if len(o) > k]
        if len(phases) < 2:
            break
        variances.append(circular_variance(phases))
        counts.append(len(phases))
    return Dephasing(variances, period, counts)
