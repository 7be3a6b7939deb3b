"""Meter emulation: 1 Hz per-house power samples and a separate inrush channel.

The 1 Hz samples bill the compressor plus the always-on pump and fan load.
Motor-start inrush lives on its own high-rate envelope channel and never feeds
back into the thermal model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .etp import Mode
from .fleet import Fleet, SwitchEvent

METER_HEADER = ("timestamp", "house_id", "real_w", "apparent_va", "voltage_v", "freq_hz")
TRACE_HEADER = ("timestamp", "house_id", "mode", "t_therm", "t_a", "t_w", "t_1", "t_2",
                "t_amb", "time_in_mode")
INRUSH_HEADER = ("t_s", "current_a")


@dataclass(frozen=True)
class MeterConfig:
    power_factor: float = 0.95
    voltage: float = 120.0
    frequency: float = 60.0

    def __post_init__(self) -> None:
        if not 0.0 < self.power_factor <= 1.0:
            raise ValueError("power_factor must lie in (0, 1]")
        if not (self.voltage > 0 and self.frequency > 0):
            raise ValueError("voltage and frequency must be > 0")


@dataclass(frozen=True)
class MeterSample:
    timestamp: float
    house_id: int
    real_power: float
    apparent_power: float
    voltage: float
    frequency: float

    def row(self) -> list:
        return [_fmt_time(self.timestamp), self.house_id, _num(self.real_power),
                _num(self.apparent_power), _num(self.voltage), _num(self.frequency)]


def _num(x: float) -> str:
    # shortest round-trip text; numpy scalars would otherwise repr with their type
    return repr(float(x))


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def sample(fleet: Fleet, t: float | None = None, meter: MeterConfig = MeterConfig()
           ) -> list[MeterSample]:
    """One reading per house at the fleet's current latch time."""
    if t is None:
        t = fleet.clock
    if not float(t).is_integer():
        raise ValueError(f"meter time {t} is not on the 1 Hz grid")
    if abs(t - fleet.clock) > 1e-9:
        raise ValueError(f"fleet is at t={fleet.clock}, cannot sample t={t}")
    out = []
    for h in fleet.houses:
        real = h.real_power()
        out.append(MeterSample(float(t), h.house_id, real, real / meter.power_factor,
                               meter.voltage, meter.frequency))
    return out


class MeterWriter:
    """RFC-4180 CSV writer for meter samples."""

    def __init__(self, fh: TextIO) -> None:
        self._w = csv.writer(fh)
        self._w.writerow(METER_HEADER)

    def write(self, samples: Iterable[MeterSample]) -> None:
        self._w.writerows(s.row() for s in samples)


class TraceWriter:
    """Per-second thermal trace alongside the meter stream."""

    def __init__(self, fh: TextIO) -> None:
        self._w = csv.writer(fh)
        self._w.writerow(TRACE_HEADER)

    def write(self, fleet: Fleet) -> None:
        t_amb = fleet.ambient()
        ts = _fmt_time(fleet.clock)
        for h in fleet.houses:
            s = h.state(fleet.clock)
            self._w.writerow([ts, h.house_id, s.mode.value, _num(h.t_therm()), _num(s.t_a),
                              _num(s.t_w), _num(s.t_1), _num(s.t_2), _num(t_amb),
                              _num(s.time_in_mode)])


def read_meter_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METER_HEADER:
            raise ValueError(f"{path}: not a meter CSV (header {header})")
        rows = list(reader)
    cols = list(zip(*rows)) if rows else [()] * len(METER_HEADER)
    out = {name: np.array(col, dtype=float) for name, col in zip(METER_HEADER, cols)}
    out["house_id"] = out["house_id"].astype(int)
    return out


def read_trace_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_HEADER:
            raise ValueError(f"{path}: not a trace CSV (header {header})")
        rows = list(reader)
    cols = list(zip(*rows)) if rows else [()] * len(TRACE_HEADER)
    out = {}
    for name, col in zip(TRACE_HEADER, cols):
        if name == "mode":
            out[name] = np.array(col, dtype=object)
        elif name == "house_id":
            out[name] = np.array(col, dtype=int)
        else:
            out[name] = np.array(col, dtype=float)
    return out


@dataclass(frozen=True)
class InrushParams:
    """Motor-start current envelope.

    A 25 ms decay leaves 0.6% of the excess after ten 60 Hz cycles.
    """

    peak_multiplier: float = 5.5
    decay_time: float = 0.025
    line_frequency: float = 60.0

    def __post_init__(self) -> None:
        if not self.peak_multiplier >= 1.0:
            raise ValueError("peak_multiplier must be >= 1")
        if not (self.decay_time > 0 and self.line_frequency > 0):
            raise ValueError("decay_time and line_frequency must be > 0")


def inrush_waveform(t_since_on: float | np.ndarray, steady_current: float,
                    p: InrushParams = InrushParams()) -> float | np.ndarray:
    """Current envelope (A) after a compressor start."""
    t = np.asarray(t_since_on, dtype=float)
    if np.any(t < 0):
        raise ValueError("t_since_on must be >= 0")
    env = steady_current * (1.0 + (p.peak_multiplier - 1.0) * np.exp(-t / p.decay_time))
    return float(env) if env.ndim == 0 else env


def coincident_inrush(events: Sequence[SwitchEvent], window: float,
                      p: InrushParams = InrushParams(),
                      steady_current: Mapping[int, float] | float = 1.0) -> float:
    """Worst aggregate-current multiplier over clusters of coincident ON events.

    ON events closer than ``window`` to their predecessor join its cluster.
    Within a cluster the envelopes are superposed (each unit carries its steady
    draw once started); the peak, always at an event instant, is divided by the
    cluster's total steady current.  The maximum over clusters is returned; 1.0
    when there are no ON events.
    """
    if not window > 0:
        raise ValueError("window must be > 0")
    ons = sorted((e for e in events if e.mode is Mode.ON), key=lambda e: (e.time, e.house_id))
    if not ons:
        return 1.0
    times = np.array([e.time for e in ons])
    if isinstance(steady_current, Mapping):
        amps = np.array([steady_current[e.house_id] for e in ons], dtype=float)
    else:
        amps = np.full(len(ons), float(steady_current))
    breaks = np.flatnonzero(np.diff(times) >= window) + 1
    excess = p.peak_multiplier - 1.0
    best = 1.0
    for t, s in zip(np.split(times, breaks), np.split(amps, breaks)):
        steady = s.sum()
        for k in range(len(t)):
            on = s[: k + 1]
            decay = np.exp(-(t[k] - t[: k + 1]) / p.decay_time)
            total = on.sum() + excess * float((on * decay).sum())
            best = max(best, float(total / steady))
    return best


def write_inrush_csv(path: str | Path, steady_current: float, p: InrushParams = InrushParams(),
                     duration: float | None = None, rate_hz: float = 10_000.0) -> None:
    """Dump the envelope on a uniform grid (default: 20 line cycles at 10 kHz)."""
    if duration is None:
        duration = 20.0 / p.line_frequency
    n = int(math.floor(duration * rate_hz)) + 1
    t = np.arange(n) / rate_hz
    cur = inrush_waveform(t, steady_current, p)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(INRUSH_HEADER)
        w.writerows([repr(float(a)), repr(float(b))] for a, b in zip(t, cur))
