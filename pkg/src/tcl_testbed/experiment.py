"""Scenario runner: builds fleets from a config, runs them, writes CSV outputs.

Every output is a pure function of the config (seed included).  File layout
per scenario is listed in the README.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import analysis
from .client import square_wave_exerciser
from .config import ExperimentConfig, Scenario
from .etp import AmbientInput, Mode
from .fleet import Fleet, FleetSpec, SwitchLog, build_fleet
from .server import ControlServer, RunMode
from .telemetry import MeterWriter, TraceWriter, coincident_inrush, sample

log = logging.getLogger(__name__)

ON_POWER_MIN_AGE = 60.0


class OutputError(OSError):
    pass


def _open(path: Path):
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror}") from None


def _write_rows(path: Path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with _open(path) as fh:
        w = csv.writer(fh)
        w.writerow(list(header))
        for r in rows:
            w.writerow([_cell(x) for x in r])


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def prepare_output(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc.strerror}") from None
    probe = out / ".write-test"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"output directory {out} is not writable: {exc.strerror}") from None
    return out


@dataclass
class Recorder:
    """Per-second observations kept in memory for the analyses."""

    t_therm: list[np.ndarray]
    on: list[np.ndarray]
    power: list[np.ndarray]
    age: list[np.ndarray]  # seconds since the last transition
    times: list[float]

    @classmethod
    def empty(cls) -> "Recorder":
        return cls([], [], [], [], [])

    def __call__(self, fleet: Fleet) -> None:
        self.times.append(fleet.clock)
        self.t_therm.append(np.array([h.t_therm() for h in fleet.houses]))
        self.on.append(np.array([h.mode is Mode.ON for h in fleet.houses]))
        self.power.append(fleet.power())
        self.age.append(np.array([fleet.clock - h.t_mode for h in fleet.houses]))

    def arrays(self):
        return (np.array(self.times), np.array(self.t_therm), np.array(self.on),
                np.array(self.power), np.array(self.age))


def simulate(fleet: Fleet, n_steps: int, latch_dt: float = 1.0,
             observers: Iterable[Callable[[Fleet], None]] = (),
             before_step: Callable[[Fleet, int], None] | None = None) -> None:
    """Advance ``n_steps`` latch steps, calling observers at t=0 and after each step."""
    observers = list(observers)
    for ob in observers:
        ob(fleet)
    for step in range(n_steps):
        if before_step is not None:
            before_step(fleet, step)
        fleet.advance(latch_dt)
        for ob in observers:
            ob(fleet)


def warmup_end_times(log_: SwitchLog, warmup_cycles: int) -> np.ndarray:
    """Per house, the start of the first post-warm-up cycle (inf if none)."""
    ends = np.full(log_.n_houses, math.inf)
    for i in range(log_.n_houses):
        triples = analysis.cycle_triples(log_.house(i), warmup_cycles)
        if triples:
            ends[i] = triples[0][0]
    return ends


class _MeterObserver:
    def __init__(self, cfg: ExperimentConfig, out: Path) -> None:
        self.cfg = cfg
        self._fh = _open(out / "meter.csv")
        self._meter = MeterWriter(self._fh)
        self._tfh = _open(out / "trace.csv") if cfg.write_trace else None
        self._trace = TraceWriter(self._tfh) if self._tfh else None

    def __call__(self, fleet: Fleet) -> None:
        self._meter.write(sample(fleet, fleet.clock, self.cfg.meter))
        if self._trace is not None:
            self._trace.write(fleet)

    def close(self) -> None:
        self._fh.close()
        if self._tfh:
            self._tfh.close()


def _write_cycles(path: Path, log_: SwitchLog, warmup: int) -> None:
    rows = []
    for i in range(log_.n_houses):
        stats = analysis.house_cycle_stats(log_.house(i), warmup)
        duty = analysis.duty_cycle(log_, i, warmup)
        if stats is None:
            rows.append([i, None, None, None, duty.percent, 0, duty.caveat])
        else:
            rows.append([i, stats.on_s, stats.off_s, stats.full_s, stats.duty_pct,
                         stats.n_cycles, None])
    _write_rows(path, ["house_id", "on_s", "off_s", "full_s", "duty_pct", "n_cycles", "caveat"],
                rows)


def _write_histograms(out: Path, rec: Recorder, log_: SwitchLog, fleet: Fleet,
                      warmup: int, bins: int = 20) -> None:
    times, temps, on, _, _ = rec.arrays()
    ends = warmup_end_times(log_, warmup)
    keep = times[:, None] >= ends[None, :]
    p = fleet.spec.base_params
    lo, hi = p.t_minus - 0.1 * p.deadband_width, p.t_plus + 0.1 * p.deadband_width
    for mode, name in ((Mode.ON, "histogram_on.csv"), (Mode.OFF, "histogram_off.csv")):
        modes = np.where(on[keep], Mode.ON.value, Mode.OFF.value)
        if temps[keep].size == 0:
            counts, edges = np.zeros(bins, dtype=int), np.linspace(lo, hi, bins + 1)
        else:
            counts, edges = analysis.temperature_histogram(temps[keep], modes, mode, bins,
                                                           (lo, hi))
        _write_rows(out / name, ["bin_lo", "bin_hi", "count"],
                    ([float(a), float(b), int(c)] for a, b, c in zip(edges, edges[1:], counts)))


def run_fixed_setpoint(cfg: ExperimentConfig, out: Path) -> dict:
    fleet = build_fleet(cfg.fleet)
    rec = Recorder.empty()
    meter = _MeterObserver(cfg, out)
    try:
        simulate(fleet, cfg.n_steps, cfg.latch_dt, [meter, rec])
    finally:
        meter.close()
    fleet.log.write_csv(out / "switch_log.csv")
    _write_cycles(out / "cycles.csv", fleet.log, cfg.warmup_cycles)
    _write_histograms(out, rec, fleet.log, fleet, cfg.warmup_cycles)
    pooled = analysis.fleet_cycle_stats(fleet.log, cfg.warmup_cycles)
    summary = {
        "n_houses": fleet.n_houses,
        "duration_s": cfg.duration_s,
        "switch_events": len(fleet.log),
        "mean_aggregate_power_w": float(np.mean([p.sum() for p in rec.power])),
        "fleet_duty_pct": pooled.duty_pct if pooled else None,
        "fleet_full_cycle_s": pooled.full_s if pooled else None,
        "coincident_inrush": coincident_inrush(fleet.log.events(), cfg.inrush_window_s,
                                               cfg.inrush),
    }
    _write_rows(out / "summary.csv", ["metric", "value"], summary.items())
    return summary


def _sweep_fleet(cfg: ExperimentConfig, value: float) -> FleetSpec:
    spec = cfg.fleet
    if cfg.scenario is Scenario.HEAT_SWEEP:
        sched = spec.schedule_for(0)
        return replace(spec, schedules=replace(sched, base_watts=value))
    if cfg.scenario is Scenario.FHM_SWEEP:
        return replace(spec, base_params=spec.base_params.replace(f_hm=value))
    return replace(spec, ambient=AmbientInput(t_amb=value))


def run_cycle_sweep(cfg: ExperimentConfig, out: Path) -> list[list]:
    """HEAT_SWEEP / FHM_SWEEP: pooled cycle statistics per grid value."""
    rows = []
    for v in cfg.sweep_values:
        fleet = build_fleet(_sweep_fleet(cfg, v))
        simulate(fleet, cfg.n_steps, cfg.latch_dt)
        s = analysis.fleet_cycle_stats(fleet.log, cfg.warmup_cycles)
        if s is None:
            on_frac = np.mean([h.mode is Mode.ON for h in fleet.houses])
            rows.append([v, None, None, None, None, 0, f"no complete cycle (ON fraction "
                                                        f"{on_frac:.2f} at end)"])
        else:
            rows.append([v, s.duty_pct, s.on_s, s.off_s, s.full_s, s.n_cycles, None])
        log.info("sweep value %g done", v)
    name = "heat_sweep.csv" if cfg.scenario is Scenario.HEAT_SWEEP else "fhm_sweep.csv"
    key = "q_w" if cfg.scenario is Scenario.HEAT_SWEEP else "f_hm"
    _write_rows(out / name, [key, "duty_pct", "on_s", "off_s", "full_s", "n_cycles", "caveat"],
                rows)
    return rows


def on_power_samples(cfg_fleet: FleetSpec, n_steps: int, latch_dt: float,
                     warmup: int) -> np.ndarray:
    """Metered ON-state power after warm-up, dropping each ON interval's first 60 s."""
    fleet = build_fleet(cfg_fleet)
    rec = Recorder.empty()
    simulate(fleet, n_steps, latch_dt, [rec])
    times, _, on, power, age = rec.arrays()
    ends = warmup_end_times(fleet.log, warmup)
    keep = on & (age >= ON_POWER_MIN_AGE) & (times[:, None] >= ends[None, :])
    return power[keep]


def run_ambient_sweep(cfg: ExperimentConfig, out: Path) -> analysis.PowerFit:
    powers, temps, rows = [], [], []
    for v in cfg.sweep_values:
        p = on_power_samples(_sweep_fleet(cfg, v), cfg.n_steps, cfg.latch_dt, cfg.warmup_cycles)
        powers.append(p)
        temps.append(np.full(p.size, v))
        rows.append([v, float(p.mean()) if p.size else None, int(p.size)])
    _write_rows(out / "ambient_sweep.csv", ["t_amb", "mean_on_power_w", "n_samples"], rows)
    fit = analysis.power_temperature_fit(np.concatenate(powers), np.concatenate(temps))
    _write_rows(out / "power_fit.csv",
                ["slope_pct_per_c", "slope_w_per_c", "intercept_w", "reference_ambient",
                 "reference_power_w", "n_samples"],
                [[fit.slope_pct_per_c, fit.slope_w_per_c, fit.intercept_w,
                  fit.reference_ambient, fit.reference_power, fit.n_samples]])
    return fit


def run_square_wave(cfg: ExperimentConfig, out: Path) -> dict:
    """Drive the fleet with the square-wave controller over a loopback connection."""
    fleet = build_fleet(cfg.fleet)
    meter = _MeterObserver(cfg, out)
    meter(fleet)
    server = ControlServer(fleet, RunMode.LOCKSTEP, "127.0.0.1", 0, n_steps=cfg.n_steps,
                           latch_dt=cfg.latch_dt, timeout=cfg.server.timeout_s,
                           on_step=lambda f, _step: meter(f))
    try:
        server.start()
        trace = square_wave_exerciser(cfg.square_wave.period_s, cfg.square_wave.duty_pct,
                                      server.address)
        result = server.join()
    finally:
        server.stop()
        meter.close()
    if result.error is not None:
        raise result.error
    fleet.log.write_csv(out / "switch_log.csv")
    _write_rows(out / "verdicts.csv", ["step", "house_id", "accepted", "reason"],
                ([s, h, int(a), r] for s, h, a, r in trace.verdicts))
    _write_cycles(out / "cycles.csv", fleet.log, cfg.warmup_cycles)
    summary = {"steps": result.steps, "requests": result.requests,
               "rejected": trace.rejected, "switch_events": len(fleet.log)}
    _write_rows(out / "summary.csv", ["metric", "value"], summary.items())
    return summary


def force_and_release(fleet: Fleet, hold_s: float) -> Callable[[Fleet, int], None]:
    """before_step hook: request ON for every house until ``hold_s`` has elapsed."""
    def hook(f: Fleet, step: int) -> None:
        if f.clock <= hold_s:
            for i in range(f.n_houses):
                f.request(i, Mode.ON)
    return hook


def run_release_test(cfg: ExperimentConfig, out: Path) -> analysis.Dephasing:
    fleet = build_fleet(cfg.fleet)
    hold = cfg.release.hold_s
    simulate(fleet, cfg.n_steps, cfg.latch_dt, before_step=force_and_release(fleet, hold))
    fleet.log.write_csv(out / "switch_log.csv")
    d = analysis.dephasing_metric(fleet.log, hold, cfg.release.cycles)
    _write_rows(out / "dephasing.csv", ["cycle", "circular_variance", "houses", "period_s"],
                ([k + 1, v, n, d.period_s]
                 for k, (v, n) in enumerate(zip(d.circular_variance, d.houses_per_cycle))))
    return d


def run_experiment(cfg: ExperimentConfig) -> Path:
    out = prepare_output(cfg)
    sc = cfg.scenario
    if sc is Scenario.FIXED_SETPOINT:
        run_fixed_setpoint(cfg, out)
    elif sc in (Scenario.HEAT_SWEEP, Scenario.FHM_SWEEP):
        run_cycle_sweep(cfg, out)
    elif sc is Scenario.AMBIENT_SWEEP:
        run_ambient_sweep(cfg, out)
    elif sc is Scenario.SQUARE_WAVE:
        run_square_wave(cfg, out)
    elif sc is Scenario.RELEASE_TEST:
        run_release_test(cfg, out)
    else:
        raise ValueError("SERVE configs are run with the 'serve' command")
    return out
