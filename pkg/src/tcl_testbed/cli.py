"""Command-line entry point: ``tcl-testbed {run,sweep,serve,exercise,analyze}``.

Exit status: 0 success, 1 configuration or usage error, 2 runtime error.
Log verbosity comes from ``TCL_TESTBED_LOG`` (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis, experiment
from .client import ControllerError, square_wave_exerciser
from .config import SWEEPS, ConfigError, Scenario, load_config
from .etp import IntegrationError, Mode
from .fleet import SwitchLog, build_fleet
from .protocol import DEFAULT_HOST, DEFAULT_PORT
from .server import ControlServer, RunMode
from .telemetry import (
    METER_HEADER,
    TRACE_HEADER,
    InrushParams,
    read_meter_csv,
    read_trace_csv,
    write_inrush_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
LOG_ENV = "TCL_TESTBED_LOG"
ANALYSES = ("cycles", "duty", "histogram", "power-fit", "dephasing", "inrush")

log = logging.getLogger("tcl_testbed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage problems are configuration errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tcl-testbed", description="Virtual air-conditioner testbed.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run the scenario named in a config file")
    r.add_argument("config", type=Path)
    r.add_argument("--out", type=Path, help="override output_dir")

    s = sub.add_parser("sweep", help="run a HEAT/FHM/AMBIENT sweep config")
    s.add_argument("config", type=Path)
    s.add_argument("--values", type=float, nargs="+", help="override sweep.values")
    s.add_argument("--out", type=Path, help="override output_dir")

    v = sub.add_parser("serve", help="host the fleet for an external controller")
    v.add_argument("config", type=Path)
    v.add_argument("--host")
    v.add_argument("--port", type=int)
    v.add_argument("--mode", choices=[m.value for m in RunMode])
    v.add_argument("--out", type=Path, help="override output_dir")

    e = sub.add_parser("exercise", help="square-wave controller client")
    e.add_argument("endpoint", help="host:port of a running server")
    e.add_argument("--period", type=float, required=True, help="square-wave period, s")
    e.add_argument("--duty", type=float, help="percent of each period requesting ON "
                                              "(omit for a silent controller)")
    e.add_argument("--out", type=Path, help="verdict CSV (default stdout)")

    a = sub.add_parser("analyze", help="analyses over output CSVs")
    a.add_argument("csv", type=Path, nargs="+")
    a.add_argument("--kind", required=True, choices=ANALYSES)
    a.add_argument("--warmup", type=int, default=analysis.DEFAULT_WARMUP_CYCLES,
                   help="cycles discarded per house")
    a.add_argument("--mode", choices=["ON", "OFF"], default="OFF", help="histogram filter")
    a.add_argument("--bins", type=int, default=20)
    a.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
    a.add_argument("--from-time", type=float, default=0.0,
                   help="histogram: ignore samples before this time, s")
    a.add_argument("--release", type=float, default=0.0, help="dephasing release time, s")
    a.add_argument("--cycles", type=int, default=5)
    a.add_argument("--steady", type=float, default=1.0, help="inrush steady current, A")
    a.add_argument("--out", type=Path, help="output CSV (default stdout)")
    return p


def _load(path: Path, out: Path | None, scenario_ok=None):
    cfg = load_config(path)
    if scenario_ok is not None and cfg.scenario not in scenario_ok:
        raise ConfigError(f"scenario {cfg.scenario.value} not valid for this command",
                          None, str(path))
    if out is not None:
        cfg = replace(cfg, output_dir=out)
    return cfg


def cmd_run(args) -> int:
    runnable = [s for s in Scenario if s is not Scenario.SERVE]
    cfg = _load(args.config, args.out, runnable)
    out = experiment.run_experiment(cfg)
    print(out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args.config, args.out, SWEEPS)
    if args.values:
        cfg = replace(cfg, sweep_values=tuple(args.values))
    out = experiment.run_experiment(cfg)
    print(out)
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = _load(args.config, args.out)
    out = experiment.prepare_output(cfg)
    fleet = build_fleet(cfg.fleet)
    srv = cfg.server
    meter = experiment._MeterObserver(cfg, out)
    meter(fleet)
    server = ControlServer(fleet, args.mode or srv.mode, args.host or srv.host,
                           srv.port if args.port is None else args.port,
                           n_steps=cfg.n_steps, latch_dt=cfg.latch_dt, timeout=srv.timeout_s,
                           pacing=srv.pacing, on_step=lambda f, _s: meter(f))
    host, port = server.address
    print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
    try:
        server.start()
        result = server.join()
    except KeyboardInterrupt:
        server.stop()
        result = server.join(5.0)
    finally:
        meter.close()
    fleet.log.write_csv(out / "switch_log.csv")
    if result.error is not None:
        raise result.error
    log.info("served %d steps, %d requests", result.steps, result.requests)
    return EXIT_OK


def _endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text or DEFAULT_HOST, DEFAULT_PORT
    try:
        return host or DEFAULT_HOST, int(port)
    except ValueError:
        raise UsageError(f"bad endpoint {text!r}, expected host:port") from None


def _writer(path: Path | None):
    fh = open(path, "w", newline="", encoding="utf-8") if path else sys.stdout
    return fh, csv.writer(fh, lineterminator="\n" if fh is sys.stdout else "\r\n")


def cmd_exercise(args) -> int:
    trace = square_wave_exerciser(args.period, args.duty, _endpoint(args.endpoint))
    fh, w = _writer(args.out)
    try:
        w.writerow(["step", "house_id", "accepted", "reason"])
        for s, h, a, r in trace.verdicts:
            w.writerow([s, h, int(a), r])
    finally:
        if fh is not sys.stdout:
            fh.close()
    print(f"{len(trace.verdicts)} verdicts, {trace.rejected} rejected", file=sys.stderr)
    return EXIT_OK


def _header(path: Path) -> tuple[str, ...]:
    with open(path, newline="", encoding="utf-8") as fh:
        return tuple(next(csv.reader(fh), []))


def _one(paths: Sequence[Path], kind: str) -> Path:
    if len(paths) != 1:
        raise UsageError(f"--kind {kind} takes exactly one CSV")
    return paths[0]


def cmd_analyze(args) -> int:
    kind = args.kind
    rows: list[list] = []
    if kind in ("cycles", "duty", "dephasing"):
        log_ = SwitchLog.read_csv(_one(args.csv, kind))
        if kind == "cycles":
            header = ["house_id", "on_s", "off_s", "full_s", "n_cycles"]
            for i, s in analysis.cycle_durations(log_, args.warmup).items():
                rows.append([i, s.on_s, s.off_s, s.full_s, s.n_cycles] if s else
                            [i, "", "", "", 0])
        elif kind == "duty":
            header = ["house_id", "duty_pct", "n_cycles", "caveat"]
            for i in range(log_.n_houses):
                d = analysis.duty_cycle(log_, i, args.warmup)
                rows.append([i, "" if d.percent is None else d.percent, d.n_cycles,
                             d.caveat or ""])
        else:
            d = analysis.dephasing_metric(log_, args.release, args.cycles)
            header = ["cycle", "circular_variance", "houses", "period_s"]
            rows = [[k + 1, v, n, d.period_s]
                    for k, (v, n) in enumerate(zip(d.circular_variance, d.houses_per_cycle))]
    elif kind == "histogram":
        tr = read_trace_csv(_one(args.csv, kind))
        keep = tr["timestamp"] >= args.from_time
        counts, edges = analysis.temperature_histogram(
            tr["t_therm"][keep], tr["mode"][keep], Mode(args.mode), args.bins,
            tuple(args.range) if args.range else None)
        header = ["bin_lo", "bin_hi", "count"]
        rows = [[a, b, int(c)] for a, b, c in zip(edges, edges[1:], counts)]
    elif kind == "power-fit":
        p, t = _power_samples(args.csv)
        fit = analysis.power_temperature_fit(p, t)
        header = ["slope_pct_per_c", "slope_w_per_c", "intercept_w", "reference_ambient",
                  "reference_power_w", "n_samples"]
        rows = [[fit.slope_pct_per_c, fit.slope_w_per_c, fit.intercept_w,
                 fit.reference_ambient, fit.reference_power, fit.n_samples]]
    else:
        path = _one(args.csv, kind)
        write_inrush_csv(path, args.steady, InrushParams())
        return EXIT_OK
    fh, w = _writer(args.out)
    try:
        w.writerow(header)
        w.writerows([repr(float(x)) if isinstance(x, (float, np.floating)) else x
                     for x in r] for r in rows)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _power_samples(paths: Sequence[Path]) -> tuple[np.ndarray, np.ndarray]:
    """Join meter and trace CSVs (pairs, any order) on (timestamp, house_id)."""
    meters, traces = [], []
    for path in paths:
        h = _header(path)
        if h == METER_HEADER:
            meters.append(read_meter_csv(path))
        elif h == TRACE_HEADER:
            traces.append(read_trace_csv(path))
        else:
            raise UsageError(f"{path}: neither a meter nor a trace CSV")
    if not meters or len(meters) != len(traces):
        raise UsageError("power-fit needs matching meter.csv and trace.csv files")
    power, ambient = [], []
    for m, t in zip(meters, traces):
        idx = {(ts, h): k for k, (ts, h) in enumerate(zip(t["timestamp"], t["house_id"]))}
        for ts, h, w in zip(m["timestamp"], m["house_id"], m["real_w"]):
            k = idx.get((ts, h))
            if k is None:
                continue
            if t["mode"][k] == Mode.ON.value and \
                    t["time_in_mode"][k] >= experiment.ON_POWER_MIN_AGE:
                power.append(w)
                ambient.append(t["t_amb"][k])
    return np.array(power), np.array(ambient)


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "serve": cmd_serve, "exercise": cmd_exercise,
            "analyze": cmd_analyze}


def _setup_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (experiment.OutputError, IntegrationError, ControllerError, OSError,
            analysis.InsufficientDataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
