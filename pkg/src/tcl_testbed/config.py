"""Experiment configuration: a YAML document validated against a shipped schema.

Every error carries the 1-based line of the offending node so a typo can be
found without guessing.  The grammar is documented in docs/config.md; the
schema lives in ``tcl_testbed/data/config.schema.json``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import yaml

from .etp import AmbientInput, HouseParams, tank_heat_capacity
from .fleet import FleetSpec, HeatSchedule, Heterogeneity, ScheduleKind
from .protocol import DEFAULT_HOST, DEFAULT_PORT
from .server import DEFAULT_TIMEOUT, RunMode
from .telemetry import InrushParams, MeterConfig


class Scenario(str, Enum):
    FIXED_SETPOINT = "FIXED_SETPOINT"
    HEAT_SWEEP = "HEAT_SWEEP"
    FHM_SWEEP = "FHM_SWEEP"
    AMBIENT_SWEEP = "AMBIENT_SWEEP"
    SQUARE_WAVE = "SQUARE_WAVE"
    RELEASE_TEST = "RELEASE_TEST"
    SERVE = "SERVE"


SWEEPS = (Scenario.HEAT_SWEEP, Scenario.FHM_SWEEP, Scenario.AMBIENT_SWEEP)


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>") -> None:
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class SquareWave:
    period_s: float = 600.0
    duty_pct: float | None = 50.0


@dataclass(frozen=True)
class Release:
    hold_s: float = 0.0
    cycles: int = 5


@dataclass(frozen=True)
class ServerConfig:
    host: str = DEFAULT_HOST
    port: int = DEFAULT_PORT
    mode: RunMode = RunMode.LOCKSTEP
    timeout_s: float = DEFAULT_TIMEOUT
    pacing: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    fleet: FleetSpec = field(default_factory=FleetSpec)
    duration_s: float = 6 * 3600.0
    warmup_cycles: int = 3
    latch_dt: float = 1.0
    output_dir: Path = Path("out")
    meter: MeterConfig = field(default_factory=MeterConfig)
    write_trace: bool = True
    inrush: InrushParams = field(default_factory=InrushParams)
    inrush_window_s: float = 1.0
    sweep_values: tuple[float, ...] = ()
    square_wave: SquareWave = field(default_factory=SquareWave)
    release: Release = field(default_factory=Release)
    server: ServerConfig = field(default_factory=ServerConfig)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_s / self.latch_dt))


_SCHEMA: dict | None = None


def schema() -> dict:
    global _SCHEMA
    if _SCHEMA is None:
        text = resources.files("tcl_testbed").joinpath("data/config.schema.json").read_text(
            encoding="utf-8")
        _SCHEMA = json.loads(text)
    return _SCHEMA


def _line_of(root: yaml.Node | None, path: Sequence[Any]) -> int | None:
    """1-based line of the node at ``path``, or of its deepest existing ancestor."""
    node = root
    line = None if root is None else root.start_mark.line + 1
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) \
                and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = nxt
        line = node.start_mark.line + 1
    return line


class _Ctx:
    def __init__(self, root: yaml.Node | None, source: str) -> None:
        self.root = root
        self.source = source

    def error(self, path: Sequence[Any], message: str) -> ConfigError:
        dotted = ".".join(str(p) for p in path) or "<root>"
        return ConfigError(f"{dotted}: {message}", _line_of(self.root, path), self.source)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, source=str(path))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Validate and build a config; relative output_dir is relative to the cwd."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", line, source) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML error: {exc}", None, source) from None
    ctx = _Ctx(root, source)
    if not isinstance(data, dict):
        raise ctx.error([], "config must be a mapping")
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = min(errors, key=lambda e: _line_of(root, list(e.absolute_path)) or 0)
        raise ctx.error(list(err.absolute_path), err.message)
    return _build(data, ctx)


def _build(d: dict, ctx: _Ctx) -> ExperimentConfig:
    scenario = Scenario(d["scenario"])
    fleet_d = d.get("fleet", {})

    house_d = dict(fleet_d.get("house", {}))
    if "tank_gallons" in house_d:
        if "c_w" in house_d:
            raise ctx.error(["fleet", "house", "tank_gallons"], "give c_w or tank_gallons, not both")
        house_d["c_w"] = tank_heat_capacity(house_d.pop("tank_gallons"))
    try:
        base = HouseParams(**{k: float(v) for k, v in house_d.items()})
    except ValueError as exc:
        raise ctx.error(["fleet", "house"], str(exc)) from None

    het_d = fleet_d.get("heterogeneity")
    het = Heterogeneity() if het_d is None else Heterogeneity(
        jitter=dict(het_d.get("jitter", {})), tank_gallons=tuple(het_d.get("tank_gallons", ())))

    sched_d = dict(fleet_d.get("schedule", {}))
    if "kind" in sched_d:
        sched_d["kind"] = ScheduleKind(sched_d["kind"])
    if "profile" in sched_d:
        sched_d["profile"] = tuple((float(t), float(w)) for t, w in sched_d["profile"])
    try:
        schedule = HeatSchedule(**sched_d)
    except ValueError as exc:
        raise ctx.error(["fleet", "schedule"], str(exc)) from None

    amb_d = d.get("ambient", {})
    try:
        ambient = AmbientInput(
            t_amb=float(amb_d.get("t_amb", AmbientInput().t_amb)),
            profile=tuple((float(t), float(c)) for t, c in amb_d.get("profile", ())),
        )
    except ValueError as exc:
        raise ctx.error(["ambient"], str(exc)) from None

    fleet = FleetSpec(
        n_houses=fleet_d.get("n_houses", 20),
        base_params=base,
        heterogeneity=het,
        rng_seed=d.get("seed", 0),
        ambient=ambient,
        schedules=schedule,
        dt=float(fleet_d.get("integrator_dt", 0.1)),
    )

    duration = float(d.get("duration_s", ExperimentConfig.duration_s))
    warmup = int(d.get("warmup_cycles", ExperimentConfig.warmup_cycles))
    latch_dt = float(d.get("latch_dt", ExperimentConfig.latch_dt))
    # every cycle lasts longer than the lockout, so the warm-up needs more than this
    if duration <= warmup * base.lockout:
        raise ctx.error(["duration_s"],
                        f"duration {duration:g} s cannot outlast a {warmup}-cycle warm-up "
                        f"(each cycle exceeds the {base.lockout:g} s lockout)")
    if not math.isclose(duration / latch_dt, round(duration / latch_dt), abs_tol=1e-9):
        raise ctx.error(["duration_s"], "duration must be a whole number of latch steps")

    values = tuple(float(v) for v in d.get("sweep", {}).get("values", ()))
    if scenario in SWEEPS and not values:
        raise ctx.error(["sweep"], f"{scenario.value} needs sweep.values")
    for i, v in enumerate(values):
        if not math.isfinite(v):
            raise ctx.error(["sweep", "values", i], "sweep values must be finite")
        if scenario is Scenario.FHM_SWEEP and not 0.0 <= v <= 1.0:
            raise ctx.error(["sweep", "values", i], "f_hm values must lie in [0, 1]")
        if scenario is Scenario.HEAT_SWEEP and v < 0:
            raise ctx.error(["sweep", "values", i], "heat values must be >= 0")

    if scenario is Scenario.SQUARE_WAVE and "square_wave" not in d:
        raise ctx.error([], "SQUARE_WAVE needs a square_wave section")
    sw_d = d.get("square_wave", {})
    square = SquareWave(float(sw_d.get("period_s", SquareWave.period_s)),
                        sw_d.get("duty_pct", SquareWave.duty_pct))

    rel_d = d.get("release", {})
    release = Release(float(rel_d.get("hold_s", 0.0)), int(rel_d.get("cycles", 5)))

    srv_d = d.get("server", {})
    server = ServerConfig(srv_d.get("host", DEFAULT_HOST), int(srv_d.get("port", DEFAULT_PORT)),
                          RunMode(srv_d.get("mode", "LOCKSTEP")),
                          float(srv_d.get("timeout_s", DEFAULT_TIMEOUT)),
                          bool(srv_d.get("pacing", False)))

    meter_d = dict(d.get("meter", {}))
    write_trace = bool(meter_d.pop("write_trace", True))
    inrush_d = dict(d.get("inrush", {}))
    window = float(inrush_d.pop("window_s", 1.0))

    out = Path(d.get("output_dir", "out"))

    return ExperimentConfig(
        scenario=scenario,
        fleet=fleet,
        duration_s=duration,
        warmup_cycles=warmup,
        latch_dt=latch_dt,
        output_dir=out,
        meter=MeterConfig(**meter_d),
        write_trace=write_trace,
        inrush=InrushParams(**inrush_d),
        inrush_window_s=window,
        sweep_values=values,
        square_wave=square,
        release=release,
        server=server,
    )
