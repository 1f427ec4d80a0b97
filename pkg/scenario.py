"""Scenario files: YAML parsing, validation and environment/CLI overrides.

See scenarios/SCHEMA.md for the accepted keys.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from core_types import DEFAULT_V_MIN, V_THRESHOLD, AgeGrid, PotentialGrid, Stimulus
from errors import ConfigError
from fpt import HAZARD_FORMS
from mc_engines import BLOCK_SIZE, InitialCondition

logger = logging.getLogger(__name__)

ENV_PREFIX = "SPIKEFLUX_"

MODELS = ("mc-nlif", "mc-escape", "mc-joint", "fp", "as", "fpt", "joint")
MC_MODELS = ("mc-nlif", "mc-escape", "mc-joint")
SECTIONS = ("name", "description", "models", "stimulus", "grid", "time", "age", "mc",
            "initial", "hazard", "outputs", "checks")
OUTPUTS = ("rates", "snapshots", "isi", "hazard", "joint")
HAZARD_SOURCES = ("escape", "fpt", "file", "joint")
CHECK_KINDS = ("rates", "isi", "mass", "marginal-potential", "marginal-age", "stationary", "fpt-identity",
               "joint-histogram")
INITIAL_KINDS = ("point", "gaussian", "file")

# models each check kind needs
CHECK_REQUIRES = {
    "marginal-potential": ("joint", "fp"),
    "marginal-age": ("joint", "as"),
    "fpt-identity": ("fpt",),
    "joint-histogram": ("joint", "mc-joint"),
}


def _section(raw: dict, key: str) -> dict:
    value = raw.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"Section '{key}' must be a mapping")
    return value


def _number(section: dict, key: str, default=None, where: str = "") -> float:
    value = section.get(key, default)
    if value is None:
        raise ConfigError(f"Missing '{key}' in {where or 'scenario'}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"'{key}' in {where or 'scenario'} must be a number, got {value!r}") from None


@dataclass(frozen=True)
class StimulusSpec:
    kind: str
    sigma: float
    mu0: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0
    resolution: float = 0.01
    samples: tuple = ()

    def build(self, horizon: float) -> Stimulus:
        if self.kind == "constant":
            return Stimulus.constant(self.mu0, self.sigma)
        if self.kind == "sinusoid":
            return Stimulus.sinusoid(self.mu0, self.amplitude, self.period, self.sigma, horizon, self.resolution)
        return Stimulus.sampled([t for t, _ in self.samples], [m for _, m in self.samples], self.sigma)


@dataclass(frozen=True)
class TimeSpec:
    dt: float = 1e-3
    horizon: float = 1.0
    snapshot_times: tuple = ()
    snapshot_stride: int | None = None

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass(frozen=True)
class McSpec:
    n_trials: int = 10_000
    seed: int = 0
    block_size: int = BLOCK_SIZE
    threads: int = 1
    psth_bin: float = 0.02
    isi_bin: float = 0.02
    sample_paths: int = 0


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "point"
    value: float = 0.0
    mean: float = 0.0
    std: float = 0.0
    path: str | None = None

    def condition(self) -> InitialCondition:
        """Monte Carlo sampler; file profiles are sampled through their cell table elsewhere."""
        if self.kind == "gaussian":
            return InitialCondition.gaussian(self.mean, self.std)
        return InitialCondition.point(self.value)


@dataclass(frozen=True)
class HazardSpec:
    source: str | None = None
    h: float = 0.0
    tau: float = 1.0
    h_amplitude: float = 0.0
    h_period: float = 1.0
    path: str | None = None
    form: str = "log"

    @property
    def time_dependent(self) -> bool:
        return self.source == "escape" and self.h_amplitude != 0.0

    def h_of_t(self, t: float) -> float:
        return self.h + self.h_amplitude * math.sin(2.0 * math.pi * t / self.h_period)


@dataclass(frozen=True)
class CheckSpec:
    kind: str
    models: tuple = ()
    tol: float = 1e-3
    metric: str = "l1_rel"
    skip_bins: int = 0
    age_cells: int = 10
    v_cells: int = 10

    @property
    def name(self) -> str:
        return "-".join((self.kind,) + tuple(self.models))


@dataclass(frozen=True)
class Scenario:
    name: str
    models: tuple
    stimulus: StimulusSpec
    grid: PotentialGrid
    time: TimeSpec
    a_max: float
    mc: McSpec = McSpec()
    initial_potential: InitialSpec = InitialSpec(kind="point", value=0.0)
    initial_age: InitialSpec = InitialSpec(kind="point", value=0.0)
    hazard: HazardSpec = HazardSpec()
    outputs: tuple = ("rates",)
    checks: tuple = ()
    description: str = ""
    base_dir: Path = field(default_factory=Path.cwd, compare=False)

    @property
    def age_grid(self) -> AgeGrid:
        return AgeGrid.from_step(self.time.dt, self.a_max)

    def stimulus_function(self) -> Stimulus:
        return self.stimulus.build(self.time.horizon)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def echo(self) -> dict:
        """Plain-data copy for the run manifest."""
        data = dataclasses.asdict(self)
        data.pop("base_dir")
        data["grid"] = {"v_r": self.grid.v_r, "v_min": self.grid.v_min, "v_th": self.grid.v_th, "n_v": self.grid.n_v}
        return data


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _parse_stimulus(raw: dict) -> StimulusSpec:
    kind = raw.get("kind", "constant")
    if kind not in ("constant", "sinusoid", "sampled"):
        raise ConfigError(f"Unknown stimulus kind '{kind}'")
    sigma = _number(raw, "sigma", where="stimulus")
    if kind == "sampled":
        samples = raw.get("samples") or []
        try:
            samples = tuple((float(t), float(m)) for t, m in samples)
        except (TypeError, ValueError):
            raise ConfigError("stimulus.samples must be a list of [t, mu] pairs") from None
        return StimulusSpec(kind=kind, sigma=sigma, samples=samples)
    return StimulusSpec(kind=kind, sigma=sigma, mu0=_number(raw, "mu0", where="stimulus"),
                        amplitude=_number(raw, "amplitude", 0.0), period=_number(raw, "period", 1.0),
                        resolution=_number(raw, "resolution", 0.01))


def _parse_initial(raw, default: InitialSpec, where: str) -> InitialSpec:
    if raw is None:
        return default
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping")
    kind = raw.get("kind", "point")
    if kind not in INITIAL_KINDS:
        raise ConfigError(f"Unknown initial kind '{kind}' in {where}, expected one of {INITIAL_KINDS}")
    if kind == "gaussian":
        std = _number(raw, "std", where=where)
        if std <= 0:
            raise ConfigError(f"{where}.std must be > 0")
        return InitialSpec(kind=kind, mean=_number(raw, "mean", where=where), std=std)
    if kind == "file":
        if not raw.get("path"):
            raise ConfigError(f"{where} of kind 'file' needs a path")
        return InitialSpec(kind=kind, path=str(raw["path"]))
    return InitialSpec(kind=kind, value=_number(raw, "value", 0.0, where))


def _parse_checks(raw) -> tuple:
    if raw is None:
        return ()
    if not isinstance(raw, list):
        raise ConfigError("'checks' must be a list")
    checks = []
    for item in raw:
        if not isinstance(item, dict) or item.get("kind") not in CHECK_KINDS:
            raise ConfigError(f"Invalid check {item!r}; kind must be one of {CHECK_KINDS}")
        models = tuple(item.get("models") or ())
        metric = item.get("metric", "l1_rel")
        if metric not in ("l1_rel", "linf_rel"):
            raise ConfigError(f"Unknown metric '{metric}'")
        try:
            age_cells, v_cells = int(item.get("age_cells", 10)), int(item.get("v_cells", 10))
        except (TypeError, ValueError):
            raise ConfigError(f"age_cells and v_cells of {item!r} must be integers") from None
        if age_cells < 1 or v_cells < 1:
            raise ConfigError(f"age_cells and v_cells of {item!r} must be >= 1")
        checks.append(CheckSpec(kind=item["kind"], models=models, tol=_number(item, "tol", 1e-3),
                                metric=metric, skip_bins=int(item.get("skip_bins", 0)),
                                age_cells=age_cells, v_cells=v_cells))
    return tuple(checks)


def parse_scenario(raw: dict, base_dir: Path | None = None, name: str | None = None) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError("A scenario must be a YAML mapping")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"Unknown scenario keys: {', '.join(unknown)}")

    models = tuple(raw.get("models") or ())
    if not models:
        raise ConfigError("Scenario declares no models")
    bad = [m for m in models if m not in MODELS]
    if bad:
        raise ConfigError(f"Unknown models {bad}; expected a subset of {MODELS}")

    grid_raw = _section(raw, "grid")
    try:
        n_v = int(grid_raw.get("n_v", 400))
    except (TypeError, ValueError):
        raise ConfigError("grid.n_v must be an integer") from None
    grid = PotentialGrid(v_r=_number(grid_raw, "v_r", where="grid"),
                         v_min=_number(grid_raw, "v_min", DEFAULT_V_MIN), v_th=V_THRESHOLD, n_v=n_v)

    time_raw = _section(raw, "time")
    stride = time_raw.get("snapshot_stride")
    time = TimeSpec(dt=_number(time_raw, "dt", 1e-3), horizon=_number(time_raw, "horizon", where="time"),
                    snapshot_times=tuple(float(t) for t in time_raw.get("snapshot_times") or ()),
                    snapshot_stride=int(stride) if stride else None)
    if time.dt <= 0 or time.horizon < time.dt:
        raise ConfigError(f"Need 0 < dt <= horizon, got dt={time.dt}, horizon={time.horizon}")

    age_raw = _section(raw, "age")
    a_max = _number(age_raw, "a_max", 2.0)
    if a_max < 2 * time.dt:
        raise ConfigError(f"age.a_max={a_max} must span at least two time steps")

    mc_raw = _section(raw, "mc")
    mc = McSpec(n_trials=int(mc_raw.get("n_trials", 10_000)), seed=int(mc_raw.get("seed", 0)),
                block_size=int(mc_raw.get("block_size", BLOCK_SIZE)), threads=int(mc_raw.get("threads", 1)),
                psth_bin=_number(mc_raw, "psth_bin", 0.02), isi_bin=_number(mc_raw, "isi_bin", 0.02),
                sample_paths=int(mc_raw.get("sample_paths", 0)))
    if mc.n_trials < 1 or mc.seed < 0 or mc.block_size < 1 or mc.threads < 1 or mc.sample_paths < 0:
        raise ConfigError("mc.n_trials, mc.block_size and mc.threads must be >= 1, mc.seed and "
                          "mc.sample_paths >= 0")
    if mc.psth_bin < time.dt or mc.isi_bin < time.dt:
        raise ConfigError("PSTH and ISI bins must be at least one time step wide")

    initial_raw = _section(raw, "initial")
    initial_potential = _parse_initial(initial_raw.get("potential"), InitialSpec(kind="point", value=grid.v_r),
                                       "initial.potential")
    initial_age = _parse_initial(initial_raw.get("age"), InitialSpec(kind="point", value=0.0), "initial.age")
    if initial_age.kind == "file":
        raise ConfigError("initial.age does not accept files")

    hazard_raw = _section(raw, "hazard")
    hazard = HazardSpec(source=hazard_raw.get("source"), h=_number(hazard_raw, "h", 0.0),
                        tau=_number(hazard_raw, "tau", 1.0), h_amplitude=_number(hazard_raw, "h_amplitude", 0.0),
                        h_period=_number(hazard_raw, "h_period", 1.0), path=hazard_raw.get("path"),
                        form=hazard_raw.get("form", "log"))
    if hazard.form not in HAZARD_FORMS:
        raise ConfigError(f"hazard.form must be one of {HAZARD_FORMS}")

    outputs = tuple(raw.get("outputs") or ("rates",))
    if any(o not in OUTPUTS for o in outputs):
        raise ConfigError(f"Unknown outputs {outputs}; expected a subset of {OUTPUTS}")

    scenario = Scenario(name=str(raw.get("name") or name or "scenario"), models=models,
                        stimulus=_parse_stimulus(_section(raw, "stimulus")), grid=grid, time=time, a_max=a_max,
                        mc=mc, initial_potential=initial_potential, initial_age=initial_age, hazard=hazard,
                        outputs=outputs, checks=_parse_checks(raw.get("checks")),
                        description=str(raw.get("description", "")).strip(), base_dir=base_dir or Path.cwd())
    validate(scenario)
    return scenario


def validate(scenario: Scenario) -> None:
    """Cross-section constraints."""
    models = set(scenario.models)
    hazard = scenario.hazard
    if models & {"as", "mc-escape"}:
        if hazard.source not in HAZARD_SOURCES:
            raise ConfigError(f"Models 'as'/'mc-escape' need hazard.source in {HAZARD_SOURCES}")
        if hazard.source == "escape" and hazard.tau <= 0:
            raise ConfigError("hazard.tau must be > 0")
        if hazard.source == "file":
            if not hazard.path or not scenario.resolve(hazard.path).is_file():
                raise ConfigError(f"Hazard file not found: {hazard.path}")
        if hazard.source == "joint" and "joint" not in models:
            raise ConfigError("hazard.source 'joint' needs the 'joint' model")
    if scenario.initial_potential.kind == "file" and not scenario.resolve(scenario.initial_potential.path).is_file():
        raise ConfigError(f"Initial density file not found: {scenario.initial_potential.path}")
    if scenario.stimulus.kind == "sampled" and not scenario.stimulus.samples:
        raise ConfigError("A sampled stimulus needs samples")
    for check in scenario.checks:
        needed = CHECK_REQUIRES.get(check.kind, check.models)
        missing = [m for m in needed if m not in models]
        if missing:
            raise ConfigError(f"Check '{check.name}' refers to models not in the scenario: {missing}")
        if check.kind in ("rates", "isi") and len(check.models) != 2:
            raise ConfigError(f"Check '{check.kind}' compares exactly two models")
    # build once so stimulus and grid errors surface before any model runs
    scenario.stimulus_function()
    scenario.age_grid.check_step(scenario.time.dt)


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Scenario file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"Could not parse {path}: {exc}") from None
    logger.debug("Loaded scenario %s", path)
    return parse_scenario(raw, base_dir=path.parent, name=path.stem)


# ---------------------------------------------------------------------------
# Overrides
# ---------------------------------------------------------------------------


def env_value(name: str, cast=str):
    """SPIKEFLUX_<NAME> cast to the wanted type, or None when unset."""
    raw = os.environ.get(ENV_PREFIX + name)
    if raw is None or raw == "":
        return None
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"{ENV_PREFIX}{name}={raw!r} is not a valid {cast.__name__}") from None


def pick(flag, env_name: str, cast=str, default=None):
    """Explicit flag, then environment, then the file/default value."""
    if flag is not None:
        return flag
    value = env_value(env_name, cast)
    return default if value is None else value


def with_overrides(scenario: Scenario, seed: int | None = None, threads: int | None = None,
                   snapshot_stride: int | None = None) -> Scenario:
    seed = pick(seed, "SEED", int, scenario.mc.seed)
    threads = pick(threads, "THREADS", int, scenario.mc.threads)
    stride = pick(snapshot_stride, "SNAPSHOT_STRIDE", int, scenario.time.snapshot_stride)
    if seed < 0 or threads < 1 or (stride is not None and stride < 1):
        raise ConfigError("seed must be >= 0, threads >= 1 and snapshot stride >= 1")
    return dataclasses.replace(
        scenario,
        mc=dataclasses.replace(scenario.mc, seed=seed, threads=threads),
        time=dataclasses.replace(scenario.time, snapshot_stride=stride),
    )
