"""Scenario orchestration: runs the requested models, compares them and writes artifacts.

Independent models run concurrently; every artifact is collected in memory and written
in sorted order once all models have finished, so repeated runs with the same seed
produce byte-identical files whatever the thread count.
"""

from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from as1d import HazardTable, escape_hazard_table, solve_as
from core_types import (
    AgeDensity,
    AgeGrid,
    Density1D,
    FiringRateSeries,
    JointDensity,
    PotentialGrid,
    Stimulus,
    bin_average,
    compare_series,
    deposit_delta,
    evaluate_stimulus,
    gaussian_cells,
    rel_l1,
)
from errors import ConfigError, NumericalError, ToleranceError
from fp1d import solve_fp
from fpt import FptSolution, isi_on_bins, solve_fpt_autonomous, solve_fpt_nonautonomous
from joint2d import (
    JointSolution,
    coarse_cells,
    joint_moments,
    marginal_age,
    marginal_potential,
    solve_joint,
    stationary_joint,
)
from mc_engines import (
    InitialCondition,
    IsiHistogram,
    McConfig,
    McResult,
    isi_histogram,
    joint_histogram,
    psth,
    psth_edges,
    simulate_escape,
    simulate_joint,
    simulate_nlif,
)
from report import write_report
from scenario import MODELS, CheckSpec, InitialSpec, Scenario, load_scenario

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
DENSITY_MODELS = ("fp", "joint", "as")
# models that depend on a hazard produced by another model
HAZARD_CONSUMERS = ("as", "mc-escape")


@dataclass
class ModelRun:
    """Everything a model contributes to comparisons, checks and artifacts."""

    name: str
    rates: FiringRateSeries | None = None
    binned: FiringRateSeries | None = None
    isi: np.ndarray | None = None
    potential: list[Density1D] = field(default_factory=list)
    age: list[AgeDensity] = field(default_factory=list)
    joint: list[JointDensity] = field(default_factory=list)
    hazard: HazardTable | None = None
    fpt: FptSolution | None = None
    final_state: tuple | None = None
    paths: pd.DataFrame | None = None


@dataclass
class RunResult:
    out_dir: Path
    manifest: dict
    comparisons: pd.DataFrame
    runs: dict[str, ModelRun]

    @property
    def passed(self) -> bool:
        return self.manifest["passed"]


# ---------------------------------------------------------------------------
# Initial conditions and hazards
# ---------------------------------------------------------------------------


def load_profile(path: Path, grid: PotentialGrid) -> np.ndarray:
    """Density table with columns v, density interpolated onto the grid and renormalized."""
    try:
        table = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as exc:
        raise ConfigError(f"Could not read initial density {path}: {exc}") from None
    if not {"v", "density"} <= set(table.columns):
        raise ConfigError(f"{path} needs columns 'v' and 'density'")
    table = table.sort_values("v")
    values = np.interp(grid.centers, table["v"].to_numpy(float), table["density"].to_numpy(float),
                       left=0.0, right=0.0)
    values = np.maximum(values, 0.0)
    total = values.sum() * grid.dv
    if total <= 0:
        raise ConfigError(f"Initial density in {path} has no mass on the grid")
    return values / total


def potential_density(spec: InitialSpec, scenario: Scenario) -> np.ndarray:
    grid = scenario.grid
    if spec.kind == "gaussian":
        return gaussian_cells(grid.centers, spec.mean, spec.std)
    if spec.kind == "file":
        return load_profile(scenario.resolve(spec.path), grid)
    return deposit_delta(grid, spec.value)


def age_density(spec: InitialSpec, age_grid: AgeGrid) -> np.ndarray:
    """Cell k holds the cohort with age in [k da, (k + 1) da)."""
    if spec.kind == "gaussian":
        return gaussian_cells(age_grid.centers, spec.mean, spec.std)
    k = int(np.floor(spec.value / age_grid.da + 1e-9))
    if not 0 <= k < age_grid.n_a:
        raise ConfigError(f"Initial age {spec.value} outside [0, {age_grid.a_max})")
    values = np.zeros(age_grid.n_a)
    values[k] = 1.0 / age_grid.da
    return values


def mc_initial(spec: InitialSpec, scenario: Scenario) -> InitialCondition:
    if spec.kind == "file":
        return InitialCondition.cells(scenario.grid.centers, potential_density(spec, scenario))
    return spec.condition()


def write_hazard(table: HazardTable, path: Path) -> Path:
    """Age column `a`, then `S` (autonomous) or one `t=<time>` column per table row."""
    data = {"a": table.age_grid.ages}
    if table.is_autonomous:
        data["S"] = table.values
    else:
        for t, row in zip(table.times, table.values):
            data[f"t={t:.10g}"] = row
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(data).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    logger.info("Wrote hazard table %s", path)
    return path


def read_hazard(path: Path, age_grid: AgeGrid) -> HazardTable:
    try:
        table = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as exc:
        raise ConfigError(f"Could not read hazard file {path}: {exc}") from None
    if "a" not in table.columns or len(table.columns) < 2:
        raise ConfigError(f"Hazard file {path} needs an 'a' column and at least one hazard column")
    ages = table["a"].to_numpy(float)
    if ages.size != age_grid.n_a or not np.allclose(ages, age_grid.ages, rtol=0, atol=1e-9 * max(age_grid.a_max, 1)):
        raise ConfigError(f"Hazard file {path} ages do not match the scenario age grid "
                          f"(n_a={age_grid.n_a}, da={age_grid.da})")
    columns = [c for c in table.columns if c != "a"]
    if columns == ["S"]:
        return HazardTable(table["S"].to_numpy(float), age_grid)
    try:
        times = np.array([float(c.split("=", 1)[1]) for c in columns])
    except (IndexError, ValueError):
        raise ConfigError(f"Hazard columns in {path} must be 'S' or 't=<time>'") from None
    step = times[1] - times[0] if times.size > 1 else age_grid.da
    if times.size > 1 and not np.allclose(np.diff(times), step, rtol=1e-6, atol=0):
        raise ConfigError(f"Hazard rows in {path} are not evenly spaced in time")
    return HazardTable(table[columns].to_numpy(float).T, age_grid, t0=float(times[0]), dt=float(step))


def build_fpt(s: Stimulus, grid: PotentialGrid, age_grid: AgeGrid, horizon: float, form: str = "log",
              snapshot_steps=(), progress: bool = False) -> FptSolution:
    if s.is_constant:
        return solve_fpt_autonomous(s.mu0, s.sigma, grid, age_grid, hazard_form=form)
    return solve_fpt_nonautonomous(s, grid, age_grid, horizon, hazard_form=form,
                                   snapshot_steps=snapshot_steps, progress=progress)


def hazard_from_fpt(s: Stimulus, grid: PotentialGrid, age_grid: AgeGrid, path, horizon: float | None = None,
                    form: str = "log") -> Path:
    """Solve the first-passage problem and write S = ISI / P where the escape models can read it."""
    if not s.is_constant and horizon is None:
        raise ConfigError("A time-dependent stimulus needs a horizon for the hazard table")
    solution = build_fpt(s, grid, age_grid, horizon or 0.0, form)
    return write_hazard(solution.hazard, path)


def build_hazard(scenario: Scenario, upstream: dict[str, ModelRun]) -> HazardTable:
    spec = scenario.hazard
    age_grid = scenario.age_grid
    if spec.source == "escape":
        if spec.time_dependent:
            times = np.arange(scenario.time.n_steps) * scenario.time.dt
            return escape_hazard_table(age_grid, spec.h_of_t, spec.tau, times=times)
        return escape_hazard_table(age_grid, spec.h, spec.tau)
    if spec.source == "file":
        return read_hazard(scenario.resolve(spec.path), age_grid)
    if spec.source == "fpt":
        return upstream["fpt"].hazard
    if upstream["joint"].hazard is None:
        raise ConfigError("The joint run did not record its empirical hazard")
    return upstream["joint"].hazard


# ---------------------------------------------------------------------------
# Model runners
# ---------------------------------------------------------------------------


class ScenarioRunner:
    """Runs the models of one scenario and keeps their results by name."""

    def __init__(self, scenario: Scenario, progress: bool = False):
        self.scenario = scenario
        self.progress = progress
        self.stimulus = scenario.stimulus_function()
        self.grid = scenario.grid
        self.age_grid = scenario.age_grid
        self.dt = scenario.time.dt
        self.horizon = scenario.time.n_steps * self.dt
        self.edges = psth_edges(self.horizon, scenario.mc.psth_bin, self.dt)
        n_isi = max(int(np.ceil(self.age_grid.a_max / scenario.mc.isi_bin - 1e-9)), 1)
        self.isi_edges = 0.5 * self.dt + np.arange(n_isi + 1) * scenario.mc.isi_bin

    # -- helpers ------------------------------------------------------------

    def _mc_config(self) -> McConfig:
        mc = self.scenario.mc
        return McConfig(dt=self.dt, horizon=self.horizon, n_trials=mc.n_trials, seed=mc.seed,
                        record_trajectories=mc.sample_paths > 0, path_limit=mc.sample_paths or None,
                        block_size=mc.block_size,
                        threads=mc.threads, progress=self.progress)

    def _paths(self, result: McResult) -> pd.DataFrame | None:
        """Recorded sample paths as columns v<i> and a<i> next to t."""
        columns = {}
        for prefix, traj in (("v", result.trajectories), ("a", result.age_trajectories)):
            if traj is not None:
                columns.update({f"{prefix}{i}": row for i, row in enumerate(traj)})
        if not columns:
            return None
        return pd.DataFrame({"t": np.arange(self.scenario.time.n_steps + 1) * self.dt, **columns})

    def _isi(self, result) -> np.ndarray | None:
        try:
            hist: IsiHistogram = isi_histogram(result, self.scenario.mc.isi_bin, self.age_grid.a_max,
                                               offset=0.5 * self.dt)
        except NumericalError as exc:
            logger.warning("No ISI histogram: %s", exc)
            return None
        return hist.density

    def _needs_joint_hazard(self) -> bool:
        scn = self.scenario
        return scn.hazard.source == "joint" or any(c.kind == "marginal-age" for c in scn.checks)

    # -- density models -----------------------------------------------------

    def run_fp(self) -> ModelRun:
        scn = self.scenario
        solution = solve_fp(potential_density(scn.initial_potential, scn), self.stimulus, self.horizon, self.dt,
                            grid=self.grid, snapshot_times=scn.time.snapshot_times,
                            snapshot_stride=scn.time.snapshot_stride, progress=self.progress)
        return ModelRun("fp", rates=solution.rates, binned=bin_average(solution.rates, self.edges),
                        potential=solution.snapshots)

    def run_joint(self) -> ModelRun:
        scn = self.scenario
        pi0 = np.outer(age_density(scn.initial_age, self.age_grid), potential_density(scn.initial_potential, scn))
        solution: JointSolution = solve_joint(
            pi0, self.stimulus, self.horizon, self.dt, age_grid=self.age_grid, grid=self.grid,
            snapshot_times=scn.time.snapshot_times, snapshot_stride=scn.time.snapshot_stride,
            record_hazard=self._needs_joint_hazard(), hazard_form=scn.hazard.form, progress=self.progress)
        return ModelRun("joint", rates=solution.rates, binned=bin_average(solution.rates, self.edges),
                        potential=[marginal_potential(d, self.age_grid, self.grid, d.t) for d in solution.snapshots],
                        age=[marginal_age(d, self.age_grid, self.grid, d.t) for d in solution.snapshots],
                        joint=solution.snapshots, hazard=solution.hazard)

    def run_fpt(self) -> ModelRun:
        scn = self.scenario
        solution = build_fpt(self.stimulus, self.grid, self.age_grid, self.horizon, scn.hazard.form,
                             progress=self.progress)
        return ModelRun("fpt", isi=isi_on_bins(solution, self.isi_edges), hazard=solution.hazard, fpt=solution)

    def run_as(self, hazard: HazardTable) -> ModelRun:
        scn = self.scenario
        solution = solve_as(age_density(scn.initial_age, self.age_grid), hazard, self.horizon, self.dt,
                            snapshot_times=scn.time.snapshot_times, snapshot_stride=scn.time.snapshot_stride,
                            progress=self.progress)
        return ModelRun("as", rates=solution.rates, binned=bin_average(solution.rates, self.edges),
                        age=solution.snapshots, hazard=hazard)

    # -- Monte Carlo --------------------------------------------------------

    def run_mc_nlif(self) -> ModelRun:
        scn = self.scenario
        result = simulate_nlif(self.stimulus, self.grid.v_r, self._mc_config(), mc_initial(scn.initial_potential, scn))
        return ModelRun("mc-nlif", binned=psth(result, scn.mc.psth_bin), isi=self._isi(result),
                        paths=self._paths(result))

    def run_mc_joint(self) -> ModelRun:
        scn = self.scenario
        result = simulate_joint(self.stimulus, self.grid.v_r, self._mc_config(),
                                mc_initial(scn.initial_potential, scn), scn.initial_age.condition())
        return ModelRun("mc-joint", binned=psth(result, scn.mc.psth_bin), isi=self._isi(result),
                        final_state=(result.final_potential, result.final_age), paths=self._paths(result))

    def run_mc_escape(self, hazard: HazardTable) -> ModelRun:
        scn = self.scenario
        result = simulate_escape(hazard, self._mc_config(), scn.initial_age.condition())
        return ModelRun("mc-escape", binned=psth(result, scn.mc.psth_bin), isi=self._isi(result),
                        paths=self._paths(result))

    # -- orchestration ------------------------------------------------------

    def run(self) -> dict[str, ModelRun]:
        scn = self.scenario
        requested = set(scn.models)
        first = [m for m in MODELS if m in requested and m not in HAZARD_CONSUMERS]
        if scn.hazard.source == "fpt" and requested & set(HAZARD_CONSUMERS) and "fpt" not in first:
            first.append("fpt")
        runners = {"fp": self.run_fp, "joint": self.run_joint, "fpt": self.run_fpt,
                   "mc-nlif": self.run_mc_nlif, "mc-joint": self.run_mc_joint}
        results = self._concurrently({m: runners[m] for m in first})

        second = [m for m in MODELS if m in requested and m in HAZARD_CONSUMERS]
        if second:
            hazard = build_hazard(scn, results)
            later = {"as": lambda: self.run_as(hazard), "mc-escape": lambda: self.run_mc_escape(hazard)}
            results.update(self._concurrently({m: later[m] for m in second}))
        return results

    def _concurrently(self, jobs: dict) -> dict[str, ModelRun]:
        if not jobs:
            return {}
        with ThreadPoolExecutor(max_workers=self.scenario.mc.threads) as pool:
            futures = {name: pool.submit(job) for name, job in jobs.items()}
            results = {}
            for name, future in futures.items():
                results[name] = future.result()
                logger.info("Model %s finished", name)
        return results


# ---------------------------------------------------------------------------
# Comparisons and checks
# ---------------------------------------------------------------------------


def _pairs(runs: dict[str, ModelRun], attr: str):
    """Model pairs in canonical order; the first of each pair is the reference."""
    order = ("fp", "joint", "as", "fpt", "mc-nlif", "mc-joint", "mc-escape")
    names = [m for m in order if m in runs and getattr(runs[m], attr) is not None]
    return itertools.combinations(names, 2)


def _trim(series: FiringRateSeries, skip: int) -> FiringRateSeries:
    return FiringRateSeries(series.times[skip:], series.rates[skip:]) if skip else series


def comparison_table(runs: dict[str, ModelRun]) -> pd.DataFrame:
    rows = []
    for a, b in _pairs(runs, "binned"):
        d = compare_series(runs[a].binned, runs[b].binned)
        rows.append({"quantity": "rate", "reference": a, "model": b, "l1_rel": d.l1_rel, "linf_rel": d.linf_rel})
    for a, b in _pairs(runs, "isi"):
        ref, other = runs[a].isi, runs[b].isi
        linf = float(np.abs(other - ref).max() / np.abs(ref).max()) if np.abs(ref).max() > 0 else float("inf")
        rows.append({"quantity": "isi", "reference": a, "model": b, "l1_rel": rel_l1(other, ref), "linf_rel": linf})
    return pd.DataFrame(rows, columns=["quantity", "reference", "model", "l1_rel", "linf_rel"])


def _snapshot_error(reference: list, other: list) -> float:
    """Largest rel-L1 over snapshots taken at matching times."""
    by_time = {round(d.t, 9): d for d in reference}
    errors = [rel_l1(d.values, by_time[round(d.t, 9)].values) for d in other if round(d.t, 9) in by_time]
    if not errors:
        raise ConfigError("No snapshots at matching times")
    return max(errors)


def _stationary_error(runner: ScenarioRunner) -> float:
    """max(||pi - r phi||_1, rel-L1 of n against r P) at mu(0)."""
    mu = evaluate_stimulus(runner.stimulus, 0.0)
    fpt = solve_fpt_autonomous(mu, runner.stimulus.sigma, runner.grid, runner.age_grid)
    stat = stationary_joint(mu, runner.stimulus.sigma, runner.grid, runner.age_grid)
    cell = runner.grid.dv * runner.age_grid.da
    product = stat.rate * fpt.phi
    pi = np.asarray(stat.pi.values)
    n = marginal_age(pi, runner.age_grid, runner.grid).values
    return max(float(np.abs(pi - product).sum() * cell), rel_l1(n, stat.rate * fpt.survivor))


def _fpt_identity_error(solution: FptSolution) -> float:
    """max |P(t, 0) - 1| and max |-(P(t+dt, a+dt) - P(t, a))/dt - ISI(t+dt, a+dt)|."""
    dt = solution.age_grid.da
    survivor, isi = solution.survivor, solution.isi_raw
    if survivor.ndim == 1:
        head = abs(survivor[0] - 1.0)
        flux = np.abs(-(survivor[1:] - survivor[:-1]) / dt - isi[1:]).max()
    else:
        head = np.abs(survivor[:, 0] - 1.0).max()
        flux = np.abs(-(survivor[1:, 1:] - survivor[:-1, :-1]) / dt - isi[1:, 1:]).max()
    return float(max(head, flux))


def _joint_histogram_error(check: CheckSpec, runs: dict[str, ModelRun]) -> float:
    """Sum over coarse (a, v) blocks of |P_mc - P_joint| at the horizon."""
    final = runs["joint"].joint[-1]
    potential, age = runs["mc-joint"].final_state
    expected, age_edges, v_edges = coarse_cells(final, check.age_cells, check.v_cells)
    area = np.outer(np.diff(age_edges), np.diff(v_edges))
    observed = joint_histogram(potential, age, age_edges, v_edges) * area
    return float(np.abs(observed - expected).sum())


def evaluate_check(check: CheckSpec, runs: dict[str, ModelRun], runner: ScenarioRunner) -> dict:
    if check.kind == "rates":
        a, b = check.models
        d = compare_series(_trim(runs[a].binned, check.skip_bins), _trim(runs[b].binned, check.skip_bins))
        value = d.l1_rel if check.metric == "l1_rel" else d.linf_rel
    elif check.kind == "isi":
        a, b = check.models
        if runs[a].isi is None or runs[b].isi is None:
            raise ConfigError(f"Check '{check.name}' needs ISI histograms from both models")
        value = rel_l1(runs[b].isi, runs[a].isi)
    elif check.kind == "mass":
        masses = [d.mass() for m in check.models for d in runs[m].potential + runs[m].age]
        if not masses:
            raise ConfigError(f"Check '{check.name}' found no density snapshots")
        value = max(abs(m - 1.0) for m in masses)
    elif check.kind == "marginal-potential":
        rates = compare_series(runs["fp"].rates, runs["joint"].rates)
        value = max(_snapshot_error(runs["fp"].potential, runs["joint"].potential), rates.l1_rel)
    elif check.kind == "marginal-age":
        value = _snapshot_error(runs["as"].age, runs["joint"].age)
    elif check.kind == "stationary":
        value = _stationary_error(runner)
    elif check.kind == "joint-histogram":
        value = _joint_histogram_error(check, runs)
    else:
        value = _fpt_identity_error(runs["fpt"].fpt)
    passed = bool(value <= check.tol)
    log = logger.info if passed else logger.warning
    log("Check %s: %.3e (tol %.1e) %s", check.name, value, check.tol, "passed" if passed else "FAILED")
    return {"name": check.name, "kind": check.kind, "models": list(check.models), "value": float(value),
            "tol": check.tol, "passed": passed}


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def _label(t: float) -> str:
    return f"t={t:.6g}"


def artifact_tables(runs: dict[str, ModelRun], runner: ScenarioRunner, comparisons: pd.DataFrame) -> dict:
    scn = runner.scenario
    tables: dict[str, pd.DataFrame] = {"comparisons.csv": comparisons}
    if "rates" in scn.outputs:
        binned = {m: r.binned.rates for m, r in runs.items() if r.binned is not None}
        if binned:
            centers = 0.5 * (runner.edges[1:] + runner.edges[:-1])
            tables["rates.csv"] = pd.DataFrame({"t": centers, **dict(sorted(binned.items()))})
        fine = {m: runs[m].rates for m in DENSITY_MODELS if m in runs and runs[m].rates is not None}
        if fine:
            times = next(iter(fine.values())).times
            tables["rates_fine.csv"] = pd.DataFrame({"t": times, **{m: s.rates for m, s in sorted(fine.items())}})
    if "isi" in scn.outputs:
        isi = {m: r.isi for m, r in runs.items() if r.isi is not None}
        if isi:
            centers = 0.5 * (runner.isi_edges[1:] + runner.isi_edges[:-1])
            tables["isi.csv"] = pd.DataFrame({"a": centers, **dict(sorted(isi.items()))})
    if "hazard" in scn.outputs:
        hazard = next((runs[m].hazard for m in ("as", "fpt", "joint") if m in runs and runs[m].hazard is not None),
                      None)
        if hazard is not None:
            tables["hazard.csv"] = _hazard_frame(hazard, runner)
    if "snapshots" in scn.outputs:
        for m, r in sorted(runs.items()):
            if r.potential:
                tables[f"density_{m}.csv"] = pd.DataFrame(
                    {"v": runner.grid.centers, **{_label(d.t): d.values for d in r.potential}})
            if r.age:
                tables[f"age_{m}.csv"] = pd.DataFrame(
                    {"a": runner.age_grid.ages, **{_label(d.t): d.values for d in r.age}})
    if "joint" in scn.outputs:
        v_labels = [f"v={v:.6g}" for v in runner.grid.centers]
        if "joint" in runs:
            for d in runs["joint"].joint:
                frame = pd.DataFrame(np.asarray(d.values), columns=v_labels)
                frame.insert(0, "a", runner.age_grid.ages)
                tables[f"joint_snapshot_t{d.t:.6g}.csv"] = frame
            tables["moments_joint.csv"] = pd.DataFrame([joint_moments(d) for d in runs["joint"].joint])
        if "mc-joint" in runs and runs["mc-joint"].final_state is not None:
            potential, age = runs["mc-joint"].final_state
            # age bins centred on the cell labels k*da
            age_edges = (np.arange(runner.age_grid.n_a + 1) - 0.5) * runner.age_grid.da
            density = joint_histogram(potential, age, age_edges, runner.grid.faces)
            frame = pd.DataFrame(density, columns=v_labels)
            frame.insert(0, "a", runner.age_grid.ages)
            tables[f"joint_snapshot_mc_t{runner.horizon:.6g}.csv"] = frame
    for m, r in sorted(runs.items()):
        if r.paths is not None:
            tables[f"paths_{m}.csv"] = r.paths
    return tables


def _hazard_frame(hazard: HazardTable, runner: ScenarioRunner) -> pd.DataFrame:
    data = {"a": hazard.age_grid.ages}
    if hazard.is_autonomous:
        data["S"] = hazard.values
    else:
        steps = sorted(runner.scenario.time.snapshot_times or ())
        times = [t for t in steps if t < runner.horizon] or [0.0]
        for t in times:
            data[_label(t)] = hazard.row(t)
    return pd.DataFrame(data)


def write_artifacts(out_dir: Path, tables: dict, manifest: dict) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(tables):
        tables[name].to_csv(out_dir / name, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        written.append(name)
    manifest["files"] = written
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return written


def run_scenario(scenario, out_dir=None, check: bool = False, progress: bool = False,
                 xlsx_report: bool = False) -> RunResult:
    """Run every model of a scenario and write its artifacts.

    In check mode a failed tolerance raises ToleranceError after the artifacts are written.
    """
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(scenario)
    out_dir = Path(out_dir) if out_dir else Path("runs") / scenario.name
    logger.info("Running scenario '%s' with models %s", scenario.name, ", ".join(scenario.models))

    runner = ScenarioRunner(scenario, progress=progress)
    runs = runner.run()
    comparisons = comparison_table(runs)
    checks = [evaluate_check(c, runs, runner) for c in scenario.checks]

    echo = scenario.echo()
    echo["mc"].pop("threads", None)
    manifest = {
        "scenario": scenario.name,
        "seed": scenario.mc.seed,
        "config": echo,
        "grid": {"n_v": scenario.grid.n_v, "dv": scenario.grid.dv, "n_a": runner.age_grid.n_a,
                 "da": runner.age_grid.da, "dt": runner.dt, "n_steps": scenario.time.n_steps},
        "tolerances": {c["name"]: c["tol"] for c in checks},
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }
    write_artifacts(out_dir, artifact_tables(runs, runner, comparisons), manifest)
    if xlsx_report:
        write_report(manifest, comparisons, out_dir / "report.xlsx")
    logger.info("Scenario '%s' written to %s", scenario.name, out_dir)

    result = RunResult(out_dir=out_dir, manifest=manifest, comparisons=comparisons, runs=runs)
    if check and not result.passed:
        failed = ", ".join(c["name"] for c in checks if not c["passed"])
        raise ToleranceError(f"Scenario '{scenario.name}' failed checks: {failed}")
    return result
