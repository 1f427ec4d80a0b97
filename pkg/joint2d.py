"""Joint age-potential Fokker-Planck system.

    dpi/dt + dpi/da + d/dv[(mu(t) - v) pi] - (sigma^2/2) d2pi/dv2 = 0
    pi(t, a, v_th) = 0,   pi(t, 0, v) = delta(v - v_r) r(t),   r(t) = int rho(t, a) da

Each step is split into an exact one-cell age shift, the implicit absorbing v-step of
fp1d applied to every age slice at once, and the reinjection of the collected flux into
the (a = 0, v_r) cells. The same building blocks drive fp1d, as1d and fpt, so the
marginalization identities hold at the discrete level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from as1d import HazardTable, check_age_truncation, shift_ages
from core_types import (
    EPS_MASS,
    EPS_P,
    AgeDensity,
    AgeGrid,
    Density1D,
    FiringRateSeries,
    JointDensity,
    PotentialGrid,
    Stimulus,
    evaluate_stimulus,
    gaussian_cells,
    mass,
    snapshot_steps,
)
from errors import ConfigError, ConvergenceError, NumericalError
from fp1d import OperatorCache, PotentialOperator, check_nonnegative, reset_profile
from fpt import HAZARD_FORMS, floor_to_reliable

logger = logging.getLogger(__name__)

STATIONARY_TOLERANCE = 1e-9


@dataclass
class JointState:
    """pi on age x potential cells, the per-age flux of the last step and the rate history."""

    pi: np.ndarray
    age_grid: AgeGrid
    grid: PotentialGrid
    t: float = 0.0
    step: int = 0
    dt: float | None = None
    rho: np.ndarray | None = None
    rate_times: list = field(default_factory=list)
    rates: list = field(default_factory=list)

    @property
    def density(self) -> JointDensity:
        return JointDensity(self.pi, self.age_grid, self.grid, self.t)

    @property
    def r_history(self) -> FiringRateSeries:
        return FiringRateSeries(np.array(self.rate_times), np.array(self.rates))


def gaussian_joint(age_grid: AgeGrid, grid: PotentialGrid, age_mean: float, age_std: float,
                   v_mean: float, v_std: float) -> np.ndarray:
    """Product Gaussian in (a, v) with unit mass."""
    return np.outer(gaussian_cells(age_grid.centers, age_mean, age_std),
                    gaussian_cells(grid.centers, v_mean, v_std))


def joint_step(state: JointState, s: Stimulus, dt: float, operator: PotentialOperator | None = None) -> JointState:
    age_grid, grid = state.age_grid, state.grid
    age_grid.check_step(dt)
    if operator is None:
        operator = PotentialOperator(grid, s.sigma, evaluate_stimulus(s, state.t), dt)

    # (i) age shift
    shifted = shift_ages(state.pi)
    # (ii) absorbing v-step on every occupied slice; slice 0 is empty after the shift
    pi = np.empty_like(shifted)
    pi[1:] = operator.solve(shifted[1:].T).T
    rho = np.zeros(age_grid.n_a)
    rho[1:] = operator.threshold_flux(pi[1:])
    # (iii) reinjection at (0, v_r), pi(t, 0, v) = delta(v - v_r) r(t)
    r = rho.sum() * age_grid.da
    pi[0] = r * reset_profile(grid)

    pi = check_nonnegative(pi, "Joint density")
    check_age_truncation(pi[-1].sum() * grid.dv * age_grid.da)
    step = state.step + 1
    state.rate_times.append(step * dt)
    state.rates.append(max(r, 0.0))
    return JointState(pi=pi, age_grid=age_grid, grid=grid, t=step * dt, step=step, dt=dt, rho=rho,
                      rate_times=state.rate_times, rates=state.rates)


# ---------------------------------------------------------------------------
# Marginals and hazard
# ---------------------------------------------------------------------------


def _values(pi) -> np.ndarray:
    if isinstance(pi, (JointState, JointDensity)):
        return np.asarray(pi.pi if isinstance(pi, JointState) else pi.values)
    return np.asarray(pi, dtype=float)


def marginal_potential(pi, age_grid: AgeGrid, grid: PotentialGrid, t: float = 0.0) -> Density1D:
    """p(t, v) = int pi(t, a, v) da."""
    return Density1D(_values(pi).sum(axis=0) * age_grid.da, grid, t)


def marginal_age(pi, age_grid: AgeGrid, grid: PotentialGrid, t: float = 0.0) -> AgeDensity:
    """n(t, a) = int pi(t, a, v) dv."""
    return AgeDensity(_values(pi).sum(axis=1) * grid.dv, age_grid, t)


def hazard_row(n: np.ndarray, rho: np.ndarray, dt: float, form: str = "log", eps: float = EPS_P) -> np.ndarray:
    """S = rho / n from the post-step age density.

    The log form ln(1 + rho dt / n) / dt is the hazard whose exp(-S dt) decay removes
    exactly the mass the joint step absorbed from each age cell.
    """
    if form not in HAZARD_FORMS:
        raise ConfigError(f"Unknown hazard form '{form}', expected one of {HAZARD_FORMS}")
    with np.errstate(divide="ignore", invalid="ignore"):
        if form == "ratio":
            hazard = rho / n
        else:
            hazard = np.log1p(rho * dt / n) / dt
    hazard = np.where(np.isfinite(hazard), hazard, 0.0)
    hazard = floor_to_reliable(hazard, n, eps)
    return np.maximum(np.where(rho > 0, hazard, 0.0), 0.0)


def empirical_hazard(state: JointState, form: str = "log") -> HazardTable:
    """Age-only hazard S(a) = rho(a) / n(a) of the step that produced `state`."""
    if state.rho is None or state.dt is None:
        raise ConfigError("empirical_hazard needs a state produced by joint_step")
    n = marginal_age(state.pi, state.age_grid, state.grid).values
    return HazardTable(hazard_row(n, state.rho, state.dt, form), state.age_grid)


# ---------------------------------------------------------------------------
# Time integration
# ---------------------------------------------------------------------------


@dataclass
class JointSolution:
    snapshots: list[JointDensity]
    rates: FiringRateSeries
    final: JointState
    hazard: HazardTable | None = None


def solve_joint(pi0, s: Stimulus, horizon: float, dt: float, age_grid: AgeGrid | None = None,
                grid: PotentialGrid | None = None, snapshot_times=None, snapshot_stride: int | None = None,
                record_hazard: bool = False, hazard_form: str = "log", progress: bool = False) -> JointSolution:
    """Integrate the joint system; optionally tabulate the empirical hazard of every step.

    Hazard row i holds the hazard of the step starting at i*dt, the convention as1d reads.
    """
    if isinstance(pi0, JointDensity):
        age_grid, grid, values = pi0.age_grid, pi0.grid, np.array(pi0.values)
    else:
        if age_grid is None or grid is None:
            raise ConfigError("Grids are required when the initial density is an array")
        values = np.array(pi0, dtype=float)
    age_grid.check_step(dt)
    total = mass(values, age_grid, grid)
    if abs(total - 1.0) > EPS_MASS:
        raise ConfigError(f"Initial joint density must have unit mass, got {total:.9f}")
    n_steps = int(round(horizon / dt))
    wanted = snapshot_steps(n_steps, dt, snapshot_times, snapshot_stride)

    cache = OperatorCache(grid, s, dt)
    state = JointState(pi=values, age_grid=age_grid, grid=grid, dt=dt)
    snapshots = [state.density]
    rows = np.empty((n_steps, age_grid.n_a)) if record_hazard else None
    logger.info("Solving joint system: %d steps, %d x %d cells", n_steps, age_grid.n_a, grid.n_v)
    for i in tqdm(range(n_steps), desc="joint2d", disable=not progress):
        state = joint_step(state, s, dt, cache.at(state.t))
        if rows is not None:
            n = state.pi.sum(axis=1) * grid.dv
            rows[i] = hazard_row(n, state.rho, dt, hazard_form)
        if state.step in wanted:
            snapshots.append(state.density)
    hazard = HazardTable(rows, age_grid, t0=0.0, dt=dt) if rows is not None and n_steps > 0 else None
    return JointSolution(snapshots=snapshots, rates=state.r_history, final=state, hazard=hazard)


@dataclass
class StationaryJoint:
    pi: JointDensity
    rate: float
    rho: np.ndarray
    steps: int


def stationary_joint(mu: float, sigma: float, grid: PotentialGrid, age_grid: AgeGrid,
                     tol: float = STATIONARY_TOLERANCE, check_every: int = 100,
                     max_steps: int = 200_000, pi0=None) -> StationaryJoint:
    """Long-time integration at constant mu until ||pi(t + check_every*dt) - pi(t)||_1 < tol.

    Starts by default from the whole population at (a = 0, v_r).
    """
    dt = age_grid.da
    s = Stimulus.constant(mu, sigma)
    if pi0 is None:
        values = np.zeros((age_grid.n_a, grid.n_v))
        values[0] = reset_profile(grid) / age_grid.da
    else:
        values = np.array(_values(pi0), dtype=float)
    op = PotentialOperator(grid, sigma, mu, dt)
    state = JointState(pi=values, age_grid=age_grid, grid=grid, dt=dt)
    previous = state.pi
    cell = grid.dv * age_grid.da
    while state.step < max_steps:
        for _ in range(check_every):
            state = joint_step(state, s, dt, op)
        change = np.abs(state.pi - previous).sum() * cell
        if change < tol:
            logger.info("Stationary joint density reached after %d steps, r=%.6g", state.step, state.rates[-1])
            return StationaryJoint(pi=state.density, rate=state.rates[-1], rho=state.rho, steps=state.step)
        previous = state.pi
    raise ConvergenceError(f"Stationary joint density did not converge within {max_steps} steps")


# ---------------------------------------------------------------------------
# Separable and transform constructions
# ---------------------------------------------------------------------------


def _construct(phi: np.ndarray, survivor: np.ndarray, n: np.ndarray, age_grid: AgeGrid,
               eps: float = EPS_P) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    survivor = np.asarray(survivor, dtype=float)
    n = np.asarray(n.values if isinstance(n, AgeDensity) else n, dtype=float)
    floored = survivor < eps
    lost = n[floored].sum() * age_grid.da
    if lost > EPS_MASS:
        raise NumericalError(f"Survivor floor hit age cells carrying mass {lost:.3g}; inputs are inconsistent")
    weight = np.divide(n, survivor, out=np.zeros_like(n), where=~floored)
    return phi * weight[:, None]


def separable_solution(phi_auto: np.ndarray, survivor: np.ndarray, n, age_grid: AgeGrid,
                       grid: PotentialGrid, t: float = 0.0) -> JointDensity:
    """pi(t, a, v) = phi(a, v) n(t, a) / P(a) for a constant stimulus."""
    return JointDensity(_construct(phi_auto, survivor, n, age_grid), age_grid, grid, t)


def transform_solution(phi_t: np.ndarray, survivor_t: np.ndarray, n, age_grid: AgeGrid,
                       grid: PotentialGrid, t: float = 0.0) -> JointDensity:
    """pi(t, a, v) = phi(t, a, v) n(t, a) / P(t, a) for a time-dependent stimulus."""
    return JointDensity(_construct(phi_t, survivor_t, n, age_grid), age_grid, grid, t)


def integral_transform(phi_t: np.ndarray, survivor_t: np.ndarray, n, age_grid: AgeGrid,
                       grid: PotentialGrid, t: float = 0.0) -> Density1D:
    """p(t, v) = int phi(t, a, v) n(t, a) / P(t, a) da."""
    return Density1D(_construct(phi_t, survivor_t, n, age_grid).sum(axis=0) * age_grid.da, grid, t)


def transform_residual(pi_now, pi_next, s: Stimulus, t: float, dt: float,
                       age_grid: AgeGrid, grid: PotentialGrid) -> float:
    """||joint_step(pi_now) - pi_next||_1 / dt for a constructed pair of consecutive fields."""
    state = JointState(pi=np.array(_values(pi_now)), age_grid=age_grid, grid=grid, t=t, dt=dt)
    stepped = joint_step(state, s, dt)
    return float(np.abs(stepped.pi - _values(pi_next)).sum() * grid.dv * age_grid.da / dt)


def joint_moments(density: JointDensity) -> dict[str, float]:
    """Mass and first/second moments in age and potential, for regression records."""
    pi = np.asarray(density.values)
    cell = density.grid.dv * density.age_grid.da
    total = pi.sum() * cell
    ages = density.age_grid.centers
    volts = density.grid.centers
    n = pi.sum(axis=1) * cell
    p = pi.sum(axis=0) * cell
    mean_a = float((ages * n).sum() / total)
    mean_v = float((volts * p).sum() / total)
    return {
        "t": float(density.t),
        "mass": float(total),
        "mean_age": mean_a,
        "mean_potential": mean_v,
        "var_age": float(((ages - mean_a) ** 2 * n).sum() / total),
        "var_potential": float(((volts - mean_v) ** 2 * p).sum() / total),
    }


def coarse_cells(density: JointDensity, age_cells: int, v_cells: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Probability of each block of age_cells x v_cells cells, with the block edges.

    Age edges sit half a cell below the labels k*da, so ages on the step lattice fall
    inside the block of their cell.
    """
    if age_cells < 1 or v_cells < 1:
        raise ConfigError("Coarse blocks need at least one cell per axis")
    age_grid, grid = density.age_grid, density.grid
    age_starts = np.arange(0, age_grid.n_a, age_cells)
    v_starts = np.arange(0, grid.n_v, v_cells)
    cell = grid.dv * age_grid.da
    blocks = np.add.reduceat(np.add.reduceat(np.asarray(density.values), age_starts, axis=0), v_starts, axis=1)
    age_edges = (np.append(age_starts, age_grid.n_a) - 0.5) * age_grid.da
    v_edges = grid.faces[np.append(v_starts, grid.n_v)]
    return blocks * cell, age_edges, v_edges
