"""Finite-volume solver for the 1D Fokker-Planck equation of the noisy LIF neuron.

    dp/dt + d/dv[(mu(t) - v) p] - (sigma^2/2) d2p/dv2 = delta(v - v_r) r(t)

Cell-centered finite volumes with Chang-Cooper (exponentially fitted) fluxes and
backward-Euler time stepping. The threshold v_th is absorbing (ghost value 0 on the face),
the lower face v_min carries zero total flux, and the absorbed mass is reinjected at v_r
within the same step. The implicit operator is an M-matrix, so densities stay
nonnegative for any dt.

`PotentialOperator` is shared with the first-passage and joint solvers.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import exprel
from tqdm import tqdm

from core_types import (
    EPS_MASS,
    Density1D,
    FiringRateSeries,
    PotentialGrid,
    Stimulus,
    deposit_delta,
    evaluate_stimulus,
    gaussian_cells,
    mass,
    snapshot_steps,
)
from errors import ConfigError, ConvergenceError, NegativeDensityError

logger = logging.getLogger(__name__)

NEGATIVE_TOLERANCE = 1e-14
STATIONARY_TOLERANCE = 1e-9


def bernoulli(x):
    """B(x) = x / (e^x - 1), evaluated without cancellation."""
    return 1.0 / exprel(x)


class PotentialOperator:
    """Backward-Euler step of the v-part of the Fokker-Planck operator at fixed mu.

    No reinjection: mass crossing v_th leaves the domain. `threshold_flux` returns the
    rate at which it left during the step: the flux across the half cell between the last
    center and the zero face value, with the same exponential fitting as the interior
    faces. Without drift this is the one-sided difference -(sigma^2/2) dp/dv at v_th.
    """

    def __init__(self, grid: PotentialGrid, sigma: float, mu: float, dt: float):
        if dt <= 0:
            raise ConfigError(f"dt must be > 0, got {dt}")
        self.grid = grid
        self.sigma = sigma
        self.mu = mu
        self.dt = dt
        self.diffusion = 0.5 * sigma * sigma
        dv = grid.dv
        w_th = (mu - grid.v_th) * 0.5 * dv / self.diffusion
        self.gain = 2.0 * self.diffusion / dv * float(bernoulli(-w_th))

        # interior faces: F = alpha p_j - beta p_{j+1}
        drift = mu - grid.faces[1:-1]
        w = drift * dv / self.diffusion
        alpha = self.diffusion / dv * bernoulli(-w)
        beta = self.diffusion / dv * bernoulli(w)

        diag = np.zeros(grid.n_v)
        diag[:-1] += alpha / dv
        diag[1:] += beta / dv
        diag[-1] += self.gain / dv

        ab = np.zeros((3, grid.n_v))
        ab[0, 1:] = -dt * beta / dv
        ab[1] = 1.0 + dt * diag
        ab[2, :-1] = -dt * alpha / dv
        self._banded = ab

    def solve(self, p: np.ndarray) -> np.ndarray:
        """Advance one step; `p` is (n_v,) or (n_v, k) for k independent slices."""
        return solve_banded((1, 1), self._banded, p, check_finite=False)

    def threshold_flux(self, p: np.ndarray):
        return self.gain * p[..., -1]


class OperatorCache:
    """Rebuilds the operator only when mu(t) changes."""

    def __init__(self, grid: PotentialGrid, stimulus: Stimulus, dt: float):
        self.grid = grid
        self.stimulus = stimulus
        self.dt = dt
        self._op: PotentialOperator | None = None

    def at(self, t: float) -> PotentialOperator:
        mu = evaluate_stimulus(self.stimulus, t)
        if self._op is None or self._op.mu != mu:
            self._op = PotentialOperator(self.grid, self.stimulus.sigma, mu, self.dt)
        return self._op


@functools.lru_cache(maxsize=32)
def reset_profile(grid: PotentialGrid) -> np.ndarray:
    """Unit-mass deposit at v_r."""
    profile = deposit_delta(grid, grid.v_r, 1.0)
    profile.setflags(write=False)
    return profile


def check_nonnegative(values: np.ndarray, what: str) -> np.ndarray:
    low = values.min()
    if low < 0:
        if low < -NEGATIVE_TOLERANCE * max(values.max(), 1.0):
            raise NegativeDensityError(f"{what} became negative ({low:.3g}); check grid and time step")
        values = np.maximum(values, 0.0)
    return values


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


@dataclass
class Fp1dState:
    """p(t, v) plus the firing-rate history accumulated so far.

    The history buffers are carried forward from step to step rather than copied.
    """

    p: np.ndarray
    grid: PotentialGrid
    t: float = 0.0
    step: int = 0
    dt: float | None = None
    rate_times: list = field(default_factory=list)
    rates: list = field(default_factory=list)

    @property
    def density(self) -> Density1D:
        return Density1D(self.p, self.grid, self.t)

    @property
    def r_history(self) -> FiringRateSeries:
        return FiringRateSeries(np.array(self.rate_times), np.array(self.rates))


def fp_step(state: Fp1dState, s: Stimulus, dt: float, operator: PotentialOperator | None = None) -> Fp1dState:
    """One conservative step: implicit drift-diffusion with absorption, then reinjection."""
    if operator is None:
        operator = PotentialOperator(state.grid, s.sigma, evaluate_stimulus(s, state.t), dt)
    q = operator.solve(state.p)
    r = float(operator.threshold_flux(q))
    p_new = check_nonnegative(q + (r * dt) * reset_profile(state.grid), "Potential density")
    step = state.step + 1
    state.rate_times.append(step * dt)
    state.rates.append(max(r, 0.0))
    return Fp1dState(p=p_new, grid=state.grid, t=step * dt, step=step, dt=dt,
                     rate_times=state.rate_times, rates=state.rates)


@dataclass
class FpSolution:
    snapshots: list[Density1D]
    rates: FiringRateSeries
    final: Fp1dState


def _as_values(p0, grid: PotentialGrid | None):
    if isinstance(p0, Density1D):
        return np.array(p0.values), p0.grid
    if grid is None:
        raise ConfigError("A PotentialGrid is required when the initial density is an array")
    return np.array(p0, dtype=float), grid


def solve_fp(p0, s: Stimulus, horizon: float, dt: float, grid: PotentialGrid | None = None,
             snapshot_times=None, snapshot_stride: int | None = None, progress: bool = False) -> FpSolution:
    """Integrate the Fokker-Planck system from p0 over [0, horizon]."""
    values, grid = _as_values(p0, grid)
    total = mass(values, grid)
    if abs(total - 1.0) > EPS_MASS:
        raise ConfigError(f"Initial density must have unit mass, got {total:.9f}")
    n_steps = int(round(horizon / dt))
    wanted = snapshot_steps(n_steps, dt, snapshot_times, snapshot_stride)

    cache = OperatorCache(grid, s, dt)
    state = Fp1dState(p=values, grid=grid, dt=dt)
    snapshots = [state.density]
    logger.info("Solving FP: %d steps, n_v=%d, dt=%g", n_steps, grid.n_v, dt)
    for _ in tqdm(range(n_steps), desc="fp1d", disable=not progress):
        state = fp_step(state, s, dt, cache.at(state.t))
        if state.step in wanted:
            snapshots.append(state.density)
    return FpSolution(snapshots=snapshots, rates=state.r_history, final=state)


@dataclass
class StationaryFp:
    p: Density1D
    rate: float
    steps: int


def stationary_fp(s: Stimulus, grid: PotentialGrid, dt: float = 1e-3, tol: float = STATIONARY_TOLERANCE,
                  check_every: int = 100, max_steps: int = 500_000, p0=None) -> StationaryFp:
    """Long-time integration to the fixed point of the stepping map.

    Stops once ||p(t + check_every*dt) - p(t)||_1 < tol.
    """
    if not s.is_constant:
        raise ConfigError("stationary_fp needs a constant stimulus")
    if p0 is None:
        values = gaussian_cells(grid.centers, grid.v_r, 0.2)
    else:
        values, grid = _as_values(p0, grid)
    op = PotentialOperator(grid, s.sigma, s.mu0, dt)
    state = Fp1dState(p=values, grid=grid, dt=dt)
    previous = state.p
    while state.step < max_steps:
        for _ in range(check_every):
            state = fp_step(state, s, dt, op)
        change = np.abs(state.p - previous).sum() * grid.dv
        if change < tol:
            logger.info("Stationary FP reached after %d steps (change %.2e), r=%.6g",
                        state.step, change, state.rates[-1])
            return StationaryFp(p=state.density, rate=state.rates[-1], steps=state.step)
        previous = state.p
    raise ConvergenceError(f"Stationary FP did not converge within {max_steps} steps")
