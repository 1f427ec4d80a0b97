"""First-passage-time problem of the LIF neuron.

phi(a, v) evolves under the absorbing Fokker-Planck operator from a delta at v_r,
without reinjection. The threshold flux is the interspike-interval density, the
remaining mass is the survivor function, and their ratio is the hazard that turns the
escape-rate model into an equivalent description of the same neuron.

The age axis uses the same exact-shift convention as the joint solver: slice k is the
density k steps after the reset, and ISI[k] * dt is the mass absorbed during step k.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from tqdm import tqdm

from as1d import HazardTable
from core_types import (
    AGE_TRUNCATION,
    EPS_MASS,
    EPS_P,
    AgeGrid,
    PotentialGrid,
    Stimulus,
    evaluate_stimulus,
)
from errors import AgeTruncationError, ConfigError, NumericalError
from fp1d import OperatorCache, PotentialOperator, reset_profile

logger = logging.getLogger(__name__)

HAZARD_FORMS = ("log", "ratio")
ISI_START_CELLS = 2


@dataclass
class FptSolution:
    """ISI density, survivor and hazard over age (autonomous) or time x age."""

    grid: PotentialGrid
    age_grid: AgeGrid
    isi: np.ndarray
    isi_raw: np.ndarray
    survivor: np.ndarray
    hazard: HazardTable
    phi: np.ndarray | None = None
    times: np.ndarray | None = None
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def ages(self) -> np.ndarray:
        return self.age_grid.ages

    @property
    def mean_isi(self) -> float:
        isi = self.isi_raw if self.isi_raw.ndim == 1 else self.isi_raw[0]
        return float((self.ages * isi).sum() * self.age_grid.da)


def floor_to_reliable(hazard: np.ndarray, survivor: np.ndarray, eps: float) -> np.ndarray:
    """Replace hazards where P < eps by the value at the last reliable age."""
    reliable = survivor >= eps
    index = np.where(reliable, np.arange(survivor.shape[-1]), 0)
    last = np.maximum.accumulate(index, axis=-1)
    return np.take_along_axis(hazard, last, axis=-1)


def hazard_from_survival(survivor: np.ndarray, isi: np.ndarray, dt: float, form: str = "log",
                         previous: np.ndarray | None = None, eps: float = EPS_P) -> np.ndarray:
    """Hazard S = ISI / P.

    form="ratio" returns the literal quotient. form="log" returns
    -ln(P(a) / P(a - da)) / dt, the hazard whose exponential decay over one step removes
    exactly the mass the density model absorbs; it tends to ISI/P as dt -> 0.
    `previous` is the survivor one step earlier (defaults to the same row, for
    autonomous problems).
    """
    if form not in HAZARD_FORMS:
        raise ConfigError(f"Unknown hazard form '{form}', expected one of {HAZARD_FORMS}")
    survivor = np.asarray(survivor, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if form == "ratio":
            hazard = isi / survivor
        else:
            before = survivor if previous is None else np.asarray(previous, dtype=float)
            hazard = np.zeros_like(survivor)
            hazard[..., 1:] = -np.log(survivor[..., 1:] / before[..., :-1]) / dt
    hazard = np.where(np.isfinite(hazard), hazard, 0.0)
    hazard = floor_to_reliable(hazard, survivor, eps)
    hazard = np.where(isi > 0, hazard, 0.0)
    return np.maximum(hazard, 0.0)


def smooth_isi_start(isi_raw: np.ndarray, start_cells: int = ISI_START_CELLS) -> np.ndarray:
    """The first cells after a delta are grid-polluted; ramp them linearly from zero."""
    isi = np.array(isi_raw, dtype=float)
    if start_cells > 0 and isi.shape[-1] > start_cells:
        ramp = np.arange(start_cells) / start_cells
        isi[..., :start_cells] = isi[..., start_cells, None] * ramp
    return isi


def _check_accounting(survivor: np.ndarray, isi_raw: np.ndarray, dt: float) -> None:
    if survivor[..., -1].max() > AGE_TRUNCATION:
        raise AgeTruncationError(
            f"Survivor {survivor[..., -1].max():.3g} at a_max; the age domain is too short")
    if survivor.ndim == 1:
        deficit = np.abs(survivor + np.cumsum(isi_raw) * dt - 1.0).max()
    else:
        # along characteristics: what leaves P between (t, a) and (t + dt, a + dt) fired
        head = np.abs(survivor[:, 0] - 1.0).max()
        deficit = max(head, np.abs(survivor[:-1, :-1] - survivor[1:, 1:] - isi_raw[1:, 1:] * dt).max())
    if deficit > EPS_MASS:
        raise NumericalError(f"Survived plus fired mass misses 1 by {deficit:.3g}; refine the grid")


def solve_fpt_autonomous(mu: float, sigma: float, grid: PotentialGrid, age_grid: AgeGrid,
                         hazard_form: str = "log", isi_start_cells: int = ISI_START_CELLS) -> FptSolution:
    """First passage from v_r at constant mu; one absorbing step per age cell."""
    dt = age_grid.da
    op = PotentialOperator(grid, sigma, mu, dt)
    phi = np.empty((age_grid.n_a, grid.n_v))
    phi[0] = reset_profile(grid)
    for k in range(1, age_grid.n_a):
        phi[k] = op.solve(phi[k - 1])
    survivor = phi.sum(axis=1) * grid.dv
    isi_raw = op.threshold_flux(phi)
    isi_raw[0] = 0.0
    _check_accounting(survivor, isi_raw, dt)

    isi = smooth_isi_start(isi_raw, isi_start_cells)
    hazard = hazard_from_survival(survivor, isi if hazard_form == "ratio" else isi_raw, dt, hazard_form)
    logger.info("FPT (mu=%g, sigma=%g): mean ISI %.6g", mu, sigma, float((age_grid.ages * isi_raw).sum() * dt))
    return FptSolution(grid=grid, age_grid=age_grid, isi=isi, isi_raw=isi_raw, survivor=survivor,
                       hazard=HazardTable(hazard, age_grid), phi=phi)


def solve_fpt_nonautonomous(s: Stimulus, grid: PotentialGrid, age_grid: AgeGrid, horizon: float,
                            hazard_form: str = "log", snapshot_steps=(), isi_start_cells: int = ISI_START_CELLS,
                            progress: bool = False) -> FptSolution:
    """phi(t, a, v) with a fresh delta at v_r entering age 0 every step.

    The initial slices are the autonomous solution for mu(0). Only the current slice set
    and the requested snapshot steps are kept.
    """
    dt = age_grid.da
    n_steps = int(round(horizon / dt))
    auto = solve_fpt_autonomous(evaluate_stimulus(s, 0.0), s.sigma, grid, age_grid,
                                hazard_form=hazard_form, isi_start_cells=isi_start_cells)
    phi = auto.phi.copy()
    wanted = set(snapshot_steps)
    snapshots = {0: phi.copy()} if 0 in wanted else {}
    survivor = np.empty((n_steps + 1, age_grid.n_a))
    isi_raw = np.empty_like(survivor)
    survivor[0] = auto.survivor
    isi_raw[0] = auto.isi_raw
    profile = reset_profile(grid)
    cache = OperatorCache(grid, s, dt)

    logger.info("Solving non-autonomous FPT: %d steps, %d x %d cells", n_steps, age_grid.n_a, grid.n_v)
    for n in tqdm(range(n_steps), desc="fpt", disable=not progress):
        op = cache.at(n * dt)
        phi[1:] = op.solve(phi[:-1].T).T
        phi[0] = profile
        survivor[n + 1] = phi.sum(axis=1) * grid.dv
        isi_raw[n + 1] = op.threshold_flux(phi)
        isi_raw[n + 1, 0] = 0.0
        if n + 1 in wanted:
            snapshots[n + 1] = phi.copy()

    _check_accounting(survivor, isi_raw, dt)
    isi = smooth_isi_start(isi_raw, isi_start_cells)
    if hazard_form == "ratio":
        hazard = hazard_from_survival(survivor[1:], isi[1:], dt, "ratio")
    else:
        hazard = hazard_from_survival(survivor[1:], isi_raw[1:], dt, "log", previous=survivor[:-1])
    return FptSolution(grid=grid, age_grid=age_grid, isi=isi, isi_raw=isi_raw, survivor=survivor,
                       hazard=HazardTable(hazard, age_grid, t0=0.0, dt=dt),
                       times=np.arange(n_steps + 1) * dt, snapshots=snapshots)


def isi_on_bins(solution: FptSolution, edges: np.ndarray) -> np.ndarray:
    """ISI density averaged over histogram bins, for comparison with Monte Carlo ISIs."""
    edges = np.asarray(edges, dtype=float)
    isi = solution.isi if solution.isi.ndim == 1 else solution.isi[0]
    weights, _ = np.histogram(solution.ages, bins=edges, weights=isi * solution.age_grid.da)
    return weights / np.diff(edges)
