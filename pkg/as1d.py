"""Age-structured (escape-rate) population solver.

    dn/dt + dn/da + S(t, a) n = 0,    n(t, 0) = r(t) = int S n da

With da == dt the transport along da/dt = 1 is an exact one-cell shift, and the loss
term is integrated exactly along each characteristic as n * exp(-S dt). The fired
mass re-enters the a = 0 cell in the same step, so mass is conserved exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from tqdm import tqdm

from core_types import (
    AGE_TRUNCATION,
    EPS_MASS,
    AgeDensity,
    AgeGrid,
    FiringRateSeries,
    mass,
    snapshot_steps,
)
from errors import AgeTruncationError, ConfigError, HazardRangeError

logger = logging.getLogger(__name__)

S_MAX = 1e6


@dataclass(frozen=True)
class HazardTable:
    """S(t, a) on the age cells of `age_grid`.

    `values` has shape (n_a,) for an autonomous hazard, or (n_t, n_a) with row i holding
    the hazard in force during the step starting at t0 + i*dt. Time lookups clamp to the
    first/last row; age lookups outside the grid raise.
    """

    values: np.ndarray
    age_grid: AgeGrid
    t0: float = 0.0
    dt: float | None = None
    s_max: float = S_MAX

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim not in (1, 2) or values.shape[-1] != self.age_grid.n_a:
            raise ConfigError(f"Hazard shape {values.shape} does not match n_a={self.age_grid.n_a}")
        if not np.all(np.isfinite(values)):
            raise ConfigError("Hazard table contains non-finite values")
        if np.any(values < 0):
            raise ConfigError(f"Hazard must be >= 0, got {values.min():.3g}")
        if values.ndim == 2 and not (self.dt and self.dt > 0):
            raise ConfigError("A time-dependent hazard needs a positive row spacing dt")
        values = np.minimum(values, self.s_max)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, fn: Callable, age_grid: AgeGrid, times=None, **kwargs) -> HazardTable:
        """Tabulate fn(ages) or, when `times` is given, fn(t, ages) row by row."""
        ages = age_grid.ages
        if times is None:
            return cls(np.asarray(fn(ages), dtype=float), age_grid, **kwargs)
        times = np.asarray(times, dtype=float)
        rows = np.stack([np.asarray(fn(t, ages), dtype=float) for t in times])
        step = times[1] - times[0] if times.size > 1 else age_grid.da
        return cls(rows, age_grid, t0=float(times[0]), dt=float(step), **kwargs)

    @property
    def is_autonomous(self) -> bool:
        return self.values.ndim == 1

    @property
    def times(self) -> np.ndarray | None:
        if self.is_autonomous:
            return None
        return self.t0 + np.arange(self.values.shape[0]) * self.dt

    def row(self, t: float) -> np.ndarray:
        if self.is_autonomous:
            return self.values
        i = int(np.floor((t - self.t0) / self.dt + 1e-6))
        return self.values[min(max(i, 0), self.values.shape[0] - 1)]

    def lookup(self, t: float, age_index: np.ndarray) -> np.ndarray:
        if np.any(age_index >= self.age_grid.n_a) or np.any(age_index < 0):
            raise HazardRangeError(f"Age beyond the hazard table (a_max={self.age_grid.a_max})")
        return self.row(t)[age_index]


# ---------------------------------------------------------------------------
# Exponential-escape hazard
# ---------------------------------------------------------------------------


def escape_hazard(ages, h, tau: float):
    """S(a) = exp(h - V(a)) with V(a) = -log(1 - exp(-a/tau))."""
    return np.exp(h) * -np.expm1(-np.asarray(ages, dtype=float) / tau)


def escape_survivor(ages, h: float, tau: float):
    """Closed-form survivor exp(-e^h (a - tau (1 - e^(-a/tau)))) of `escape_hazard`."""
    ages = np.asarray(ages, dtype=float)
    return np.exp(-np.exp(h) * (ages + tau * np.expm1(-ages / tau)))


def escape_hazard_table(age_grid: AgeGrid, h, tau: float, times=None) -> HazardTable:
    """`h` is a number, or a callable h(t) when `times` is given."""
    if times is None:
        return HazardTable.from_function(lambda a: escape_hazard(a, h, tau), age_grid)
    return HazardTable.from_function(lambda t, a: escape_hazard(a, h(t), tau), age_grid, times=times)


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------


def shift_ages(values: np.ndarray) -> np.ndarray:
    """Move every cohort one age cell up; the last cell keeps what reaches it."""
    shifted = np.empty_like(values)
    shifted[0] = 0.0
    shifted[1:] = values[:-1]
    shifted[-1] += values[-1]
    return shifted


def check_age_truncation(last_cell_mass: float) -> None:
    if last_cell_mass > AGE_TRUNCATION:
        raise AgeTruncationError(
            f"Mass {last_cell_mass:.3g} reached the last age cell; increase a_max")


def as_step(n: np.ndarray, S: HazardTable, t: float, dt: float) -> tuple[np.ndarray, float]:
    """One step: shift, exact exponential decay, fired mass reinjected at a = 0."""
    grid = S.age_grid
    grid.check_step(dt)
    shifted = shift_ages(np.asarray(n, dtype=float))
    kept = shifted * np.exp(-S.row(t) * dt)
    fired = (shifted - kept).sum() * grid.da
    r = fired / dt
    kept[0] = fired / grid.da
    check_age_truncation(kept[-1] * grid.da)
    return kept, r


@dataclass
class AsSolution:
    snapshots: list[AgeDensity]
    rates: FiringRateSeries
    final: np.ndarray
    snapshot_steps: list[int] = field(default_factory=list)


def solve_as(n0, S: HazardTable, horizon: float, dt: float, snapshot_times=None,
             snapshot_stride: int | None = None, progress: bool = False) -> AsSolution:
    grid = S.age_grid
    grid.check_step(dt)
    values = np.array(n0.values if isinstance(n0, AgeDensity) else n0, dtype=float)
    total = mass(values, grid)
    if abs(total - 1.0) > EPS_MASS:
        raise ConfigError(f"Initial age density must have unit mass, got {total:.9f}")
    n_steps = int(round(horizon / dt))
    wanted = snapshot_steps(n_steps, dt, snapshot_times, snapshot_stride)

    snapshots = [AgeDensity(values, grid, 0.0)]
    taken = [0]
    rates = np.empty(n_steps)
    logger.info("Solving AS: %d steps, n_a=%d, dt=%g", n_steps, grid.n_a, dt)
    for i in tqdm(range(n_steps), desc="as1d", disable=not progress):
        values, rates[i] = as_step(values, S, i * dt, dt)
        if i + 1 in wanted:
            snapshots.append(AgeDensity(values, grid, (i + 1) * dt))
            taken.append(i + 1)
    times = (np.arange(n_steps) + 1) * dt
    return AsSolution(snapshots, FiringRateSeries(times, rates), values, taken)


def survivor_from_hazard(S: HazardTable) -> np.ndarray:
    """P(a) = exp(-int_0^a S) by cumulative trapezoid; P(0) = 1."""
    if not S.is_autonomous:
        raise ConfigError("survivor_from_hazard needs an age-only hazard")
    return np.exp(-cumulative_trapezoid(S.values, S.age_grid.ages, initial=0.0))


def step_survivor(S: HazardTable) -> np.ndarray:
    """Survivor implied by the stepping rule: P_k = exp(-dt * sum_{j=1..k} S_j)."""
    cum = np.concatenate([[0.0], np.cumsum(S.values[1:])]) * S.age_grid.da
    return np.exp(-cum)


def stationary_as(S: HazardTable) -> tuple[AgeDensity, float]:
    """Stationary renewal profile n(a) = r P(a) with r = 1 / int P, the fixed point of as_step."""
    if not S.is_autonomous:
        raise ConfigError("stationary_as needs an age-only hazard")
    survivor = step_survivor(S)
    check_age_truncation(survivor[-1] / survivor.sum())
    rate = 1.0 / (survivor.sum() * S.age_grid.da)
    return AgeDensity(rate * survivor, S.age_grid), rate
