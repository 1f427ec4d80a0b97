"""Shared domain types, grids, quadrature and comparison metrics.

Densities are stored as cell averages on uniform grids (finite-volume convention) and
integrated with the midpoint rule, so conservation statements hold exactly at the
discrete level.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from errors import ConfigError, GridError, NumericalError

logger = logging.getLogger(__name__)

# Tolerances shared by every solver
EPS_MASS = 1e-6
EPS_P = 1e-10
AGE_TRUNCATION = 1e-8

DEFAULT_V_MIN = -4.0
V_THRESHOLD = 1.0

STIMULUS_KINDS = ("constant", "sampled")


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Stimulus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Stimulus:
    """Mean input mu(t) and noise intensity sigma."""

    kind: str
    sigma: float
    mu0: float = 0.0
    samples: tuple[tuple[float, float], ...] = ()
    _times: np.ndarray = field(init=False, repr=False, compare=False)
    _values: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in STIMULUS_KINDS:
            raise ConfigError(f"Unknown stimulus kind '{self.kind}', expected one of {STIMULUS_KINDS}")
        if not (self.sigma > 0):
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        times = np.array([s[0] for s in self.samples], dtype=float)
        values = np.array([s[1] for s in self.samples], dtype=float)
        if self.kind == "sampled":
            if times.size == 0:
                raise ConfigError("Sampled stimulus needs at least one (t, mu) pair")
            if np.any(np.diff(times) <= 0):
                raise ConfigError("Sampled stimulus times must be strictly increasing")
        object.__setattr__(self, "_times", _frozen_array(times))
        object.__setattr__(self, "_values", _frozen_array(values))

    @classmethod
    def constant(cls, mu0: float, sigma: float) -> Stimulus:
        return cls(kind="constant", sigma=sigma, mu0=mu0)

    @classmethod
    def sampled(cls, times: Sequence[float], values: Sequence[float], sigma: float) -> Stimulus:
        return cls(kind="sampled", sigma=sigma,
                   samples=tuple((float(t), float(v)) for t, v in zip(times, values)))

    @classmethod
    def sinusoid(cls, mu0: float, amplitude: float, period: float, sigma: float,
                 horizon: float, resolution: float = 0.01) -> Stimulus:
        """Synthetic waveform mu0 + A*sin(2*pi*t/T), sampled on [0, horizon]."""
        if period <= 0 or resolution <= 0:
            raise ConfigError("period and resolution must be > 0")
        n = max(int(math.ceil(horizon / resolution)), 1)
        times = np.arange(n + 1) * resolution
        return cls.sampled(times, mu0 + amplitude * np.sin(2.0 * np.pi * times / period), sigma)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def __call__(self, t):
        return evaluate_stimulus(self, t)


def evaluate_stimulus(s: Stimulus, t):
    """mu(t); sampled waveforms interpolate linearly and clamp outside their range."""
    if np.any(np.asarray(t) < 0):
        raise ConfigError(f"Stimulus evaluated at negative time {t}")
    if s.kind == "constant":
        if np.ndim(t) == 0:
            return float(s.mu0)
        return np.full(np.shape(t), float(s.mu0))
    value = np.interp(t, s._times, s._values)
    return float(value) if np.ndim(t) == 0 else value


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialGrid:
    """Uniform cells on [v_min, v_th]; v_th is the upper face of the last cell."""

    v_r: float
    v_min: float = DEFAULT_V_MIN
    v_th: float = V_THRESHOLD
    n_v: int = 400

    def __post_init__(self):
        if self.n_v < 2:
            raise GridError(f"n_v must be >= 2, got {self.n_v}")
        if not (self.v_min < self.v_r < self.v_th):
            raise GridError(f"Need v_min < v_r < v_th, got {self.v_min}, {self.v_r}, {self.v_th}")

    @property
    def dv(self) -> float:
        return (self.v_th - self.v_min) / self.n_v

    @property
    def centers(self) -> np.ndarray:
        return self.v_min + (np.arange(self.n_v) + 0.5) * self.dv

    @property
    def faces(self) -> np.ndarray:
        return self.v_min + np.arange(self.n_v + 1) * self.dv


@dataclass(frozen=True)
class AgeGrid:
    """Age cells of width da on [0, a_max].

    With da equal to the time step every cohort moves exactly one cell per step, so a
    reinjected cohort sitting in cell k has age k*da; `ages` returns those labels.
    """

    a_max: float
    n_a: int

    def __post_init__(self):
        if not (self.a_max > 0) or self.n_a < 2:
            raise GridError(f"Need a_max > 0 and n_a >= 2, got {self.a_max}, {self.n_a}")

    @classmethod
    def from_step(cls, dt: float, a_max: float) -> AgeGrid:
        n_a = int(round(a_max / dt))
        return cls(a_max=n_a * dt, n_a=n_a)

    @property
    def da(self) -> float:
        return self.a_max / self.n_a

    @property
    def ages(self) -> np.ndarray:
        return np.arange(self.n_a) * self.da

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.n_a) + 0.5) * self.da

    def check_step(self, dt: float) -> None:
        """Age transport is an exact one-cell shift, which needs da == dt."""
        if not math.isclose(self.da, dt, rel_tol=1e-9):
            raise GridError(f"Age cell width {self.da} must equal the time step {dt}")


# ---------------------------------------------------------------------------
# Densities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Density1D:
    """p(t, v) as cell averages on a PotentialGrid."""

    values: np.ndarray
    grid: PotentialGrid
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))
        if self.values.shape != (self.grid.n_v,):
            raise ConfigError(f"Density shape {self.values.shape} does not match n_v={self.grid.n_v}")

    def mass(self) -> float:
        return mass(self.values, self.grid)


@dataclass(frozen=True)
class AgeDensity:
    """n(t, a) as cell averages on an AgeGrid."""

    values: np.ndarray
    grid: AgeGrid
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))
        if self.values.shape != (self.grid.n_a,):
            raise ConfigError(f"Density shape {self.values.shape} does not match n_a={self.grid.n_a}")

    def mass(self) -> float:
        return mass(self.values, self.grid)


@dataclass(frozen=True)
class JointDensity:
    """pi(t, a, v) with axis 0 = age, axis 1 = potential."""

    values: np.ndarray
    age_grid: AgeGrid
    grid: PotentialGrid
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))
        expected = (self.age_grid.n_a, self.grid.n_v)
        if self.values.shape != expected:
            raise ConfigError(f"Density shape {self.values.shape} does not match {expected}")

    def mass(self) -> float:
        return mass(self.values, self.age_grid, self.grid)


def _cell_width(grid) -> float:
    if isinstance(grid, PotentialGrid):
        return grid.dv
    if isinstance(grid, AgeGrid):
        return grid.da
    raise ConfigError(f"Not a grid: {grid!r}")


def _cell_count(grid) -> int:
    return grid.n_v if isinstance(grid, PotentialGrid) else grid.n_a


def mass(d, *grids) -> float:
    """Midpoint-rule integral of a density over its whole domain.

    `d` is either a density object (its own grids are used) or an array accompanied by one
    grid per axis.
    """
    if isinstance(d, Density1D) or isinstance(d, AgeDensity):
        return mass(d.values, d.grid)
    if isinstance(d, JointDensity):
        return mass(d.values, d.age_grid, d.grid)
    values = np.asarray(d, dtype=float)
    if values.ndim != len(grids):
        raise ConfigError(f"Field has {values.ndim} axes but {len(grids)} grids were given")
    for axis, grid in enumerate(grids):
        if values.shape[axis] != _cell_count(grid):
            raise ConfigError(f"Axis {axis} has {values.shape[axis]} cells, grid has {_cell_count(grid)}")
    volume = 1.0
    for grid in grids:
        volume *= _cell_width(grid)
    return float(values.sum() * volume)


def deposit_delta(grid: PotentialGrid, location: float, weight: float = 1.0) -> np.ndarray:
    """Density increment carrying `weight` at `location`.

    The weight is split between the two cells whose centers bracket the location so that
    both the deposited mass and its first moment are exact. In the half cell next to
    either boundary no bracketing pair exists; the whole weight goes to the boundary
    cell, which keeps the mass exact but moves the first moment by up to dv/2.
    """
    if not (grid.v_min < location < grid.v_th):
        raise ConfigError(f"Delta location {location} outside ({grid.v_min}, {grid.v_th})")
    out = np.zeros(grid.n_v)
    x = (location - grid.v_min) / grid.dv - 0.5
    i = int(math.floor(x))
    theta = x - i
    if theta < 1e-12:
        theta = 0.0
    elif theta > 1.0 - 1e-12:
        i, theta = i + 1, 0.0
    if i < 0 or i > grid.n_v - 1 or (i == grid.n_v - 1 and theta > 0):
        # half cell next to a boundary: no bracketing pair of centers
        j = min(max(int(round(x)), 0), grid.n_v - 1)
        logger.warning("Delta at %.6g lies in a boundary half-cell; depositing in a single cell", location)
        out[j] = weight / grid.dv
        return out
    out[i] = (1.0 - theta) * weight / grid.dv
    if theta > 0:
        out[i + 1] = theta * weight / grid.dv
    return out


def snapshot_steps(n_steps: int, dt: float, times=None, stride: int | None = None) -> set[int]:
    """Step indices at which snapshots are taken (0 and the last step always included)."""
    steps = {0, n_steps}
    if stride:
        steps.update(range(0, n_steps + 1, stride))
    for t in times or ():
        steps.add(min(max(int(round(t / dt)), 0), n_steps))
    return steps


def gaussian_cells(centers: np.ndarray, mean: float, std: float) -> np.ndarray:
    """Gaussian profile on uniform cells, normalized to unit midpoint mass."""
    if not (std > 0):
        raise ConfigError(f"Gaussian std must be > 0, got {std}")
    centers = np.asarray(centers, dtype=float)
    width = centers[1] - centers[0]
    g = np.exp(-0.5 * ((centers - mean) / std) ** 2)
    total = g.sum() * width
    if total <= 0:
        raise ConfigError(f"Gaussian N({mean}, {std}^2) has no mass on the grid")
    return g / total


# ---------------------------------------------------------------------------
# Firing rates and spikes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiringRateSeries:
    times: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", _frozen_array(self.times))
        object.__setattr__(self, "rates", _frozen_array(self.rates))
        if self.times.shape != self.rates.shape or self.times.ndim != 1:
            raise ConfigError("times and rates must be 1D arrays of equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("Firing-rate times must be strictly increasing")
        if np.any(self.rates < 0):
            raise NumericalError(f"Negative firing rate {self.rates.min():.3g}")

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class SpikeRecord:
    trial_id: int
    spike_times: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "spike_times", _frozen_array(self.spike_times))
        if np.any(np.diff(self.spike_times) <= 0):
            raise ConfigError(f"Spike times of trial {self.trial_id} are not strictly increasing")


class SeriesDiscrepancy(NamedTuple):
    l1_rel: float
    linf_rel: float


def compare_series(x: FiringRateSeries, y: FiringRateSeries) -> SeriesDiscrepancy:
    """Relative L1 and Linf distance of y from x, normalized by the norms of x."""
    if len(x) == 0 or len(y) == 0:
        raise ConfigError("Cannot compare an empty firing-rate series")
    if x.times.shape == y.times.shape and np.allclose(x.times, y.times, rtol=0, atol=1e-12):
        other = y.rates
    else:
        other = np.interp(x.times, y.times, y.rates)
    diff = np.abs(x.rates - other)
    l1_norm = np.abs(x.rates).sum()
    linf_norm = np.abs(x.rates).max()
    if l1_norm == 0:
        if diff.max() == 0:
            return SeriesDiscrepancy(0.0, 0.0)
        return SeriesDiscrepancy(math.inf, math.inf)
    return SeriesDiscrepancy(float(diff.sum() / l1_norm), float(diff.max() / linf_norm))


def bin_average(series: FiringRateSeries, edges: np.ndarray) -> FiringRateSeries:
    """Average a rate series over bins, for comparison with a PSTH on the same edges."""
    edges = np.asarray(edges, dtype=float)
    sums, _ = np.histogram(series.times, bins=edges, weights=series.rates)
    counts, _ = np.histogram(series.times, bins=edges)
    rates = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    return FiringRateSeries(0.5 * (edges[1:] + edges[:-1]), rates)


def rel_l1(a, b) -> float:
    """sum|a - b| / sum|b|."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    norm = np.abs(b).sum()
    if norm == 0:
        return 0.0 if np.abs(a).sum() == 0 else math.inf
    return float(np.abs(a - b).sum() / norm)
