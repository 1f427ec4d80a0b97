"""Monte Carlo engines for the three stochastic neuron descriptions.

- NLIF: Euler-Maruyama for dv = (mu(t) - v) dt + sigma dW with reset v -> v_r at v >= 1.
- Escape: age grows at unit speed, firing with probability 1 - exp(-S dt) per step.
- Joint: the NLIF process decorated with its age a, reset to 0 with v.

Every trial owns a generator derived from (seed, stream tag, trial id), so a trial's
initial sample and increments do not depend on how many trials run, how they are
grouped into blocks or how many threads execute the blocks.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from tqdm import tqdm

from as1d import HazardTable
from core_types import V_THRESHOLD, FiringRateSeries, SpikeRecord, Stimulus, evaluate_stimulus
from errors import ConfigError, NumericalError

logger = logging.getLogger(__name__)

BLOCK_SIZE = 4096
# steps of variates drawn per trial at a time
DRAW_CHUNK = 256

# stream tags
STREAM_POTENTIAL = 0
STREAM_AGE = 1
STREAM_ESCAPE = 2

INITIAL_KINDS = ("point", "gaussian", "cells")


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo run settings.

    With `record_trajectories` the paths of the first `path_limit` trials are kept (all
    trials when no limit is given).
    """

    dt: float
    horizon: float
    n_trials: int
    seed: int = 0
    record_trajectories: bool = False
    path_limit: int | None = None
    block_size: int = BLOCK_SIZE
    threads: int = 1
    progress: bool = False

    def __post_init__(self):
        if not (self.dt > 0):
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if self.horizon < self.dt:
            raise ConfigError(f"horizon {self.horizon} is shorter than dt {self.dt}")
        if self.n_trials < 1:
            raise ConfigError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.block_size < 1 or self.threads < 1:
            raise ConfigError("block_size and threads must be >= 1")
        if self.path_limit is not None and self.path_limit < 1:
            raise ConfigError(f"path_limit must be >= 1, got {self.path_limit}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def n_paths(self) -> int:
        if not self.record_trajectories:
            return 0
        return min(self.path_limit or self.n_trials, self.n_trials)


@dataclass(frozen=True)
class InitialCondition:
    """Point value, Gaussian(mean, std) or a tabulated cell density, sampled once per trial."""

    kind: str = "point"
    value: float = 0.0
    mean: float = 0.0
    std: float = 0.0
    centers: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if self.kind not in INITIAL_KINDS:
            raise ConfigError(f"Unknown initial condition '{self.kind}', expected one of {INITIAL_KINDS}")
        if self.kind == "gaussian" and not (self.std > 0):
            raise ConfigError("A Gaussian initial condition needs std > 0")
        if self.kind == "cells" and (len(self.centers) < 2 or len(self.centers) != len(self.weights)):
            raise ConfigError("A cell-table initial condition needs matching centers and weights")

    @classmethod
    def point(cls, value: float) -> InitialCondition:
        return cls(kind="point", value=value)

    @classmethod
    def gaussian(cls, mean: float, std: float) -> InitialCondition:
        return cls(kind="gaussian", mean=mean, std=std)

    @classmethod
    def cells(cls, centers, density) -> InitialCondition:
        density = np.asarray(density, dtype=float)
        if density.sum() <= 0:
            raise ConfigError("Cell-table initial condition has no mass")
        return cls(kind="cells", centers=tuple(float(c) for c in centers),
                   weights=tuple(float(w) for w in density / density.sum()))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "point":
            return np.full(size, float(self.value))
        if self.kind == "gaussian":
            return self.mean + self.std * rng.standard_normal(size)
        centers = np.asarray(self.centers)
        weights = np.asarray(self.weights)
        index = rng.choice(centers.size, size=size, p=weights / weights.sum())
        return centers[index] + (rng.random(size) - 0.5) * (centers[1] - centers[0])

    def sample_each(self, generators: Sequence[np.random.Generator]) -> np.ndarray:
        """One value per trial, each from that trial's own generator."""
        return np.array([self.sample(g, 1)[0] for g in generators])


class NoiseIncrementStream:
    """Per-trial generators keyed by (seed, stream tag, trial id), served in trial blocks."""

    def __init__(self, seed: int, tag: int, block_size: int = BLOCK_SIZE):
        self.seed = seed
        self.tag = tag
        self.block_size = block_size

    def generator(self, trial: int) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.tag, trial))
        return np.random.Generator(np.random.PCG64(sequence))

    def generators(self, start: int, stop: int) -> list[np.random.Generator]:
        return [self.generator(trial) for trial in range(start, stop)]

    def blocks(self, n_trials: int) -> list[tuple[int, int, int]]:
        """(block index, first trial, end trial) covering all trials."""
        n_blocks = math.ceil(n_trials / self.block_size)
        return [(b, b * self.block_size, min((b + 1) * self.block_size, n_trials)) for b in range(n_blocks)]


class StepDraws:
    """Variates for a block of trials, handed out one step at a time.

    Each trial's generator is advanced DRAW_CHUNK steps at a time, so the value a trial
    sees at step n is the n-th draw of its own stream.
    """

    def __init__(self, generators: Sequence[np.random.Generator], n_steps: int,
                 draw: Callable[[np.random.Generator, int], np.ndarray]):
        self.generators = generators
        self.n_steps = n_steps
        self.draw = draw
        self.buffer = None

    def __call__(self, n: int) -> np.ndarray:
        k = n % DRAW_CHUNK
        if k == 0:
            width = min(DRAW_CHUNK, self.n_steps - n)
            self.buffer = np.stack([self.draw(g, width) for g in self.generators], axis=1)
        return self.buffer[k]


def _normals(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.standard_normal(size)


def _uniforms(rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.random(size)


class _Block(NamedTuple):
    start: int
    trials: np.ndarray
    steps: np.ndarray
    trajectory: np.ndarray | None
    age_trajectory: np.ndarray | None
    final_potential: np.ndarray | None
    final_age: np.ndarray | None


@dataclass
class McResult:
    records: list[SpikeRecord]
    n_trials: int
    dt: float
    horizon: float
    trajectories: np.ndarray | None = None
    age_trajectories: np.ndarray | None = None
    final_potential: np.ndarray | None = None
    final_age: np.ndarray | None = None


def _run_blocks(worker, blocks, mc: McConfig, desc: str) -> list[_Block]:
    with ThreadPoolExecutor(max_workers=mc.threads) as pool:
        results = list(tqdm(pool.map(worker, blocks), total=len(blocks), desc=desc, disable=not mc.progress))
    return results


def _merge(blocks: list[_Block], mc: McConfig) -> McResult:
    """Assemble per-trial spike records ordered by trial id."""
    records = []
    for block in blocks:
        size = (block.final_potential if block.final_potential is not None else block.final_age).size
        order = np.lexsort((block.steps, block.trials))
        trials = block.trials[order]
        times = block.steps[order] * mc.dt
        bounds = np.searchsorted(trials, np.arange(size + 1))
        for j in range(size):
            records.append(SpikeRecord(block.start + j, times[bounds[j]:bounds[j + 1]]))

    def stack(name):
        parts = [part for part in (getattr(b, name) for b in blocks) if part is not None]
        return np.concatenate(parts) if parts else None

    return McResult(records=records, n_trials=mc.n_trials, dt=mc.dt, horizon=mc.n_steps * mc.dt,
                    trajectories=stack("trajectory"), age_trajectories=stack("age_trajectory"),
                    final_potential=stack("final_potential"), final_age=stack("final_age"))


def _collect(trials: list, steps: list) -> tuple[np.ndarray, np.ndarray]:
    if not trials:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(trials), np.concatenate(steps)


def _paths(mc: McConfig, start: int, stop: int, first: np.ndarray | None) -> np.ndarray | None:
    """Trajectory buffer for the recorded trials of a block, initial column filled."""
    kept = max(0, min(stop, mc.n_paths) - start)
    if kept == 0 or first is None:
        return None
    out = np.empty((kept, mc.n_steps + 1))
    out[:, 0] = first[:kept]
    return out


def _langevin(s: Stimulus, v_r: float, mc: McConfig, initial: InitialCondition,
              age_initial: InitialCondition | None) -> McResult:
    if not (v_r < V_THRESHOLD):
        raise ConfigError(f"Reset potential must be below threshold, got {v_r}")
    n_steps = mc.n_steps
    mu = evaluate_stimulus(s, np.arange(n_steps) * mc.dt)
    noise_scale = s.sigma * math.sqrt(mc.dt)
    potential_stream = NoiseIncrementStream(mc.seed, STREAM_POTENTIAL, mc.block_size)
    age_stream = NoiseIncrementStream(mc.seed, STREAM_AGE, mc.block_size)
    track_age = age_initial is not None

    def worker(block):
        index, start, stop = block
        generators = potential_stream.generators(start, stop)
        v = initial.sample_each(generators)
        a = np.maximum(age_initial.sample_each(age_stream.generators(start, stop)), 0.0) if track_age else None
        noise = StepDraws(generators, n_steps, _normals)
        traj = _paths(mc, start, stop, v)
        age_traj = _paths(mc, start, stop, a)
        kept = 0 if traj is None else traj.shape[0]
        fired_trials, fired_steps = [], []
        for n in range(n_steps):
            v += (mu[n] - v) * mc.dt + noise_scale * noise(n)
            fired = v >= V_THRESHOLD
            if track_age:
                a += mc.dt
            if fired.any():
                idx = np.flatnonzero(fired)
                fired_trials.append(idx)
                fired_steps.append(np.full(idx.size, n + 1))
                v[idx] = v_r
                if track_age:
                    a[idx] = 0.0
            if traj is not None:
                traj[:, n + 1] = v[:kept]
            if age_traj is not None:
                age_traj[:, n + 1] = a[:kept]
        trials, steps = _collect(fired_trials, fired_steps)
        logger.debug("Block %d: %d trials, %d spikes", index, stop - start, trials.size)
        return _Block(start, trials, steps, traj, age_traj, v, a)

    return _merge(_run_blocks(worker, potential_stream.blocks(mc.n_trials), mc, "mc"), mc)


def simulate_nlif(s: Stimulus, v_r: float, mc: McConfig,
                  initial: InitialCondition = InitialCondition()) -> McResult:
    """Noisy LIF trials; a spike is recorded at the end time of the crossing step."""
    logger.info("NLIF Monte Carlo: %d trials, %d steps", mc.n_trials, mc.n_steps)
    return _langevin(s, v_r, mc, initial, None)


def simulate_joint(s: Stimulus, v_r: float, mc: McConfig, initial: InitialCondition = InitialCondition(),
                   age_initial: InitialCondition = InitialCondition()) -> McResult:
    """NLIF trials that also track the age; same potential increments as simulate_nlif."""
    logger.info("Joint Monte Carlo: %d trials, %d steps", mc.n_trials, mc.n_steps)
    return _langevin(s, v_r, mc, initial, age_initial)


def simulate_escape(S: HazardTable, mc: McConfig, age_initial: InitialCondition = InitialCondition()) -> McResult:
    """Escape-rate trials under a tabulated hazard.

    During [t, t + dt] a trial of age a fires with probability 1 - exp(-S(t, a + dt) dt),
    the table cell its cohort arrives in, matching the age-structured solver.
    """
    if S.times is not None and S.times[-1] + S.dt < mc.n_steps * mc.dt - 1e-9:
        logger.warning("Hazard table ends at t=%.4g; later times reuse its last row", S.times[-1])
    if not math.isclose(S.age_grid.da, mc.dt, rel_tol=1e-9):
        logger.warning("Hazard age spacing %.4g differs from the Monte Carlo step %.4g", S.age_grid.da, mc.dt)
    stream = NoiseIncrementStream(mc.seed, STREAM_ESCAPE, mc.block_size)
    da = S.age_grid.da
    n_steps = mc.n_steps
    logger.info("Escape Monte Carlo: %d trials, %d steps", mc.n_trials, n_steps)

    def worker(block):
        index, start, stop = block
        generators = stream.generators(start, stop)
        a = np.maximum(age_initial.sample_each(generators), 0.0)
        uniforms = StepDraws(generators, n_steps, _uniforms)
        age_traj = _paths(mc, start, stop, a)
        kept = 0 if age_traj is None else age_traj.shape[0]
        fired_trials, fired_steps = [], []
        for n in range(n_steps):
            a_next = a + mc.dt
            rates = S.lookup(n * mc.dt, np.floor(a_next / da + 1e-9).astype(np.int64))
            fired = uniforms(n) < -np.expm1(-rates * mc.dt)
            if fired.any():
                idx = np.flatnonzero(fired)
                fired_trials.append(idx)
                fired_steps.append(np.full(idx.size, n + 1))
            a = np.where(fired, 0.0, a_next)
            if age_traj is not None:
                age_traj[:, n + 1] = a[:kept]
        trials, steps = _collect(fired_trials, fired_steps)
        return _Block(start, trials, steps, None, age_traj, None, a)

    return _merge(_run_blocks(worker, stream.blocks(mc.n_trials), mc, "escape"), mc)


# ---------------------------------------------------------------------------
# Spike statistics
# ---------------------------------------------------------------------------


def _records(source) -> tuple[Sequence[SpikeRecord], float | None, float | None]:
    if isinstance(source, McResult):
        return source.records, source.horizon, source.dt
    return list(source), None, None


def psth_edges(horizon: float, bin: float, dt: float = 0.0) -> np.ndarray:
    """Bin edges k*bin + dt/2 covering [0, horizon].

    Spike times and density rates both live on the step lattice n*dt; the half-step
    offset keeps every lattice point off the edges, so each bin holds the same number
    of steps whatever the floating-point rounding of the times.
    """
    n_bins = max(int(math.ceil(horizon / bin - 1e-9)), 1)
    return 0.5 * dt + np.arange(n_bins + 1) * bin


def psth(source, bin: float, horizon: float | None = None, dt: float | None = None) -> FiringRateSeries:
    """Binned population rate: spikes in bin / (n_trials * bin), on the psth_edges bins."""
    if not (bin > 0):
        raise ConfigError(f"PSTH bin must be > 0, got {bin}")
    records, result_horizon, result_dt = _records(source)
    if not records:
        raise ConfigError("PSTH of an empty record set")
    times = np.concatenate([r.spike_times for r in records])
    horizon = horizon or result_horizon or (times.max() if times.size else bin)
    edges = psth_edges(horizon, bin, dt if dt is not None else (result_dt or 0.0))
    counts, _ = np.histogram(times, bins=edges)
    return FiringRateSeries(0.5 * (edges[1:] + edges[:-1]), counts / (len(records) * bin))


def intervals(source, include_first: bool = False) -> np.ndarray:
    """Pooled interspike intervals; the interval from t=0 is optional."""
    records, _, _ = _records(source)
    parts = []
    for r in records:
        times = np.concatenate([[0.0], r.spike_times]) if include_first else r.spike_times
        parts.append(np.diff(times))
    return np.concatenate(parts) if parts else np.empty(0)


@dataclass
class IsiHistogram:
    edges: np.ndarray
    density: np.ndarray
    count: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def isi_histogram(source, bin: float, a_max: float, include_first: bool = False, offset: float = 0.0) -> IsiHistogram:
    """Normalized ISI histogram on [offset, a_max + offset].

    Intervals beyond the range still count in the normalization, so the histogram mass is
    the fraction of intervals shorter than a_max.
    """
    data = intervals(source, include_first)
    if data.size == 0:
        raise NumericalError("No interspike intervals found")
    n_bins = max(int(math.ceil(a_max / bin - 1e-9)), 1)
    edges = offset + np.arange(n_bins + 1) * bin
    counts, _ = np.histogram(data, bins=edges)
    return IsiHistogram(edges, counts / (data.size * bin), int(data.size))


class IsiStatistics(NamedTuple):
    mean: float
    std: float
    cv: float
    sem: float
    count: int


def isi_statistics(source, include_first: bool = False) -> IsiStatistics:
    data = intervals(source, include_first)
    if data.size < 2:
        raise NumericalError("Need at least two interspike intervals")
    mean = float(data.mean())
    std = float(data.std(ddof=1))
    return IsiStatistics(mean, std, std / mean, std / math.sqrt(data.size), int(data.size))


def joint_histogram(potential: np.ndarray, age: np.ndarray, age_edges: np.ndarray, v_edges: np.ndarray) -> np.ndarray:
    """Empirical (a, v) probability density from per-trial end states."""
    counts, _, _ = np.histogram2d(age, potential, bins=[age_edges, v_edges])
    area = np.outer(np.diff(age_edges), np.diff(v_edges))
    return counts / (potential.size * area)
