import math

import numpy as np
import pytest

from as1d import HazardTable, escape_hazard_table, solve_as
from core_types import (
    AgeGrid,
    FiringRateSeries,
    PotentialGrid,
    SpikeRecord,
    Stimulus,
    bin_average,
    compare_series,
    gaussian_cells,
)
from errors import ConfigError, HazardRangeError, NumericalError
from fp1d import stationary_fp
from mc_engines import (
    InitialCondition,
    McConfig,
    NoiseIncrementStream,
    intervals,
    isi_histogram,
    isi_statistics,
    joint_histogram,
    psth,
    psth_edges,
    simulate_escape,
    simulate_joint,
    simulate_nlif,
)


def spike_times(result):
    return [r.spike_times for r in result.records]


class TestMcConfig:
    @pytest.mark.parametrize("kwargs", [
        dict(dt=0.0, horizon=1.0, n_trials=10),
        dict(dt=0.1, horizon=0.01, n_trials=10),
        dict(dt=0.1, horizon=1.0, n_trials=0),
        dict(dt=0.1, horizon=1.0, n_trials=10, seed=-1),
        dict(dt=0.1, horizon=1.0, n_trials=10, threads=0),
        dict(dt=0.1, horizon=1.0, n_trials=10, path_limit=0),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            McConfig(**kwargs)

    def test_steps(self):
        assert McConfig(dt=1e-3, horizon=2.0, n_trials=1).n_steps == 2000

    def test_paths(self):
        assert McConfig(dt=0.1, horizon=1.0, n_trials=10).n_paths == 0
        assert McConfig(dt=0.1, horizon=1.0, n_trials=10, record_trajectories=True).n_paths == 10
        assert McConfig(dt=0.1, horizon=1.0, n_trials=10, record_trajectories=True, path_limit=3).n_paths == 3
        assert McConfig(dt=0.1, horizon=1.0, n_trials=2, record_trajectories=True, path_limit=3).n_paths == 2


class TestInitialCondition:
    def test_point(self, rng):
        np.testing.assert_array_equal(InitialCondition.point(0.3).sample(rng, 4), 0.3)

    def test_gaussian(self, rng):
        values = InitialCondition.gaussian(1.0, 0.2).sample(rng, 20_000)
        assert values.mean() == pytest.approx(1.0, abs=0.01)
        assert values.std() == pytest.approx(0.2, rel=0.03)

    def test_cells(self, rng):
        grid = PotentialGrid(v_r=0.5)
        condition = InitialCondition.cells(grid.centers, gaussian_cells(grid.centers, -1.0, 0.3))
        values = condition.sample(rng, 20_000)
        assert values.mean() == pytest.approx(-1.0, abs=0.01)
        assert values.min() >= grid.v_min

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            InitialCondition(kind="uniform")


class TestStreams:
    def test_blocks_cover_trials(self):
        blocks = NoiseIncrementStream(0, 0, block_size=64).blocks(150)
        assert blocks == [(0, 0, 64), (1, 64, 128), (2, 128, 150)]

    def test_tags_are_independent(self):
        a = NoiseIncrementStream(5, 0).generator(0).random(3)
        b = NoiseIncrementStream(5, 1).generator(0).random(3)
        assert not np.allclose(a, b)
        np.testing.assert_array_equal(a, NoiseIncrementStream(5, 0).generator(0).random(3))

    def test_trials_are_independent(self):
        stream = NoiseIncrementStream(5, 0)
        first, second = (g.random(3) for g in stream.generators(0, 2))
        assert not np.allclose(first, second)
        np.testing.assert_array_equal(second, NoiseIncrementStream(5, 0, block_size=1).generator(1).random(3))


class TestNlif:
    def test_thread_count_does_not_change_results(self, suprathreshold):
        single = simulate_nlif(suprathreshold, 0.5, McConfig(dt=1e-3, horizon=0.5, n_trials=300, seed=11,
                                                             block_size=64, threads=1))
        pooled = simulate_nlif(suprathreshold, 0.5, McConfig(dt=1e-3, horizon=0.5, n_trials=300, seed=11,
                                                             block_size=64, threads=3))
        assert [r.trial_id for r in pooled.records] == list(range(300))
        for a, b in zip(spike_times(single), spike_times(pooled)):
            np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("n_trials, block_size", [(10, 4), (25, 7), (40, 64)])
    def test_trial_independent_of_population(self, suprathreshold, n_trials, block_size):
        mc = McConfig(dt=1e-3, horizon=0.3, n_trials=10, seed=8, block_size=10)
        initial = InitialCondition.gaussian(0.0, 0.2)
        reference = simulate_nlif(suprathreshold, 0.5, mc, initial)
        larger = simulate_nlif(suprathreshold, 0.5, McConfig(dt=1e-3, horizon=0.3, n_trials=n_trials, seed=8,
                                                             block_size=block_size), initial)
        for a, b in zip(spike_times(reference), spike_times(larger)[:10]):
            np.testing.assert_array_equal(a, b)

    def test_seed_changes_results(self, suprathreshold):
        runs = [simulate_nlif(suprathreshold, 0.5, McConfig(dt=1e-3, horizon=0.5, n_trials=50, seed=seed))
                for seed in (1, 2)]
        assert any(a.tolist() != b.tolist() for a, b in zip(spike_times(runs[0]), spike_times(runs[1])))

    def test_noise_free_first_spike(self):
        mc = McConfig(dt=1e-4, horizon=0.3, n_trials=10)
        result = simulate_nlif(Stimulus.constant(3.0, 1e-9), 0.5, mc, InitialCondition.point(0.5))
        for record in result.records:
            assert record.spike_times.size == 1
            assert record.spike_times[0] == pytest.approx(math.log(2.5 / 2.0), abs=3e-4)

    def test_spike_times_on_step_grid(self, suprathreshold):
        result = simulate_nlif(suprathreshold, 0.5, McConfig(dt=1e-3, horizon=0.5, n_trials=20))
        times = np.concatenate(spike_times(result))
        np.testing.assert_allclose(times / 1e-3, np.round(times / 1e-3), atol=1e-9)

    def test_trajectories(self, suprathreshold):
        mc = McConfig(dt=0.01, horizon=0.1, n_trials=10, record_trajectories=True)
        result = simulate_nlif(suprathreshold, 0.5, mc, InitialCondition.point(0.2))
        assert result.trajectories.shape == (10, 11)
        assert result.age_trajectories is None
        np.testing.assert_array_equal(result.trajectories[:, 0], 0.2)
        assert np.all(result.trajectories < 1.0)

    def test_path_limit(self, suprathreshold):
        mc = McConfig(dt=0.01, horizon=0.1, n_trials=50, block_size=8, record_trajectories=True, path_limit=3)
        result = simulate_nlif(suprathreshold, 0.5, mc, InitialCondition.gaussian(0.0, 0.2))
        assert result.trajectories.shape == (3, 11)
        full = simulate_nlif(suprathreshold, 0.5, McConfig(dt=0.01, horizon=0.1, n_trials=3, record_trajectories=True),
                             InitialCondition.gaussian(0.0, 0.2))
        np.testing.assert_array_equal(result.trajectories, full.trajectories)

    def test_reset_below_threshold(self, suprathreshold):
        with pytest.raises(ConfigError):
            simulate_nlif(suprathreshold, 1.2, McConfig(dt=0.01, horizon=0.1, n_trials=1))

    def test_stationary_rate_matches_fp(self):
        grid = PotentialGrid(v_r=0.5, v_min=-2.0, n_v=300)
        s = Stimulus.constant(1.5, 0.5)
        stat = stationary_fp(s, grid)
        mc = McConfig(dt=2e-4, horizon=0.5, n_trials=10_000, seed=3)
        result = simulate_nlif(s, 0.5, mc, InitialCondition.cells(grid.centers, stat.p.values))
        rate = psth(result, 0.5).rates[0]
        assert rate == pytest.approx(stat.rate, rel=0.05)


class TestJoint:
    def test_same_spikes_as_nlif(self, suprathreshold):
        mc = McConfig(dt=1e-3, horizon=0.5, n_trials=100, seed=4, block_size=32)
        plain = simulate_nlif(suprathreshold, 0.5, mc, InitialCondition.gaussian(0.0, 0.2))
        joint = simulate_joint(suprathreshold, 0.5, mc, InitialCondition.gaussian(0.0, 0.2),
                               InitialCondition.gaussian(0.3, 0.05))
        for a, b in zip(spike_times(plain), spike_times(joint)):
            np.testing.assert_array_equal(a, b)

    def test_age_is_time_since_spike(self, suprathreshold):
        mc = McConfig(dt=1e-3, horizon=0.5, n_trials=50, seed=4)
        result = simulate_joint(suprathreshold, 0.5, mc)
        for record, age in zip(result.records, result.final_age):
            last = record.spike_times[-1] if record.spike_times.size else 0.0
            assert age == pytest.approx(0.5 - last, abs=1e-9)

    def test_trajectories(self, suprathreshold):
        mc = McConfig(dt=0.01, horizon=0.1, n_trials=10, record_trajectories=True)
        result = simulate_joint(suprathreshold, 0.5, mc)
        assert result.trajectories.shape == result.age_trajectories.shape == (10, 11)


class TestEscape:
    def test_constant_hazard_mean_interval(self):
        lam, dt = 2.0, 0.01
        ages = AgeGrid.from_step(dt, 15.0)
        mc = McConfig(dt=dt, horizon=100.0, n_trials=500, seed=9)
        result = simulate_escape(HazardTable(np.full(ages.n_a, lam), ages), mc)
        stats = isi_statistics(result)
        assert stats.mean == pytest.approx(dt / -math.expm1(-lam * dt), rel=0.02)
        assert stats.cv == pytest.approx(1.0, abs=0.05)

    def test_age_beyond_table(self):
        ages = AgeGrid.from_step(0.01, 0.5)
        with pytest.raises(HazardRangeError):
            simulate_escape(HazardTable(np.zeros(ages.n_a), ages), McConfig(dt=0.01, horizon=1.0, n_trials=5))

    def test_thread_count_does_not_change_results(self):
        ages = AgeGrid.from_step(0.01, 10.0)
        table = escape_hazard_table(ages, 3.0, 30.0)
        runs = [simulate_escape(table, McConfig(dt=0.01, horizon=5.0, n_trials=200, seed=2, block_size=50,
                                                threads=threads), InitialCondition.gaussian(1.0, 0.2))
                for threads in (1, 4)]
        for a, b in zip(spike_times(runs[0]), spike_times(runs[1])):
            np.testing.assert_array_equal(a, b)


    def test_trial_independent_of_population(self):
        ages = AgeGrid.from_step(0.01, 10.0)
        table = escape_hazard_table(ages, 3.0, 30.0)
        initial = InitialCondition.gaussian(1.0, 0.2)
        small = simulate_escape(table, McConfig(dt=0.01, horizon=3.0, n_trials=10, seed=6, block_size=3), initial)
        large = simulate_escape(table, McConfig(dt=0.01, horizon=3.0, n_trials=30, seed=6, block_size=16), initial)
        for a, b in zip(spike_times(small), spike_times(large)[:10]):
            np.testing.assert_array_equal(a, b)


class TestSpikeStatistics:
    def test_psth_single_bin(self):
        records = [SpikeRecord(i, np.array([0.5])) for i in range(100)]
        series = psth(records, 1.0)
        np.testing.assert_allclose(series.rates, [1.0])
        np.testing.assert_allclose(series.times, [0.5])

    def test_psth_errors(self):
        with pytest.raises(ConfigError):
            psth([SpikeRecord(0, np.array([0.5]))], 0.0)
        with pytest.raises(ConfigError):
            psth([], 0.1)

    def test_psth_edges(self):
        np.testing.assert_allclose(psth_edges(1.0, 0.25), [0.0, 0.25, 0.5, 0.75, 1.0])
        np.testing.assert_allclose(psth_edges(1.0, 0.25, 0.01), [0.005, 0.255, 0.505, 0.755, 1.005])

    def test_psth_on_step_lattice(self):
        # one spike every step: each bin must hold exactly ten of them
        records = [SpikeRecord(0, np.arange(1, 121) * 0.01)]
        series = psth(records, 0.1, horizon=1.2, dt=0.01)
        np.testing.assert_allclose(series.rates, 100.0)

    def test_bin_average_shares_psth_edges(self):
        dt, horizon = 0.01, 1.2
        times = np.arange(1, 121) * dt
        edges = psth_edges(horizon, 0.1, dt)
        averaged = bin_average(FiringRateSeries(times, np.floor(times / 0.1 - 1e-9)), edges)
        spikes = psth([SpikeRecord(0, times)], 0.1, horizon=horizon, dt=dt)
        np.testing.assert_allclose(averaged.times, spikes.times)
        np.testing.assert_allclose(averaged.rates, np.arange(12))

    def test_isi_histogram(self):
        records = [SpikeRecord(0, np.array([1.0, 2.0, 3.0]))]
        hist = isi_histogram(records, 0.5, 2.0)
        assert hist.count == 2
        assert (hist.density * np.diff(hist.edges)).sum() == pytest.approx(1.0)
        assert intervals(records, include_first=True).tolist() == [1.0, 1.0, 1.0]

    def test_no_intervals(self):
        with pytest.raises(NumericalError):
            isi_histogram([SpikeRecord(0, np.array([1.0]))], 0.5, 2.0)

    def test_isi_statistics(self):
        stats = isi_statistics([SpikeRecord(0, np.array([1.0, 2.0, 4.0]))])
        assert stats.mean == pytest.approx(1.5)
        assert stats.count == 2

    def test_joint_histogram_mass(self, rng):
        age = rng.random(1000)
        potential = rng.random(1000) - 0.5
        density = joint_histogram(potential, age, np.linspace(0, 1, 11), np.linspace(-0.5, 0.5, 6))
        assert density.shape == (10, 5)
        assert (density * 0.1 * 0.2).sum() == pytest.approx(1.0)


@pytest.mark.slow
def test_escape_matches_age_structured_rate():
    dt, horizon = 0.01, 20.0
    ages = AgeGrid.from_step(dt, 10.0)
    table = escape_hazard_table(ages, 3.0, 30.0)
    result = simulate_escape(table, McConfig(dt=dt, horizon=horizon, n_trials=100_000, seed=5),
                             InitialCondition.gaussian(1.0, 0.2))
    n0 = gaussian_cells(ages.centers, 1.0, 0.2)
    density = solve_as(n0, table, horizon, dt)
    edges = psth_edges(horizon, 0.1, dt)
    assert compare_series(bin_average(density.rates, edges), psth(result, 0.1)).l1_rel < 0.05
