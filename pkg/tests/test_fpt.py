import math

import numpy as np
import pytest

from as1d import step_survivor
from core_types import AgeGrid, PotentialGrid, Stimulus
from errors import AgeTruncationError, ConfigError, NumericalError
from fp1d import stationary_fp
from fpt import _check_accounting, hazard_from_survival, isi_on_bins, solve_fpt_autonomous, solve_fpt_nonautonomous


@pytest.fixture
def autonomous(coarse_grid, age_grid):
    return solve_fpt_autonomous(3.0, 0.3, coarse_grid, age_grid)


class TestAutonomous:
    def test_survivor(self, autonomous):
        assert autonomous.survivor[0] == pytest.approx(1.0)
        assert np.all(np.diff(autonomous.survivor) <= 1e-15)
        assert autonomous.survivor[-1] < 1e-8

    def test_accounting(self, autonomous):
        dt = autonomous.age_grid.da
        fired = np.cumsum(autonomous.isi_raw) * dt
        np.testing.assert_allclose(autonomous.survivor + fired, 1.0, atol=1e-12)
        np.testing.assert_allclose(np.diff(autonomous.survivor), -autonomous.isi_raw[1:] * dt, atol=1e-14)

    def test_mean_isi_matches_stationary_rate(self, autonomous, coarse_grid, suprathreshold):
        stat = stationary_fp(suprathreshold, coarse_grid, dt=2e-3, tol=1e-11)
        assert autonomous.mean_isi * stat.rate == pytest.approx(1.0, rel=1e-6)

    def test_log_hazard_reproduces_survivor(self, autonomous):
        np.testing.assert_allclose(step_survivor(autonomous.hazard), autonomous.survivor, atol=1e-9)

    def test_hazard_forms_agree(self, coarse_grid, age_grid, autonomous):
        ratio = solve_fpt_autonomous(3.0, 0.3, coarse_grid, age_grid, hazard_form="ratio")
        log_values, ratio_values = autonomous.hazard.values, ratio.hazard.values
        early = autonomous.survivor > 0.5
        np.testing.assert_allclose(log_values[early], ratio_values[early], rtol=0.05,
                                   atol=1e-2 * ratio_values[early].max())

    def test_unknown_form(self, coarse_grid, age_grid):
        with pytest.raises(ConfigError):
            solve_fpt_autonomous(3.0, 0.3, coarse_grid, age_grid, hazard_form="bogus")

    def test_short_age_domain(self, coarse_grid):
        with pytest.raises(AgeTruncationError):
            solve_fpt_autonomous(3.0, 0.3, coarse_grid, AgeGrid.from_step(2e-3, 0.3))

    def test_noise_free_interval(self):
        grid = PotentialGrid(v_r=0.5)
        solution = solve_fpt_autonomous(3.0, 0.05, grid, AgeGrid.from_step(1e-3, 1.0))
        peak = solution.ages[np.argmax(solution.isi)]
        assert peak == pytest.approx(math.log(2.5 / 2.0), abs=0.015)

    def test_isi_on_bins(self, autonomous):
        edges = np.linspace(0.0, autonomous.age_grid.a_max, 61)
        binned = isi_on_bins(autonomous, edges)
        assert (binned * np.diff(edges)).sum() == pytest.approx(1.0, abs=1e-6)


class TestHazardFromSurvival:
    def test_ratio(self):
        survivor = np.array([1.0, 0.5, 0.25])
        isi = np.array([0.0, 1.0, 1.0])
        np.testing.assert_allclose(hazard_from_survival(survivor, isi, 0.1, "ratio"), [0.0, 2.0, 4.0])

    def test_log(self):
        survivor = np.array([1.0, 0.5, 0.25])
        isi = np.array([0.0, 5.0, 2.5])
        np.testing.assert_allclose(hazard_from_survival(survivor, isi, 0.1, "log"),
                                   [0.0, 10 * math.log(2), 10 * math.log(2)])

    def test_floor_below_reliable_survivor(self):
        survivor = np.array([1.0, 0.5, 1e-12, 1e-14])
        isi = np.ones(4)
        hazard = hazard_from_survival(survivor, isi, 0.1, "ratio")
        assert hazard[2] == hazard[1] == hazard[3]


class TestNonautonomous:
    def test_constant_stimulus_matches_autonomous(self, coarse_grid, age_grid, suprathreshold, autonomous):
        solution = solve_fpt_nonautonomous(suprathreshold, coarse_grid, age_grid, 0.1)
        np.testing.assert_allclose(solution.survivor, np.broadcast_to(autonomous.survivor, solution.survivor.shape),
                                   rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(solution.hazard.values[-1], autonomous.hazard.values, rtol=1e-9, atol=1e-12)

    def test_boundary_and_identity(self, coarse_grid, age_grid, oscillating):
        solution = solve_fpt_nonautonomous(oscillating, coarse_grid, age_grid, 0.2, snapshot_steps=(0, 50))
        dt = age_grid.da
        np.testing.assert_allclose(solution.survivor[:, 0], 1.0, atol=1e-12)
        # ISI = -(d/dt + d/da) P along characteristics
        loss = solution.survivor[:-1, :-1] - solution.survivor[1:, 1:]
        np.testing.assert_allclose(solution.isi_raw[1:, 1:] * dt, loss, atol=1e-13)
        assert sorted(solution.snapshots) == [0, 50]
        assert solution.snapshots[50].shape == (age_grid.n_a, coarse_grid.n_v)
        assert solution.hazard.values.shape == (100, age_grid.n_a)
        assert solution.times[-1] == pytest.approx(0.2)

    def test_hazard_follows_stimulus(self, coarse_grid):
        ages = AgeGrid.from_step(2e-3, 2.5)
        rising = Stimulus.sampled([0.0, 0.2], [2.5, 3.5], 0.3)
        solution = solve_fpt_nonautonomous(rising, coarse_grid, ages, 0.2)
        mid = int(round(0.15 / ages.da))
        # stronger drive, larger hazard at the same age
        assert solution.hazard.values[-1, mid] > solution.hazard.values[0, mid]

    def test_short_age_domain(self, coarse_grid, oscillating):
        with pytest.raises(AgeTruncationError):
            solve_fpt_nonautonomous(oscillating, coarse_grid, AgeGrid.from_step(2e-3, 0.3), 0.05)

    def test_accounting_along_characteristics(self, coarse_grid, age_grid, oscillating):
        solution = solve_fpt_nonautonomous(oscillating, coarse_grid, age_grid, 0.05)
        _check_accounting(solution.survivor, solution.isi_raw, age_grid.da)
        leaky = solution.survivor.copy()
        leaky[10, 20:] *= 0.99
        with pytest.raises(NumericalError):
            _check_accounting(leaky, solution.isi_raw, age_grid.da)
