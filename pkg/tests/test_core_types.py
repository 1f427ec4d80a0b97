import math

import numpy as np
import pytest

from core_types import (
    AgeDensity,
    AgeGrid,
    Density1D,
    FiringRateSeries,
    JointDensity,
    PotentialGrid,
    SpikeRecord,
    Stimulus,
    bin_average,
    compare_series,
    deposit_delta,
    evaluate_stimulus,
    gaussian_cells,
    mass,
    rel_l1,
    snapshot_steps,
)
from errors import ConfigError, GridError, NumericalError


class TestStimulus:
    def test_constant(self):
        assert evaluate_stimulus(Stimulus.constant(3.0, 0.1), 17.2) == 3.0

    def test_sampled_interpolates(self):
        s = Stimulus.sampled([0.0, 10.0], [1.0, 2.0], 0.1)
        assert evaluate_stimulus(s, 5.0) == pytest.approx(1.5)

    def test_sampled_clamps(self):
        s = Stimulus.sampled([0.0, 10.0], [1.0, 2.0], 0.1)
        assert evaluate_stimulus(s, 12.0) == pytest.approx(2.0)

    def test_vector_evaluation(self):
        s = Stimulus.sampled([0.0, 10.0], [1.0, 2.0], 0.1)
        np.testing.assert_allclose(s(np.array([0.0, 5.0, 20.0])), [1.0, 1.5, 2.0])

    def test_sinusoid(self):
        s = Stimulus.sinusoid(3.0, 0.5, 1.0, 0.2, horizon=2.0)
        assert s(0.0) == pytest.approx(3.0)
        assert s(0.25) == pytest.approx(3.5, abs=1e-3)
        assert s(0.75) == pytest.approx(2.5, abs=1e-3)

    def test_negative_time(self):
        with pytest.raises(ConfigError):
            evaluate_stimulus(Stimulus.constant(1.0, 0.1), -0.5)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_sigma_positive(self, sigma):
        with pytest.raises(ConfigError):
            Stimulus.constant(1.0, sigma)

    def test_times_increasing(self):
        with pytest.raises(ConfigError):
            Stimulus.sampled([0.0, 1.0, 1.0], [1.0, 2.0, 3.0], 0.1)


class TestGrids:
    def test_potential_grid(self):
        grid = PotentialGrid(v_r=0.5)
        assert grid.dv == pytest.approx(5.0 / 400)
        assert grid.faces[-1] == pytest.approx(1.0)
        assert grid.centers.size == 400

    @pytest.mark.parametrize("v_r", [-5.0, 1.0, 1.5])
    def test_reset_inside(self, v_r):
        with pytest.raises(GridError):
            PotentialGrid(v_r=v_r)

    def test_age_grid_from_step(self):
        grid = AgeGrid.from_step(1e-3, 2.0)
        assert grid.n_a == 2000
        assert grid.da == pytest.approx(1e-3)
        assert grid.ages[3] == pytest.approx(3e-3)

    def test_age_step_mismatch(self):
        with pytest.raises(GridError):
            AgeGrid.from_step(1e-3, 2.0).check_step(2e-3)


class TestMass:
    def test_uniform(self):
        grid = PotentialGrid(v_r=0.5)
        values = np.full(grid.n_v, 1.0 / (grid.v_th - grid.v_min))
        assert mass(values, grid) == pytest.approx(1.0)

    def test_zero(self):
        grid = PotentialGrid(v_r=0.5)
        assert mass(Density1D(np.zeros(grid.n_v), grid)) == 0.0

    def test_gaussian_bump(self):
        grid = PotentialGrid(v_r=0.5)
        m, mean, std = 0.7, -1.5, 0.3
        values = m * np.exp(-0.5 * ((grid.centers - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi))
        assert mass(values, grid) == pytest.approx(m, rel=1e-6)

    def test_joint(self):
        grid = PotentialGrid(v_r=0.5, n_v=50)
        ages = AgeGrid(a_max=1.0, n_a=20)
        values = np.full((20, 50), 1.0 / 5.0)
        assert JointDensity(values, ages, grid).mass() == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        grid = PotentialGrid(v_r=0.5)
        with pytest.raises(ConfigError):
            mass(np.ones(grid.n_v + 1), grid)
        with pytest.raises(ConfigError):
            AgeDensity(np.ones(5), AgeGrid(a_max=1.0, n_a=10))


class TestDepositDelta:
    def test_at_center(self):
        grid = PotentialGrid(v_r=0.5)
        out = deposit_delta(grid, grid.centers[100])
        assert np.count_nonzero(out) == 1
        assert out[100] == pytest.approx(1.0 / grid.dv)

    def test_between_centers(self):
        grid = PotentialGrid(v_r=0.5)
        out = deposit_delta(grid, grid.faces[101])
        np.testing.assert_allclose(out[100:102], 0.5 / grid.dv)
        assert mass(out, grid) == pytest.approx(1.0)

    @pytest.mark.parametrize("location", [-3.21, 0.123, 0.5, 0.97])
    def test_mass_and_moment(self, location):
        grid = PotentialGrid(v_r=0.5)
        out = deposit_delta(grid, location, weight=2.5)
        assert mass(out, grid) == pytest.approx(2.5, rel=1e-12)
        assert (out * grid.centers).sum() * grid.dv == pytest.approx(2.5 * location, rel=1e-12)

    @pytest.mark.parametrize("side", ["lower", "upper"])
    def test_boundary_half_cell(self, side):
        grid = PotentialGrid(v_r=0.5)
        cell, location = (0, grid.v_min + 0.25 * grid.dv) if side == "lower" else (-1, grid.v_th - 0.25 * grid.dv)
        out = deposit_delta(grid, location)
        assert np.count_nonzero(out) == 1
        assert out[cell] == pytest.approx(1.0 / grid.dv)
        moment = (out * grid.centers).sum() * grid.dv
        assert moment == pytest.approx(grid.centers[cell])
        assert abs(moment - location) <= 0.5 * grid.dv

    @pytest.mark.parametrize("location", [-4.0, 1.0, 3.0])
    def test_outside(self, location):
        with pytest.raises(ConfigError):
            deposit_delta(PotentialGrid(v_r=0.5), location)


class TestHelpers:
    def test_snapshot_steps(self):
        assert snapshot_steps(100, 0.01) == {0, 100}
        assert snapshot_steps(100, 0.01, times=[0.5, 2.0]) == {0, 50, 100}
        assert snapshot_steps(10, 0.1, stride=5) == {0, 5, 10}

    def test_gaussian_cells(self):
        grid = PotentialGrid(v_r=0.5)
        values = gaussian_cells(grid.centers, 0.0, 0.2)
        assert mass(values, grid) == pytest.approx(1.0)
        assert grid.centers[np.argmax(values)] == pytest.approx(0.0, abs=grid.dv)

    def test_rel_l1(self):
        assert rel_l1([1.1, 2.2], [1.0, 2.0]) == pytest.approx(0.1)
        assert rel_l1([0.0], [0.0]) == 0.0


class TestFiringRateSeries:
    def test_negative_rate(self):
        with pytest.raises(NumericalError):
            FiringRateSeries(np.array([0.0, 1.0]), np.array([1.0, -1.0]))

    def test_times_increasing(self):
        with pytest.raises(ConfigError):
            FiringRateSeries(np.array([1.0, 1.0]), np.array([1.0, 1.0]))

    def test_spike_record_order(self):
        with pytest.raises(ConfigError):
            SpikeRecord(0, np.array([0.2, 0.1]))


class TestCompareSeries:
    def test_identical(self):
        x = FiringRateSeries(np.arange(1, 11) * 0.1, np.linspace(1, 2, 10))
        assert compare_series(x, x) == (0.0, 0.0)

    def test_scaled(self):
        times = np.arange(1, 11) * 0.1
        x = FiringRateSeries(times, np.linspace(1, 2, 10))
        y = FiringRateSeries(times, 1.1 * np.linspace(1, 2, 10))
        d = compare_series(x, y)
        assert d.l1_rel == pytest.approx(0.1)
        assert d.linf_rel == pytest.approx(0.1)

    def test_different_grids(self):
        x = FiringRateSeries(np.array([0.5, 1.5]), np.array([1.0, 3.0]))
        y = FiringRateSeries(np.array([0.0, 1.0, 2.0]), np.array([0.0, 2.0, 4.0]))
        assert compare_series(x, y).l1_rel == pytest.approx(0.0, abs=1e-12)

    def test_bin_average(self):
        times = np.arange(1, 1001) * 1e-3
        series = FiringRateSeries(times, np.full(1000, 4.0))
        binned = bin_average(series, np.linspace(0, 1, 11))
        np.testing.assert_allclose(binned.rates, 4.0)
        np.testing.assert_allclose(binned.times, np.arange(10) * 0.1 + 0.05)
