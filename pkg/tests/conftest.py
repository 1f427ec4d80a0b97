import numpy as np
import pytest

from core_types import AgeGrid, PotentialGrid, Stimulus


@pytest.fixture
def coarse_grid():
    """Potential grid used by the fast cross-model tests (dv = 0.02)."""
    return PotentialGrid(v_r=0.5, v_min=-1.0, n_v=100)


@pytest.fixture
def suprathreshold():
    return Stimulus.constant(3.0, 0.3)


@pytest.fixture
def oscillating():
    return Stimulus.sinusoid(3.0, 0.5, 1.0, 0.3, horizon=2.0, resolution=2e-3)


@pytest.fixture
def age_grid():
    return AgeGrid.from_step(2e-3, 1.2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
