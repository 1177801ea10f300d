import numpy as np
import pytest

from skdv import Grid, NoiseOperator, make_rng


@pytest.fixture(scope="session")
def grid():
    return Grid(100.0, 256)


@pytest.fixture(scope="session")
def grid_2pi():
    return Grid(2 * np.pi, 64)


@pytest.fixture(scope="session")
def grid_fine():
    return Grid(100.0, 1024)


@pytest.fixture(scope="session")
def phi(grid):
    return NoiseOperator.from_sobolev_decay(grid, hs_amplitude=0.1, decay=4.0)


@pytest.fixture()
def rng():
    return make_rng(12345, 0)
