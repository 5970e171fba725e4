import numpy as np
import pytest

from iim_poisson.geometry import Star
from iim_poisson.grid import Grid2D


@pytest.fixture
def star():
    return Star()


@pytest.fixture
def grid64():
    return Grid2D.unit(64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
