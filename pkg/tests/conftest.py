import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

import specvae as sv

settings.register_profile(
    "ci", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def grid():
    return sv.default_grid()


@pytest.fixture(scope="session")
def irr(grid):
    return sv.synth_irradiance(grid, 30.0)


@pytest.fixture(scope="session")
def small_grid():
    return sv.make_wavelength_grid(40, 0.0065, gaps=[(0.52, 0.55)])


@pytest.fixture(scope="session")
def small_irr(small_grid):
    return sv.synth_irradiance(small_grid, 30.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
