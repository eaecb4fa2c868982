import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mfg_carleman.forward_solver import SolverConfig, solve_mfgs
from mfg_carleman.grid import ScalarField, SpaceTimeGrid
from mfg_carleman.mfg_model import MfgProblem, slice_from_spec

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def make_problem(grid, **kwargs):
    u_T = kwargs.pop("u_T", "0.5*cos(pi*x)")
    p_0 = kwargs.pop("p_0", "1 + 0.5*cos(pi*x)")
    beta = kwargs.pop("beta", 0.1)
    return MfgProblem.build(grid, beta, slice_from_spec(u_T, grid), slice_from_spec(p_0, grid), **kwargs)


@pytest.fixture(scope="session")
def default_grid():
    return SpaceTimeGrid.make(201, 401, 0.3)


@pytest.fixture(scope="session")
def default_problem(default_grid):
    return make_problem(default_grid)


@pytest.fixture(scope="session")
def default_solution(default_problem):
    return solve_mfgs(default_problem, SolverConfig())


@pytest.fixture(scope="session")
def small_grid():
    return SpaceTimeGrid.make(41, 61, 0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_field(grid, rng):
    return ScalarField(grid, rng.standard_normal(grid.value_shape))
