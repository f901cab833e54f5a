import os

import numpy as np
import pytest

from bdsde_rmc.grid_paths import build_time_grid, simulate_paths
from bdsde_rmc.model import ProblemSpec, make_builtin_case

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def zero_problem(**kw):
    zero3 = lambda x, y, z: np.zeros(np.broadcast(x, y, z).shape)
    zero2 = lambda x, y: np.zeros(np.broadcast(x, y).shape)
    return ProblemSpec(
        drift=lambda x: np.zeros(np.shape(x)),
        diffusion=lambda x: np.ones(np.shape(x)),
        driver=zero3,
        backward_driver=zero2,
        terminal=lambda x: np.zeros(np.shape(x)),
        lipschitz_f=0.0,
        lipschitz_g=0.0,
        **kw,
    )


@pytest.fixture
def martingale():
    return make_builtin_case("martingale")


@pytest.fixture
def small_batch(martingale):
    spec, _ = martingale
    grid = build_time_grid(1.0, 3)
    return simulate_paths(spec, grid, 500, 11)


def exploding_problem():
    base = zero_problem()
    return base.__class__(**{**base.__dict__, "drift": lambda x: np.where(np.abs(x) > 1.2, np.inf, 0.0)})
