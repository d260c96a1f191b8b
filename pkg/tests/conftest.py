import numpy as np
import pytest

import podmpc as pm
from podmpc import _kernels


@pytest.fixture(scope="session", autouse=True)
def _jit_warmup():
    _kernels.warmup()


@pytest.fixture(scope="session")
def run1():
    preset = pm.get_preset("run1")
    params = preset.params()
    grid = preset.grid()
    return preset, params, grid, preset.initial_state(grid)


@pytest.fixture(scope="session")
def run1_snapshots(run1):
    preset, params, grid, y0 = run1
    return pm.collect_snapshots(params, grid, 0.0, preset.T, y0)


@pytest.fixture(scope="session")
def run1_basis(run1, run1_snapshots):
    _, _, grid, _ = run1
    return pm.compute_pod_basis(run1_snapshots, "H", grid)


@pytest.fixture(scope="session")
def run1_basis_v(run1, run1_snapshots):
    _, _, grid, _ = run1
    return pm.compute_pod_basis(run1_snapshots, "V", grid)


def random_grid_functions(grid, count, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal((count, grid.n_interior))
