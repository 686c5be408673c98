import numpy as np
import pytest

from ovsim.adhesion import build_sensing_stencil
from ovsim.grid import TumourRegion, build_grid
from ovsim.macro import LOCAL, MacroContext, ParameterSet, StateVector

TRANSPORT_OFF = dict(D_c=0.0, D_i=0.0, D_v=0.0, eta_i=0.0, eta_v=0.0, S_cc=0.0, S_ci=0.0,
                     S_ic=0.0, S_ii=0.0, S_ce=0.0, S_ie=0.0, S_cF=0.0, S_iF=0.0)


def disc_mask(grid, radius, centre=None):
    X1, X2 = grid.mesh()
    c = grid.L / 2 if centre is None else centre
    return (X1 - c) ** 2 + (X2 - c) ** 2 <= radius**2


def make_context(grid, params, mask, mode=LOCAL, F=None, theta=None, threads=1):
    F = np.zeros(grid.shape) if F is None else F
    theta = np.zeros((2,) + grid.shape) if theta is None else theta
    # coarse transport-free grids need no sensing stencil
    stencil = build_sensing_stencil(params.R, grid.h) if params.R >= grid.h else None
    return MacroContext(grid, params, mode, stencil, TumourRegion.from_mask(mask), theta, F, threads)


def smooth_state(grid, mask, seed=0):
    """A smooth positive synthetic state with c, i supported on ``mask``."""
    rng = np.random.default_rng(seed)
    X1, X2 = grid.mesh()
    a = rng.uniform(1, 3, size=8)
    c = 0.3 + 0.1 * np.sin(a[0] * X1) * np.cos(a[1] * X2)
    i = 0.1 + 0.05 * np.cos(a[2] * X1 + a[3] * X2)
    E = 0.3 + 0.1 * np.sin(a[4] * X1 + a[5] * X2)
    v = 0.05 + 0.02 * np.cos(a[6] * X1) * np.sin(a[7] * X2)
    return StateVector(np.where(mask, c, 0.0), np.where(mask, i, 0.0), E, v)


@pytest.fixture
def small_grid():
    return build_grid(0.6875, 0.03125)  # 23 x 23


@pytest.fixture
def baseline():
    return ParameterSet()
