"""Initial tumour, virus and ECM distributions."""

from __future__ import annotations

import numpy as np

from .fibre import FibreField
from .grid import Grid, TumourRegion
from .macro import StateVector

C0_SHIFT = 3.0625
PHI_SHIFT = 1.6625
VIRUS_CUTOFF = 5e-5
ECM_FREQUENCY = 7 * np.pi


def bump(r2: np.ndarray) -> np.ndarray:
    """Unnormalised mollifier profile ``exp(1/(|x|^2 - 1))`` on the unit ball."""
    out = np.zeros_like(r2, dtype=float)
    inside = r2 < 1
    out[inside] = np.exp(1.0 / (r2[inside] - 1.0))
    return out


def mollifier_samples(gamma: float, n: int = 9) -> tuple[np.ndarray, np.ndarray]:
    """Sub-grid offsets covering ``[-gamma, gamma]^2`` and normalised weights."""
    s = (np.arange(n) - (n - 1) / 2) * (2 * gamma / (n - 1))
    S1, S2 = np.meshgrid(s, s, indexing="ij")
    w = bump((S1**2 + S2**2) / gamma**2)
    keep = w > 0
    return np.stack([S1[keep], S2[keep]], axis=1), w[keep] / w[keep].sum()


def mollify(indicator, X1: np.ndarray, X2: np.ndarray, gamma: float, n: int = 9) -> np.ndarray:
    """Discrete convolution of an indicator function with the normalised
    mollifier, evaluated at the points ``(X1, X2)``."""
    offsets, weights = mollifier_samples(gamma, n)
    out = np.zeros_like(X1, dtype=float)
    for (d1, d2), w in zip(offsets, weights):
        out += w * indicator(X1 + d1, X2 + d2)
    return out


def centre(grid: Grid) -> float:
    """Domain midpoint; ``(2, 2)`` on the default ``[0, 4]^2``."""
    return grid.L / 2


def _r2(X1, X2, x0: float = 2.0):
    return (X1 - x0) ** 2 + (X2 - x0) ** 2


def initial_cells_profile(X1, X2, h: float, x0: float = 2.0) -> np.ndarray:
    """The Gaussian-like aggregation before the cutoff is applied."""
    return 0.5 * (np.exp(-_r2(X1, X2, x0) / (2 * h)) - np.exp(-C0_SHIFT))


def initial_cells(grid: Grid, gamma: float | None = None) -> np.ndarray:
    h = grid.h
    gamma = h / 4 if gamma is None else gamma
    x0 = centre(grid)
    X1, X2 = grid.mesh()
    radius = 0.5 - gamma
    cutoff = mollify(lambda a, b: (_r2(a, b, x0) <= radius**2).astype(float), X1, X2, gamma)
    return np.maximum(initial_cells_profile(X1, X2, h, x0), 0.0) * cutoff


def ecm_pattern(X1, X2) -> np.ndarray:
    z1 = (X1 + 1.5) / 3
    z2 = (X2 + 1.5) / 3
    return 0.5 + 0.25 * np.sin(ECM_FREQUENCY * z1 * z2) ** 3 * np.sin(ECM_FREQUENCY * z2 / z1)


def initial_ecm(grid: Grid, c0: np.ndarray) -> np.ndarray:
    """Total ECM ``e0 = min(pattern, 1 - c0) / 2``."""
    X1, X2 = grid.mesh()
    return 0.5 * np.minimum(ecm_pattern(X1, X2), 1.0 - c0)


def virus_profile(X1, X2, h: float, x0: float = 2.0) -> np.ndarray:
    return 0.125 * (np.exp(-_r2(X1, X2, x0) / (2 * h)) - np.exp(-PHI_SHIFT))


def initial_virus(grid: Grid, gamma: float | None = None) -> np.ndarray:
    """Single central injection, cut off where the profile drops below
    ``5e-5`` and smoothed at the cutoff frontier by one mollification."""
    h = grid.h
    gamma = h / 4 if gamma is None else gamma
    x0 = centre(grid)
    X1, X2 = grid.mesh()
    phi = virus_profile(X1, X2, h, x0)
    support = phi > VIRUS_CUTOFF
    smooth = mollify(lambda a, b: (virus_profile(a, b, h, x0) > VIRUS_CUTOFF).astype(float), X1, X2, gamma)
    return np.where(support, phi * smooth, 0.0)


def init_state(grid: Grid, R_F: float, M: int, f_max: float | None = None,
               f_max_factor: float = 2.0, gamma: float | None = None):
    """Initial ``(state, region, fibres)``.

    The ECM pattern is split into fibre and non-fibre phases in the ratio
    ``R_F : 1 - R_F``; the fibre phase lives on the micro-domains.
    """
    c0 = initial_cells(grid, gamma)
    e0 = initial_ecm(grid, c0)
    E0 = (1.0 - R_F) * e0
    fibres = FibreField.from_macro(R_F * e0, M, grid.h, f_max=f_max, f_max_factor=f_max_factor)
    state = StateVector(c=c0, i=np.zeros(grid.shape), E=E0, v=initial_virus(grid, gamma))
    region = TumourRegion.from_mask(c0 > 0)
    return state, region, fibres
