"""Nonlocal cell adhesion fluxes evaluated by direct summation over a
precomputed sensing-ball stencil."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np


class StencilError(ValueError):
    pass


@dataclass(frozen=True)
class AdhesionStrengths:
    S_cc: float = 0.1
    S_ci: float = 0.0
    S_ic: float = 0.0
    S_ii: float = 0.1
    S_ce: float = 0.5
    S_ie: float = 0.5
    S_cF: float = 0.2
    S_iF: float = 0.2

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value >= 0:
                raise ValueError(f"adhesion strength {name} must be >= 0, got {value}")

    def for_population(self, which: str) -> tuple[float, float, float, float]:
        """(self-c, self-i, ECM, fibre) strengths for ``which``."""
        if which == "uninfected":
            return self.S_cc, self.S_ci, self.S_ce, self.S_cF
        if which == "infected":
            return self.S_ic, self.S_ii, self.S_ie, self.S_iF
        raise ValueError(f"unknown population {which!r}")

    def scaled(self, factor: float) -> "AdhesionStrengths":
        return AdhesionStrengths(**{k: v * factor for k, v in vars(self).items()})


def adhesion_strength(E, S_max: float):
    """Calcium-dependent junction strength ``S_max * exp(1 - 1/(1-(1-E)^2))``.

    ``E`` is clamped to [0, 1]; the limit at ``E = 0`` is 0.
    """
    E = np.clip(np.asarray(E, dtype=float), 0.0, 1.0)
    denom = 1.0 - (1.0 - E) ** 2
    with np.errstate(divide="ignore"):
        expo = np.where(denom > 0, 1.0 - 1.0 / np.where(denom > 0, denom, 1.0), -np.inf)
    out = S_max * np.exp(expo)
    return float(out) if out.ndim == 0 else out


def kernel(r, R: float):
    """Radial adhesion kernel ``3/(2 pi R^2) (1 - r/(2R))``."""
    return 3.0 / (2.0 * math.pi * R * R) * (1.0 - np.asarray(r, dtype=float) / (2.0 * R))


@dataclass(frozen=True)
class SensingStencil:
    """Grid offsets inside the closed ball ``B(0, R)`` with kernel-weighted
    quadrature weights.

    ``weights[k]`` is ``K(|y_k|) * w_k``; ``w_k`` is the cell area ``h^2``
    rescaled by a single factor so the weights sum to one (the continuum
    integral of ``K`` over the ball).
    """

    R: float
    h: float
    offsets: np.ndarray  # (n, 2) integer lattice offsets (p, q)
    vectors: np.ndarray  # (n, 2) physical offsets y_k
    weights: np.ndarray  # (n,)
    normals: np.ndarray  # (n, 2) unit radial vectors, (0, 0) at the centre
    area_weight: float

    @property
    def radius_nodes(self) -> int:
        return int(np.abs(self.offsets).max())

    @property
    def prefactor(self) -> float:
        return 1.0 / self.R

    def midpoint_sum(self) -> float:
        """Uncorrected midpoint-rule sum of ``K * h^2`` over the offsets."""
        return float(kernel(np.hypot(*self.vectors.T), self.R).sum() * self.h**2)


def build_sensing_stencil(R: float, h: float) -> SensingStencil:
    if not (R > 0 and h > 0):
        raise StencilError(f"sensing radius and spacing must be positive (R={R}, h={h})")
    if R < h * (1 - 1e-12):
        raise StencilError(f"sensing radius under-resolved (R={R} < h={h})")
    m = int(math.floor(R / h + 1e-9))
    p, q = np.meshgrid(np.arange(-m, m + 1), np.arange(-m, m + 1), indexing="ij")
    p, q = p.ravel(), q.ravel()
    rr = np.hypot(p, q) * h
    keep = rr <= R * (1 + 1e-12)
    p, q, rr = p[keep], q[keep], rr[keep]
    offsets = np.stack([p, q], axis=1)
    vectors = offsets * h
    normals = np.zeros_like(vectors, dtype=float)
    nz = rr > 0
    normals[nz] = vectors[nz] / rr[nz, None]
    K = kernel(rr, R)
    raw = K * h * h
    area = h * h / raw.sum()
    weights = K * area
    for arr in (offsets, vectors, weights, normals):
        arr.setflags(write=False)
    return SensingStencil(R=R, h=h, offsets=offsets, vectors=vectors, weights=weights,
                          normals=normals, area_weight=area)


def fibre_biased_direction(y, theta) -> np.ndarray:
    """Unit vector along ``y + theta``; ``(0, 0)`` for ``y = 0`` or a
    vanishing sum."""
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if not np.any(y):
        return np.zeros(2)
    s = y + theta
    n = math.hypot(s[0], s[1])
    if n == 0:
        return np.zeros(2)
    return s / n


def _pad(a: np.ndarray, m: int) -> np.ndarray:
    return np.pad(a, m, mode="constant", constant_values=0.0)


def _flux_rows(lo, hi, m, stencil, g_p, fib_p, th1_p, th2_p, N1):
    """Sum the stencil for rows ``lo:hi``; fixed per-node summation order."""
    ax = np.zeros((hi - lo, N1))
    ay = np.zeros((hi - lo, N1))
    for (p, q), (y1, y2), wk, (n1, n2) in zip(stencil.offsets, stencil.vectors,
                                              stencil.weights, stencil.normals):
        rs = slice(lo + m + p, hi + m + p)
        cs = slice(m + q, m + q + N1)
        g = g_p[rs, cs]
        ax += wk * n1 * g
        ay += wk * n2 * g
        if p == 0 and q == 0:
            continue
        fib = fib_p[rs, cs]
        s1 = y1 + th1_p[rs, cs]
        s2 = y2 + th2_p[rs, cs]
        nrm = np.hypot(s1, s2)
        safe = np.where(nrm > 0, nrm, 1.0)
        coef = np.where(nrm > 0, wk * fib / safe, 0.0)
        ax += coef * s1
        ay += coef * s2
    return ax, ay


def eval_adhesion_flux(which: str, c: np.ndarray, i: np.ndarray, E: np.ndarray,
                       F: np.ndarray, theta: np.ndarray, mask: np.ndarray,
                       stencil: SensingStencil, S: AdhesionStrengths,
                       rho: np.ndarray, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Nonlocal adhesion velocity ``(A_x, A_y)`` at every tumour node.

    ``theta`` has shape ``(2, N, N)``; ``rho`` is the volume fraction. Samples
    outside the tumour mask or the grid contribute nothing. Values at
    non-member nodes are zero.
    """
    s_self_c, s_self_i, s_e, s_F = S.for_population(which)
    chi = mask.astype(float)
    gate = chi * np.maximum(1.0 - rho, 0.0)
    T = adhesion_strength(E, s_self_c) * c + adhesion_strength(E, s_self_i) * i
    g = gate * (T + s_e * E)
    fib = gate * (s_F * F)
    out_x = np.zeros(c.shape)
    out_y = np.zeros(c.shape)
    if not mask.any():
        return out_x, out_y
    # everything sampled or returned is zero off the mask, so the sum can be
    # restricted to the mask's bounding box without changing a single bit
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    box = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    m = stencil.radius_nodes
    g_p, fib_p = _pad(g[box], m), _pad(fib[box], m)
    th1_p, th2_p = _pad(theta[0][box], m), _pad(theta[1][box], m)
    N0 = rows[-1] - rows[0] + 1
    N1 = cols[-1] - cols[0] + 1
    threads = max(1, int(threads))
    if threads == 1 or N0 < 2 * threads:
        ax, ay = _flux_rows(0, N0, m, stencil, g_p, fib_p, th1_p, th2_p, N1)
    else:
        bounds = np.linspace(0, N0, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(
                lambda b: _flux_rows(b[0], b[1], m, stencil, g_p, fib_p, th1_p, th2_p, N1),
                zip(bounds[:-1], bounds[1:])))
        ax = np.concatenate([p[0] for p in parts], axis=0)
        ay = np.concatenate([p[1] for p in parts], axis=0)
    out_x[box] = ax
    out_y[box] = ay
    ax, ay = out_x, out_y
    scale = stencil.prefactor
    return ax * scale * chi, ay * scale * chi
