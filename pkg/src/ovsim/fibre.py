"""Micro-fibre mass distributions attached to macro nodes, the macro fibre
orientation they induce, and their flux-driven rearrangement.

The micro-domains of all macro nodes tile the tissue, so the whole fibre
phase is stored as one fine array of shape ``(N*M, N*M)``. Fine cell ``a``
along an axis belongs to macro node ``a // M`` and sits at offset
``((a % M) + 0.5) * h/M - h/2`` from that node.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


def micro_offsets(M: int, side: float) -> np.ndarray:
    """Midpoint offsets of the ``M`` micro cells relative to the anchor."""
    return (np.arange(M) + 0.5) * (side / M) - side / 2


@dataclass
class MicroFibreDomain:
    """A single ``M x M`` micro-domain of side ``side`` centred on ``anchor``."""

    f: np.ndarray
    anchor: tuple[float, float] = (0.0, 0.0)
    side: float = 1.0
    f_max: float = 1.0

    @property
    def M(self) -> int:
        return self.f.shape[0]

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        d = micro_offsets(self.M, self.side)
        z1, z2 = np.meshgrid(self.anchor[0] + d, self.anchor[1] + d, indexing="ij")
        return z1, z2


def barycentral_orientation(dom: MicroFibreDomain) -> np.ndarray:
    """Mass-weighted mean of ``z - x`` over the domain; zero for no mass."""
    total = dom.f.sum()
    if total <= 0:
        return np.zeros(2)
    d = micro_offsets(dom.M, dom.side)
    out = np.array([(dom.f.sum(axis=1) * d).sum() / total,
                    (dom.f.sum(axis=0) * d).sum() / total])
    return out if np.hypot(*out) > 1e-12 * dom.side else np.zeros(2)


def macro_fibre_orientation(dom: MicroFibreDomain) -> tuple[np.ndarray, float]:
    """``(theta_f, F)``: mean micro mass along the unit barycentral direction."""
    theta, F = _orientation(dom.f[None, :, None, :], dom.side)
    return theta[:, 0, 0], float(F[0, 0])


def _orientation(f4: np.ndarray, side: float) -> tuple[np.ndarray, np.ndarray]:
    """Orientation for micro masses reshaped to ``(N0, M, N1, M)``."""
    M = f4.shape[1]
    d = micro_offsets(M, side)
    total = f4.sum(axis=(1, 3))
    m1 = np.einsum("akbl,k->ab", f4, d)
    m2 = np.einsum("akbl,l->ab", f4, d)
    norm = np.hypot(m1, m2)
    # a symmetric distribution leaves only round-off in the moment
    ok = (total > 0) & (norm > 1e-12 * total * side)
    scale = np.where(ok, total / (M * M) / np.where(ok, norm, 1.0), 0.0)
    theta = np.stack([m1 * scale, m2 * scale])
    F = np.hypot(theta[0], theta[1])
    return theta, F


def rearrangement_vector(total_flux, c_total, theta, F) -> np.ndarray:
    """``omega * flux + (1 - omega) * theta`` with
    ``omega = c_total / (c_total + F)``; zero where both weights vanish.

    Works pointwise on scalars/2-vectors or on node arrays (vectors stacked
    on the leading axis).
    """
    total_flux = np.asarray(total_flux, dtype=float)
    theta = np.asarray(theta, dtype=float)
    c_total = np.asarray(c_total, dtype=float)
    F = np.asarray(F, dtype=float)
    denom = c_total + F
    live = denom > 0
    omega = np.where(live, c_total / np.where(live, denom, 1.0), 0.0)
    return np.where(live, omega * total_flux + (1.0 - omega) * theta, 0.0)


def initial_micro_pattern(M: int) -> np.ndarray:
    """Two perpendicular unit strips placed off the domain centre."""
    P = np.zeros((M, M))
    P[M // 4, :] = 1.0
    P[:, M // 3] = 1.0
    return P


@dataclass
class RelocationReport:
    moved_mass: float = 0.0
    truncated: int = 0


class FibreField:
    """All micro-fibre domains on a ``N x N`` macro grid."""

    def __init__(self, f: np.ndarray, N: int, M: int, side: float, f_max: float):
        if f.shape != (N * M, N * M):
            raise ValueError(f"micro array shape {f.shape} does not match N={N}, M={M}")
        if f_max <= 0:
            raise ValueError("f_max must be positive")
        self.f = np.asarray(f, dtype=float)
        self.N, self.M, self.side, self.f_max = N, M, float(side), float(f_max)
        self._refresh()

    @classmethod
    def from_macro(cls, F0: np.ndarray, M: int, side: float, f_max: float | None = None,
                   f_max_factor: float = 2.0) -> "FibreField":
        """Repeat the strip pattern on every node, scaled so the derived
        ``F`` equals ``F0``."""
        N = F0.shape[0]
        P = initial_micro_pattern(M)
        unit = P / P.mean()
        f = np.kron(F0, unit)
        if f_max is None:
            peak = float(f.max())
            f_max = f_max_factor * peak if peak > 0 else 1.0
        return cls(f, N, M, side, f_max)

    def blocks(self) -> np.ndarray:
        return self.f.reshape(self.N, self.M, self.N, self.M)

    def domain(self, node: tuple[int, int], origin_spacing: float | None = None) -> MicroFibreDomain:
        i, j = node
        M = self.M
        sp = self.side if origin_spacing is None else origin_spacing
        return MicroFibreDomain(self.f[i * M:(i + 1) * M, j * M:(j + 1) * M].copy(),
                                anchor=(i * sp, j * sp), side=self.side, f_max=self.f_max)

    def _refresh(self):
        self.theta, self.F = _orientation(self.blocks(), self.side)

    @property
    def total_mass(self) -> float:
        return float(self.f.sum())

    def degrade(self, c: np.ndarray, i: np.ndarray, alpha_cF: float, alpha_iF: float, dt: float):
        """Exact exponential decay ``dF/dt = -F (alpha_cF c + alpha_iF i)``
        applied to every micro mass of each node."""
        if dt < 0:
            raise ValueError("dt must be >= 0")
        rate = alpha_cF * c + alpha_iF * i
        if dt == 0 or not rate.any():
            return
        factor = np.exp(-rate * dt)
        self.f = (self.blocks() * factor[:, None, :, None]).reshape(self.f.shape)
        self._refresh()

    def relocate(self, r: np.ndarray) -> RelocationReport:
        """Move micro masses along ``x_dir(z) + r`` for every node.

        Transfers are computed against the pre-step distribution. Incoming
        transfers to a cell are scaled down if they would exceed its spare
        capacity; the unsent part stays at the source, so mass is conserved
        and ``0 <= f <= f_max`` holds.
        """
        N, M, side, fmax = self.N, self.M, self.side, self.f_max
        n_fine = N * M
        delta = side / M
        f = self.f
        d = micro_offsets(M, side)
        # per fine cell: local index, offset from anchor and anchor index
        k = np.arange(n_fine) % M
        node = np.arange(n_fine) // M
        xd = d[k]
        r1 = np.repeat(np.repeat(r[0], M, axis=0), M, axis=1)
        r2 = np.repeat(np.repeat(r[1], M, axis=0), M, axis=1)
        X1 = xd[:, None]
        X2 = xd[None, :]
        live = f > 0
        num = f * (fmax - f)
        den = f / fmax + np.hypot(r1 - X1, r2 - X2)
        gain = np.where(live, num / np.where(live, den, 1.0), 0.0)
        nu1 = (X1 + r1) * gain
        nu2 = (X2 + r2) * gain
        # target fine cell, truncated to the 8-neighbour domain ring and the grid
        t1 = node[:, None] * M + np.floor(k[:, None] + 0.5 + nu1 / delta).astype(np.int64)
        t2 = node[None, :] * M + np.floor(k[None, :] + 0.5 + nu2 / delta).astype(np.int64)
        lo1 = np.maximum((node[:, None] - 1) * M, 0)
        hi1 = np.minimum((node[:, None] + 2) * M - 1, n_fine - 1)
        lo2 = np.maximum((node[None, :] - 1) * M, 0)
        hi2 = np.minimum((node[None, :] + 2) * M - 1, n_fine - 1)
        c1 = np.clip(t1, lo1, hi1)
        c2 = np.clip(t2, lo2, hi2)
        truncated = int(np.count_nonzero(live & ((c1 != t1) | (c2 != t2))))
        if truncated:
            logger.info("fibre relocation: %d targets truncated to the neighbour ring", truncated)
        src = np.arange(n_fine * n_fine).reshape(n_fine, n_fine)
        tgt = c1 * n_fine + c2
        flat_f = f.ravel()
        p_move = np.maximum(0.0, (fmax - flat_f[tgt]) / fmax)
        amount = np.where(live & (tgt != src), f * p_move, 0.0)
        sel = amount > 0
        a = amount[sel]
        t = tgt[sel]
        s = src[sel]
        if a.size == 0:
            return RelocationReport(0.0, truncated)
        incoming = np.bincount(t, weights=a, minlength=flat_f.size)
        room = np.maximum(fmax - flat_f, 0.0)
        has_in = incoming > 0
        scale = np.ones_like(flat_f)
        scale[has_in] = np.minimum(1.0, room[has_in] / incoming[has_in])
        a = a * scale[t]
        new = flat_f.copy()
        new -= np.bincount(s, weights=a, minlength=flat_f.size)
        new += np.bincount(t, weights=a, minlength=flat_f.size)
        np.clip(new, 0.0, fmax, out=new)
        self.f = new.reshape(f.shape)
        self._refresh()
        return RelocationReport(float(a.sum()), truncated)

    def export_rows(self, grid_h: float) -> np.ndarray:
        """Per-node ``(x1, x2, theta1, theta2, F)`` rows in row-major order."""
        N = self.N
        x = np.arange(N) * grid_h
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        return np.column_stack([X1.ravel(), X2.ravel(), self.theta[0].ravel(),
                                self.theta[1].ravel(), self.F.ravel()])


def relocate_microfibres(fibres: FibreField, r: np.ndarray) -> RelocationReport:
    return fibres.relocate(r)


def apply_fibre_degradation(fibres: FibreField, c, i, alpha_cF: float, alpha_iF: float, dt: float):
    fibres.degrade(np.asarray(c, float), np.asarray(i, float), alpha_cF, alpha_iF, dt)
    return fibres


def write_vector_field(path, rows: np.ndarray):
    """Delimiter-separated text: one ``x1,x2,theta1,theta2,F`` row per node."""
    np.savetxt(path, rows, delimiter=",", header="x1,x2,theta1,theta2,F", comments="",
               fmt="%.17g")


def read_vector_field(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
