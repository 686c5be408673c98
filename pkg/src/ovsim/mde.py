"""Matrix-degrading-enzyme micro-dynamics on patches covering the tumour
boundary, and the boundary movement it induces."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import EmptyTumourError, Grid, Node, TumourRegion, boundary_walk, expand_region, outward_normal

logger = logging.getLogger(__name__)

_TIE = 1e-9


class MDESolveError(RuntimeError):
    pass


@dataclass
class BoundaryMicroDomain:
    """Square patch of side ``eps`` centred on boundary node ``node``.

    Micro nodes are vertex-centred: ``P`` per side including the patch edges,
    so the centre is a micro node when ``P`` is odd.
    """

    node: Node
    center: np.ndarray
    eps: float
    P: int
    inside: np.ndarray  # (P, P) bool, micro node lies in the tumour

    @property
    def spacing(self) -> float:
        return self.eps / (self.P - 1)

    def offsets(self) -> np.ndarray:
        return (np.arange(self.P) / (self.P - 1) - 0.5) * self.eps

    def positions(self) -> tuple[np.ndarray, np.ndarray]:
        d = self.offsets()
        return np.meshgrid(self.center[0] + d, self.center[1] + d, indexing="ij")

    def weights(self) -> np.ndarray:
        """Trapezoidal area weights of the micro nodes."""
        return trapezoid_weights(self.P, self.spacing)


@dataclass(frozen=True)
class BoundaryRelocation:
    direction: np.ndarray
    displacement: float
    active: bool
    outside_fraction: float = 0.0


def trapezoid_weights(P: int, dz: float) -> np.ndarray:
    w = np.ones(P)
    w[0] = w[-1] = 0.5
    return np.outer(w, w) * dz * dz


def _member_at(mask: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Whether points with grid coordinates ``(u, v)`` belong to the tumour.

    A point belongs if its nearest node is a member; on exact ties either
    nearest node counts, keeping the test symmetric under lattice reflections.
    """
    N0, N1 = mask.shape

    def candidates(w):
        lo = np.floor(w)
        frac = w - lo
        a = np.where(frac > 0.5 + _TIE, lo + 1, lo)
        b = np.where(frac < 0.5 - _TIE, lo, lo + 1)
        return a.astype(int), b.astype(int)

    out = np.zeros(u.shape, bool)
    ua, ub = candidates(u)
    va, vb = candidates(v)
    for iu in (ua, ub):
        for iv in (va, vb):
            ok = (iu >= 0) & (iu < N0) & (iv >= 0) & (iv < N1)
            hit = np.zeros(u.shape, bool)
            hit[ok] = mask[iu[ok], iv[ok]]
            out |= hit
    return out


def cover_boundary(region: TumourRegion, grid: Grid, eps: float, P: int) -> list[BoundaryMicroDomain]:
    """One patch per boundary node, ordered along the boundary walk.

    Neighbouring patches along the walk are one grid step apart, so they
    overlap by ``eps - h`` (half a patch when ``eps = 2h``).
    """
    if not region.boundary:
        raise EmptyTumourError("empty tumour boundary")
    if P < 3:
        raise ValueError("a boundary patch needs P >= 3 micro nodes per side")
    h = grid.h
    patches = []
    d = (np.arange(P) / (P - 1) - 0.5) * eps
    for node in boundary_walk(region):
        center = np.array(node, dtype=float) * h
        U, V = np.meshgrid(center[0] + d, center[1] + d, indexing="ij")
        inside = _member_at(region.mask, U / h, V / h)
        patches.append(BoundaryMicroDomain(node, center, eps, P, inside))
    return patches


def mde_source(dom: BoundaryMicroDomain, c: np.ndarray, i: np.ndarray, region: TumourRegion,
               grid: Grid, gamma_c: float, gamma_i: float, rho_ball: float) -> np.ndarray:
    """Cell-secreted MDE source on the patch.

    Inside the tumour: mean of ``gamma_c c + gamma_i i`` over the member nodes
    within sup-norm distance ``rho_ball``; outside: zero.
    """
    if rho_ball <= 0:
        raise ValueError("rho_ball must be positive")
    h = grid.h
    reach = int(math.ceil((dom.eps / 2 + rho_ball) / h)) + 1
    ci, cj = dom.node
    lo_i, hi_i = max(ci - reach, 0), min(ci + reach, grid.N - 1)
    lo_j, hi_j = max(cj - reach, 0), min(cj + reach, grid.N - 1)
    I, J = np.meshgrid(np.arange(lo_i, hi_i + 1), np.arange(lo_j, hi_j + 1), indexing="ij")
    I, J = I.ravel(), J.ravel()
    keep = region.mask[I, J]
    I, J = I[keep], J[keep]
    vals = gamma_c * c[I, J] + gamma_i * i[I, J]
    Z1, Z2 = dom.positions()
    dist = np.maximum(np.abs(Z1.ravel()[:, None] - I[None, :] * h),
                      np.abs(Z2.ravel()[:, None] - J[None, :] * h))
    near = dist <= rho_ball * (1 + _TIE)
    count = near.sum(axis=1)
    total = near.astype(float) @ vals
    G = np.where(count > 0, total / np.maximum(count, 1), 0.0).reshape(dom.P, dom.P)
    return np.where(dom.inside, G, 0.0)


def neumann_laplacian(P: int, dz: float) -> sp.csr_matrix:
    """5-point Laplacian on a vertex-centred ``P x P`` grid with mirrored
    ghost nodes (zero normal flux)."""
    main = -2.0 * np.ones(P)
    off = np.ones(P - 1)
    upper = off.copy()
    lower = off.copy()
    upper[0] = 2.0
    lower[-1] = 2.0
    T = sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / (dz * dz)
    I = sp.identity(P, format="csr")
    return (sp.kron(T, I) + sp.kron(I, T)).tocsc()


@lru_cache(maxsize=16)
def _factor(P: int, dz: float, D_m: float, dtau: float):
    A = sp.identity(P * P, format="csc") - dtau * D_m * neumann_laplacian(P, dz)
    try:
        return spla.splu(A.tocsc())
    except RuntimeError as exc:  # singular factor
        raise MDESolveError(f"backward-Euler matrix factorisation failed: {exc}") from exc


def solve_mde(source: np.ndarray, P: int, dz: float, D_m: float, dt_stage: float,
              steps: int = 20, m0: np.ndarray | None = None) -> np.ndarray:
    """Backward-Euler march of ``m_t = D_m lap(m) + G`` from zero.

    ``source`` is ``(P, P)`` or a stack ``(n, P, P)`` solved together.
    """
    G = np.asarray(source, dtype=float)
    single = G.ndim == 2
    G = G.reshape(-1, P * P).T
    m = np.zeros_like(G) if m0 is None else np.asarray(m0, float).reshape(-1, P * P).T.copy()
    if dt_stage == 0 or steps == 0:
        out = m.T.reshape(-1, P, P)
        return out[0] if single else out
    dtau = dt_stage / steps
    lu = _factor(P, float(dz), float(D_m), float(dtau))
    for _ in range(steps):
        m = lu.solve(m + dtau * G)
        if not np.isfinite(m).all():
            raise MDESolveError("non-finite MDE density after linear solve")
    np.maximum(m, 0.0, out=m)
    out = m.T.reshape(-1, P, P)
    return out[0] if single else out


def boundary_relocation(dom: BoundaryMicroDomain, m_final: np.ndarray, activation_threshold: float = 0.2,
                        kappa: float = 0.5) -> BoundaryRelocation:
    """Boundary movement from the MDE distribution that crossed the interface.

    Direction: unit first moment of the outside mass about the patch centre.
    Displacement: ``kappa * eps * outside_fraction``, active only when the
    outside fraction exceeds ``activation_threshold``.
    """
    w = dom.weights()
    mass = w * m_final
    total = float(mass.sum())
    outside = ~dom.inside
    out_mass = float(mass[outside].sum())
    idle = BoundaryRelocation(np.zeros(2), 0.0, False, 0.0)
    if total <= 0 or out_mass <= 0:
        return idle
    d = dom.offsets()
    D1, D2 = np.meshgrid(d, d, indexing="ij")
    mom = np.array([(mass * D1)[outside].sum(), (mass * D2)[outside].sum()])
    norm = math.hypot(mom[0], mom[1])
    frac = out_mass / total
    if norm == 0:
        return BoundaryRelocation(np.zeros(2), 0.0, False, frac)
    direction = mom / norm
    active = frac > activation_threshold
    disp = kappa * frac * dom.eps if active else 0.0
    return BoundaryRelocation(direction, min(disp, dom.eps), active, frac)


def _points_outward(region: TumourRegion, node: Node, direction: np.ndarray) -> bool:
    return float(outward_normal(region.mask, node) @ direction) > 0


def swept_nodes(region: TumourRegion, grid: Grid, node: Node, advance: np.ndarray) -> list[Node]:
    """Non-member nodes closer than ``h/2`` to the segment from ``node`` along
    the vector ``advance``."""
    length = math.hypot(advance[0], advance[1])
    if length <= 0:
        return []
    h = grid.h
    a = np.array(node, dtype=float) * h
    reach = int(math.ceil(length / h)) + 1
    ci, cj = node
    I, J = np.meshgrid(np.arange(max(ci - reach, 0), min(ci + reach, grid.N - 1) + 1),
                       np.arange(max(cj - reach, 0), min(cj + reach, grid.N - 1) + 1), indexing="ij")
    X1, X2 = I * h - a[0], J * h - a[1]
    t = np.clip((X1 * advance[0] + X2 * advance[1]) / (length * length), 0.0, 1.0)
    dist = np.hypot(X1 - t * advance[0], X2 - t * advance[1])
    hit = (dist < 0.5 * h * (1 - _TIE)) & ~region.mask[I, J]
    return [(int(p), int(q)) for p, q in zip(I[hit], J[hit])]


def expand_tumour(region: TumourRegion, grid: Grid, patches, relocations,
                  front: np.ndarray | None = None) -> TumourRegion:
    """Move the interface by every active outward relocation.

    ``front`` (shape ``(2, N, N)``), when given, accumulates the sub-grid
    interface advance per boundary node across calls; a node's advance is
    consumed once it sweeps new nodes into the tumour. Without it each
    relocation acts alone. Inward relocations are ignored.
    """
    new: list[Node] = []
    for dom, rel in zip(patches, relocations):
        if not rel.active or rel.displacement <= 0:
            continue
        if not _points_outward(region, dom.node, rel.direction):
            continue
        step = rel.displacement * rel.direction
        if front is None:
            new.extend(swept_nodes(region, grid, dom.node, step))
            continue
        i, j = dom.node
        front[:, i, j] += step
        hit = swept_nodes(region, grid, dom.node, front[:, i, j])
        if hit:
            front[:, i, j] = 0.0
            new.extend(hit)
    if not new:
        return region
    return expand_region(region, dict.fromkeys(new))


@dataclass
class MDEReport:
    patches: int = 0
    active: int = 0
    added_nodes: int = 0


def mde_stage(region: TumourRegion, grid: Grid, c: np.ndarray, i: np.ndarray, *, gamma_c: float,
              gamma_i: float, D_m: float, dt_stage: float, eps: float, P: int, rho_ball: float,
              steps: int, activation_threshold: float, kappa: float,
              front: np.ndarray | None = None) -> tuple[TumourRegion, MDEReport]:
    """Cover the boundary, solve the MDE problem on each patch and expand."""
    patches = cover_boundary(region, grid, eps, P)
    sources = np.stack([mde_source(p, c, i, region, grid, gamma_c, gamma_i, rho_ball) for p in patches])
    m = solve_mde(sources, P, eps / (P - 1), D_m, dt_stage, steps)
    rels = [boundary_relocation(p, mk, activation_threshold, kappa) for p, mk in zip(patches, m)]
    new_region = expand_tumour(region, grid, patches, rels, front)
    report = MDEReport(len(patches), sum(r.active for r in rels), new_region.area - region.area)
    return new_region, report
