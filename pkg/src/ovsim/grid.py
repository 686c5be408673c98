"""Macro grid, tumour region bookkeeping and the finite-difference stencils
shared by the macro and micro solvers.

Fields are plain ``numpy`` arrays of shape ``(N, N)`` indexed ``[i, j]`` with
node coordinates ``(i*h, j*h)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

Node = tuple[int, int]

# 4-neighbour offsets, fixed order
_NEIGH4 = ((1, 0), (0, 1), (-1, 0), (0, -1))
# 8-neighbour offsets in counter-clockwise order starting east
_NEIGH8 = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))


class GridError(ValueError):
    pass


class EmptyTumourError(GridError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform square grid on ``[0, L] x [0, L]``."""

    L: float
    h: float
    N: int

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N, self.N)

    @property
    def coords(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.coords
        return np.meshgrid(x, x, indexing="ij")

    def contains(self, node: Node) -> bool:
        i, j = node
        return 0 <= i < self.N and 0 <= j < self.N

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)


def build_grid(L: float = 4.0, h: float = 0.03125) -> Grid:
    L = float(L)
    h = float(h)
    if not (math.isfinite(L) and math.isfinite(h)):
        raise GridError(f"grid extent and spacing must be finite (L={L}, h={h})")
    if L <= 0 or h <= 0:
        raise GridError(f"grid extent and spacing must be positive (L={L}, h={h})")
    if h >= L:
        raise GridError(f"spacing h={h} must be smaller than extent L={L}")
    # guard floor() against representation error, e.g. 4/0.1
    N = int(math.floor(L / h + 1e-9)) + 1
    if N < 3:
        raise GridError(f"grid needs at least 3 nodes per axis, got {N}")
    return Grid(L=L, h=h, N=N)


@dataclass(frozen=True)
class TumourRegion:
    """Node membership mask of the tumour plus its boundary nodes.

    ``boundary`` is in row-major scan order.
    """

    mask: np.ndarray
    boundary: tuple[Node, ...] = field(default=())

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "TumourRegion":
        mask = np.asarray(mask, dtype=bool).copy()
        mask.setflags(write=False)
        return cls(mask=mask, boundary=extract_boundary(mask))

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def boundary_mask(self) -> np.ndarray:
        out = np.zeros(self.mask.shape, dtype=bool)
        for i, j in self.boundary:
            out[i, j] = True
        return out


def _boundary_mask(mask: np.ndarray) -> np.ndarray:
    padded = np.pad(mask, 1, constant_values=False)
    inner = (
        padded[2:, 1:-1] & padded[:-2, 1:-1] & padded[1:-1, 2:] & padded[1:-1, :-2]
    )
    return mask & ~inner


def extract_boundary(region: TumourRegion | np.ndarray) -> tuple[Node, ...]:
    """Members with at least one non-member 4-neighbour (off-grid counts as
    non-member), in row-major order."""
    mask = region.mask if isinstance(region, TumourRegion) else np.asarray(region, bool)
    if not mask.any():
        raise EmptyTumourError("empty tumour")
    ii, jj = np.nonzero(_boundary_mask(mask))
    return tuple((int(i), int(j)) for i, j in zip(ii, jj))


def boundary_walk(region: TumourRegion) -> list[Node]:
    """Order boundary nodes by walking between 8-adjacent boundary nodes.

    Starts from the first row-major node and repeatedly steps to the first
    unvisited boundary neighbour in counter-clockwise order; when stuck it
    restarts from the next unvisited node in row-major order.
    """
    remaining = set(region.boundary)
    order: list[Node] = []
    for start in region.boundary:
        if start not in remaining:
            continue
        node = start
        while True:
            order.append(node)
            remaining.discard(node)
            for di, dj in _NEIGH8:
                nxt = (node[0] + di, node[1] + dj)
                if nxt in remaining:
                    node = nxt
                    break
            else:
                break
    return order


def expand_region(region: TumourRegion, new_nodes: Iterable[Node]) -> TumourRegion:
    """Union of the mask with ``new_nodes``; the mask never shrinks."""
    new_nodes = list(new_nodes)
    N0, N1 = region.mask.shape
    for i, j in new_nodes:
        if not (0 <= i < N0 and 0 <= j < N1):
            raise GridError(f"node {(i, j)} lies outside the {N0}x{N1} grid")
    if not new_nodes:
        return region
    mask = region.mask.copy()
    idx = np.asarray(new_nodes, dtype=int)
    mask[idx[:, 0], idx[:, 1]] = True
    if np.array_equal(mask, region.mask):
        return region
    return TumourRegion.from_mask(mask)


def outward_normal(mask: np.ndarray, node: Node) -> np.ndarray:
    """Sum of unit vectors toward non-member 4-neighbours of ``node``."""
    n = np.zeros(2)
    N0, N1 = mask.shape
    i, j = node
    for di, dj in _NEIGH4:
        a, b = i + di, j + dj
        if not (0 <= a < N0 and 0 <= b < N1) or not mask[a, b]:
            n += (di, dj)
    return n


# ---------------------------------------------------------------------------
# stencils


def face_open(mask: np.ndarray | None, shape: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Open/closed flags for the interior faces along each axis.

    Face ``[i, j]`` of axis 0 joins nodes ``(i, j)`` and ``(i+1, j)``. A face is
    open only if both adjacent nodes are members; ``mask=None`` opens all.
    """
    if mask is None:
        return (np.ones((shape[0] - 1, shape[1]), bool), np.ones((shape[0], shape[1] - 1), bool))
    return (mask[1:, :] & mask[:-1, :], mask[:, 1:] & mask[:, :-1])


def _face_div(qx: np.ndarray, qy: np.ndarray, h: float) -> np.ndarray:
    """Divergence of a face-centred vector field; the outer frame is closed."""
    div = np.zeros((qx.shape[0] + 1, qy.shape[1] + 1))
    div[:-1, :] += qx
    div[1:, :] -= qx
    div[:, :-1] += qy
    div[:, 1:] -= qy
    return div / h


def diffusion(u: np.ndarray, D: float, h: float, faces=None) -> np.ndarray:
    """Conservative ``div(D grad u)`` with zero flux across closed faces."""
    if faces is None:
        faces = face_open(None, u.shape)
    ox, oy = faces
    qx = np.where(ox, D * (u[1:, :] - u[:-1, :]) / h, 0.0)
    qy = np.where(oy, D * (u[:, 1:] - u[:, :-1]) / h, 0.0)
    return _face_div(qx, qy, h)


def laplacian(u: np.ndarray, h: float, faces=None) -> np.ndarray:
    return diffusion(u, 1.0, h, faces)


def face_velocity(ax: np.ndarray, ay: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return 0.5 * (ax[1:, :] + ax[:-1, :]), 0.5 * (ay[:, 1:] + ay[:, :-1])


def upwind_advection(u: np.ndarray, ax: np.ndarray, ay: np.ndarray, h: float, faces=None) -> np.ndarray:
    """Conservative first-order upwind ``div(u a)`` for a node-centred velocity.

    Face velocities are the average of the two adjacent node velocities.
    """
    if faces is None:
        faces = face_open(None, u.shape)
    ox, oy = faces
    vx, vy = face_velocity(ax, ay)
    qx = np.where(ox, np.where(vx > 0, vx * u[:-1, :], vx * u[1:, :]), 0.0)
    qy = np.where(oy, np.where(vy > 0, vy * u[:, :-1], vy * u[:, 1:]), 0.0)
    return _face_div(qx, qy, h)


def gradient(u: np.ndarray, h: float, mask: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Node gradient: central differences, one-sided where a neighbour is
    off-grid or (with ``mask``) a non-member; zero where both are missing."""
    return _grad_axis(u, h, mask, 0), _grad_axis(u, h, mask, 1)


def _grad_axis(u: np.ndarray, h: float, mask: np.ndarray | None, axis: int) -> np.ndarray:
    um = np.moveaxis(u, axis, 0)
    have = np.ones(um.shape, bool) if mask is None else np.moveaxis(mask, axis, 0).astype(bool)
    fwd = np.zeros(um.shape, bool)
    bwd = np.zeros(um.shape, bool)
    fwd[:-1] = have[1:] & have[:-1]
    bwd[1:] = have[:-1] & have[1:]
    up = np.zeros_like(um)
    dn = np.zeros_like(um)
    up[:-1] = um[1:]
    dn[1:] = um[:-1]
    g = np.zeros_like(um, dtype=float)
    both = fwd & bwd
    g[both] = (up[both] - dn[both]) / (2 * h)
    only_f = fwd & ~bwd
    g[only_f] = (up[only_f] - um[only_f]) / h
    only_b = bwd & ~fwd
    g[only_b] = (um[only_b] - dn[only_b]) / h
    return np.moveaxis(g, 0, axis)


def clamp_negative(u: np.ndarray, name: str = "") -> float:
    """Clamp negatives to zero in place; return the (positive) clamped mass."""
    neg = u < 0
    if not neg.any():
        return 0.0
    lost = float(-u[neg].sum())
    u[neg] = 0.0
    if lost > 0:
        logger.debug("clamped %.3e of negative mass in %s", lost, name or "field")
    return lost
