"""Macro-scale tumour / virus / ECM dynamics on the tissue grid."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from .adhesion import AdhesionStrengths, SensingStencil, eval_adhesion_flux
from .grid import (
    Grid,
    TumourRegion,
    clamp_negative,
    diffusion,
    face_open,
    face_velocity,
    gradient,
    upwind_advection,
)

logger = logging.getLogger(__name__)

LOCAL = "local"
NONLOCAL = "nonlocal"
FLUX_MODES = (LOCAL, NONLOCAL)


class SimulationError(RuntimeError):
    pass


class NonFiniteError(SimulationError):
    def __init__(self, field_name: str, node: tuple[int, int], stage: int | None):
        self.field_name = field_name
        self.node = node
        self.stage = stage
        super().__init__(f"non-finite d{field_name}/dt at node {node} (stage {stage})")


class CFLError(SimulationError):
    pass


@dataclass(frozen=True)
class ParameterSet:
    """Model constants; defaults are the baseline values."""

    D_c: float = 0.00035
    D_i: float = 0.0054
    D_v: float = 0.0036
    D_m: float = 0.0025
    eta_i: float = 0.0285
    eta_v: float = 0.0285
    mu1: float = 0.5
    mu2: float = 0.0
    alpha_c: float = 0.15
    alpha_i: float = 0.075
    alpha_cF: float = 0.75
    alpha_iF: float = 0.75
    varrho: float = 0.079
    delta_i: float = 0.05
    delta_v: float = 0.025
    b: float = 20.0
    nu_e: float = 1.0
    nu_c: float = 1.0
    gamma_c: float = 1.0
    gamma_i: float = 1.5
    R_F: float = 0.2
    S_cc: float = 0.1
    S_ci: float = 0.0
    S_ic: float = 0.0
    S_ii: float = 0.1
    S_ce: float = 0.5
    S_ie: float = 0.5
    S_cF: float = 0.2
    S_iF: float = 0.2
    R: float = 0.15
    dt: float = 0.5
    max_substep: float = 1 / 120  # 60 midpoint substeps per default stage

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValueError(f"parameter {f.name} must be a finite number, got {v!r}")
            if v < 0:
                raise ValueError(f"parameter {f.name} must be >= 0, got {v}")
        if not self.R_F < 1:
            raise ValueError(f"parameter R_F must lie in [0, 1), got {self.R_F}")
        if self.nu_e <= 0 or self.nu_c <= 0:
            raise ValueError("parameters nu_e and nu_c must be > 0")
        if self.R <= 0:
            raise ValueError("parameter R (sensing radius) must be > 0")
        if self.dt <= 0:
            raise ValueError("parameter dt (stage length) must be > 0")
        if self.max_substep <= 0:
            raise ValueError("parameter max_substep must be > 0")

    @property
    def strengths(self) -> AdhesionStrengths:
        return AdhesionStrengths(self.S_cc, self.S_ci, self.S_ic, self.S_ii,
                                 self.S_ce, self.S_ie, self.S_cF, self.S_iF)

    def with_(self, **changes) -> "ParameterSet":
        return replace(self, **changes)


@dataclass
class StateVector:
    c: np.ndarray
    i: np.ndarray
    E: np.ndarray
    v: np.ndarray

    def copy(self) -> "StateVector":
        return StateVector(self.c.copy(), self.i.copy(), self.E.copy(), self.v.copy())

    def items(self):
        return (("c", self.c), ("i", self.i), ("E", self.E), ("v", self.v))


class Derivatives(NamedTuple):
    c: np.ndarray
    i: np.ndarray
    E: np.ndarray
    v: np.ndarray


@dataclass
class MacroContext:
    """Everything ``macro_rhs`` needs besides the state."""

    grid: Grid
    params: ParameterSet
    mode: str
    stencil: SensingStencil | None
    region: TumourRegion
    theta: np.ndarray  # (2, N, N)
    F: np.ndarray
    threads: int = 1
    stage: int | None = None
    _faces: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in FLUX_MODES:
            raise ValueError(f"infected flux mode must be one of {FLUX_MODES}, got {self.mode!r}")

    @property
    def faces(self):
        if self._faces is None:
            self._faces = face_open(self.region.mask, self.region.mask.shape)
        return self._faces


def volume_fraction(c, i, E, F, nu_e: float, nu_c: float) -> np.ndarray:
    return nu_e * (E + F) + nu_c * (c + i)


def _adhesion_needed(S: AdhesionStrengths, which: str) -> bool:
    return any(s != 0 for s in S.for_population(which))


def cell_velocities(state: StateVector, ctx: MacroContext):
    """Advective velocities of the uninfected cells, the infected cells and
    the virus, each a pair of node arrays."""
    p = ctx.params
    h = ctx.grid.h
    mask = ctx.region.mask
    e = state.E + ctx.F
    rho = volume_fraction(state.c, state.i, state.E, ctx.F, p.nu_e, p.nu_c)
    S = p.strengths
    zero = np.zeros_like(state.c)
    if ctx.stencil is not None and _adhesion_needed(S, "uninfected"):
        A_c = eval_adhesion_flux("uninfected", state.c, state.i, state.E, ctx.F, ctx.theta,
                                 mask, ctx.stencil, S, rho, ctx.threads)
    else:
        A_c = (zero, zero)
    ge = gradient(e, h)
    if ctx.mode == LOCAL:
        A_i = (p.eta_i * ge[0], p.eta_i * ge[1])
    elif ctx.stencil is not None and _adhesion_needed(S, "infected"):
        A_i = eval_adhesion_flux("infected", state.c, state.i, state.E, ctx.F, ctx.theta,
                                 mask, ctx.stencil, S, rho, ctx.threads)
    else:
        A_i = (zero, zero)
    A_v = (p.eta_v * ge[0], p.eta_v * ge[1])
    return A_c, A_i, A_v


def macro_rhs(state: StateVector, ctx: MacroContext, velocities=None) -> Derivatives:
    """Time derivative of ``(c, i, E, v)``.

    Diffusion and advection are conservative face fluxes; cell fluxes across
    the tumour interface are closed.
    """
    p = ctx.params
    h = ctx.grid.h
    c, i, E, v = state.c, state.i, state.E, state.v
    rho = volume_fraction(c, i, E, ctx.F, p.nu_e, p.nu_c)
    A_c, A_i, A_v = velocities if velocities is not None else cell_velocities(state, ctx)
    faces = ctx.faces
    chi = ctx.region.mask
    infection = p.varrho * c * v

    dc = diffusion(c, p.D_c, h, faces) - upwind_advection(c, *A_c, h, faces) \
        + p.mu1 * c * (1.0 - rho) - infection
    di = diffusion(i, p.D_i, h, faces) - upwind_advection(i, *A_i, h, faces) \
        + infection - p.delta_i * i
    dE = -E * (p.alpha_c * c + p.alpha_i * i) + p.mu2 * E * (1.0 - rho)
    dv = diffusion(v, p.D_v, h) - upwind_advection(v, *A_v, h) \
        + p.b * i - infection - p.delta_v * v
    dc = np.where(chi, dc, 0.0)
    di = np.where(chi, di, 0.0)
    out = Derivatives(dc, di, dE, dv)
    for name, arr in zip(out._fields, out):
        if not np.isfinite(arr).all():
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise NonFiniteError(name, (int(bad[0]), int(bad[1])), ctx.stage)
    return out


def courant_number(velocities, h: float, dt: float) -> float:
    worst = 0.0
    for ax, ay in velocities:
        vx, vy = face_velocity(ax, ay)
        worst = max(worst, float(np.abs(vx).max(initial=0.0)), float(np.abs(vy).max(initial=0.0)))
    return 2.0 * worst * dt / h


def choose_substep(ctx: MacroContext, dt_stage: float, velocities=None) -> tuple[int, float]:
    """Number of substeps and their length for one stage.

    Bounded by the diffusive limit ``0.2 h^2 / max(D)``, ``max_substep`` and,
    when velocities are given, a combined Courant plus diffusion number of
    0.8, which leaves headroom below the hard limit of 1 for velocity growth
    within the stage.
    """
    p = ctx.params
    h = ctx.grid.h
    limits = [dt_stage, p.max_substep]
    Dmax = max(p.D_c, p.D_i, p.D_v)
    if Dmax > 0:
        limits.append(0.2 * h * h / Dmax)
    if velocities is not None:
        rate = courant_number(velocities, h, 1.0) + 4.0 * Dmax / (h * h)
        if rate > 0:
            limits.append(0.8 / rate)
    dt = min(limits)
    n = max(1, math.ceil(dt_stage / dt - 1e-12))
    return n, dt_stage / n


@dataclass
class StepInfo:
    substeps: int = 0
    substep: float = 0.0
    clamped_mass: float = 0.0


def _check_cfl(velocities, ctx: MacroContext, dt: float):
    p = ctx.params
    h = ctx.grid.h
    cour = courant_number(velocities, h, dt)
    diff = 4.0 * max(p.D_c, p.D_i, p.D_v) * dt / (h * h)
    if cour + diff > 1.0:
        raise CFLError(
            f"CFL violated at stage {ctx.stage}: advective Courant {cour:.3f} + "
            f"diffusion number {diff:.3f} > 1 with substep {dt:.4g}; "
            f"lower max_substep below {dt * 0.5:.4g}")


def _finish_substep(u: StateVector, mask: np.ndarray, info: StepInfo):
    for name, arr in u.items():
        info.clamped_mass += clamp_negative(arr, name)
    u.c[~mask] = 0.0
    u.i[~mask] = 0.0


def step_macro(state: StateVector, ctx: MacroContext, dt_stage: float | None = None) -> tuple[StateVector, StepInfo]:
    """Advance ``(c, i, E, v)`` over one stage with explicit midpoint
    substeps; the fibre field in ``ctx`` is held fixed."""
    dt_stage = ctx.params.dt if dt_stage is None else dt_stage
    info = StepInfo()
    u = state.copy()
    if dt_stage == 0:
        return u, info
    vel0 = cell_velocities(u, ctx)
    n, dt = choose_substep(ctx, dt_stage, vel0)
    info.substeps, info.substep = n, dt
    mask = ctx.region.mask
    for k in range(n):
        vel = vel0 if k == 0 else cell_velocities(u, ctx)
        _check_cfl(vel, ctx, dt)
        k1 = macro_rhs(u, ctx, vel)
        half = StateVector(*(a + 0.5 * dt * d for (_, a), d in zip(u.items(), k1)))
        k2 = macro_rhs(half, ctx)
        u = StateVector(*(a + dt * d for (_, a), d in zip(u.items(), k2)))
        _finish_substep(u, mask, info)
    if info.clamped_mass > 0:
        logger.debug("stage %s: clamped %.3e negative mass", ctx.stage, info.clamped_mass)
    return u, info
