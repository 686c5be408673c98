"""Stage loop coupling the macro solver, fibre rearrangement and the MDE
boundary dynamics."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .adhesion import build_sensing_stencil
from .config import RunConfig
from .fibre import FibreField, rearrangement_vector
from .grid import Grid, TumourRegion, build_grid, gradient
from .initial import init_state
from .io import SnapshotManifest, write_snapshot
from .macro import MacroContext, SimulationError, StateVector, cell_velocities, step_macro
from .mde import mde_stage

logger = logging.getLogger(__name__)


@dataclass
class Simulation:
    """Mutable run state: macro fields, tumour region and fibre phase."""

    config: RunConfig
    grid: Grid
    state: StateVector
    region: TumourRegion
    fibres: FibreField
    front: np.ndarray | None = None
    stage: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def from_config(cls, config: RunConfig) -> "Simulation":
        grid = build_grid(config.L, config.h)
        micro = config.resolved_micro()
        state, region, fibres = init_state(grid, config.params.R_F, micro.M, micro.f_max,
                                           micro.f_max_factor)
        return cls(config, grid, state, region, fibres, front=np.zeros((2,) + grid.shape))

    @property
    def threads(self) -> int:
        env = os.environ.get("OVSIM_THREADS")
        return int(env) if env else self.config.threads

    def context(self) -> MacroContext:
        p = self.config.params
        stencil = build_sensing_stencil(p.R, self.grid.h)
        return MacroContext(self.grid, p, self.config.mode, stencil, self.region,
                            self.fibres.theta, self.fibres.F, self.threads, self.stage)

    def fields(self) -> dict[str, np.ndarray]:
        s = self.state
        F = self.fibres.F
        return {"c": s.c, "i": s.i, "E": s.E, "F": F, "e": s.E + F, "v": s.v,
                "mask": self.region.mask.astype(float)}

    def total_cell_flux(self, ctx: MacroContext) -> np.ndarray:
        """Combined diffusive and adhesive flux of both cell populations."""
        p = self.config.params
        s = self.state
        h = self.grid.h
        mask = self.region.mask
        A_c, A_i, _ = cell_velocities(s, ctx)
        gc = gradient(s.c, h, mask)
        gi = gradient(s.i, h, mask)
        # local mode: A_i already carries eta_i * grad(e)
        flux = np.stack([p.D_c * gc[0] - s.c * A_c[0] + p.D_i * gi[0] - s.i * A_i[0],
                         p.D_c * gc[1] - s.c * A_c[1] + p.D_i * gi[1] - s.i * A_i[1]])
        return np.where(mask, flux, 0.0)

    def step(self) -> dict:
        """One macro / fibre / MDE stage."""
        cfg = self.config
        p = cfg.params
        micro = cfg.resolved_micro()
        self.stage += 1
        t0 = time.perf_counter()
        try:
            ctx = self.context()
            self.state, info = step_macro(self.state, ctx, p.dt)
            ctx.stage = self.stage
            flux = self.total_cell_flux(ctx)
            c_total = self.state.c + self.state.i
            r = rearrangement_vector(flux, c_total, self.fibres.theta, self.fibres.F)
            reloc = self.fibres.relocate(r)
            self.fibres.degrade(self.state.c, self.state.i, p.alpha_cF, p.alpha_iF, p.dt)
            self.region, mde = mde_stage(
                self.region, self.grid, self.state.c, self.state.i,
                gamma_c=p.gamma_c, gamma_i=p.gamma_i, D_m=p.D_m, dt_stage=p.dt,
                eps=micro.eps, P=micro.P, rho_ball=micro.rho_ball, steps=micro.mde_steps,
                activation_threshold=micro.activation_threshold, kappa=micro.kappa,
                front=self.front)
        except SimulationError:
            raise
        except Exception as exc:
            raise SimulationError(f"stage {self.stage}: {type(exc).__name__}: {exc}") from exc
        s = self.state
        record = {
            "stage": self.stage,
            "wall_time": round(time.perf_counter() - t0, 4),
            "substeps": info.substeps,
            "clamped_mass": info.clamped_mass,
            "mass_c": float(s.c.sum()),
            "mass_i": float(s.i.sum()),
            "mass_E": float(s.E.sum()),
            "mass_F": float(self.fibres.F.sum()),
            "mass_v": float(s.v.sum()),
            "micro_fibre_mass": self.fibres.total_mass,
            "fibre_moved": reloc.moved_mass,
            "tumour_area": self.region.area,
            "boundary_patches": mde.patches,
            "active_relocations": mde.active,
            "max_c": float(s.c.max()),
            "max_i": float(s.i.max()),
            "max_v": float(s.v.max()),
        }
        self.history.append(record)
        return record


@dataclass
class RunResult:
    status: int
    manifests: list[SnapshotManifest]
    simulation: Simulation
    error: str | None = None


def run_simulation(config: RunConfig, *, stages: int | None = None, out_dir: str | None = None,
                   write: bool = True,
                   on_stage: Callable[[Simulation, dict], None] | None = None) -> RunResult:
    """Run ``stages`` stages (config default), writing snapshots every
    ``snapshot_every`` stages plus the initial and final ones.

    Errors abort the loop; snapshots already written keep valid manifests.
    """
    stages = config.stages if stages is None else stages
    if stages < 0:
        raise ValueError("stages must be >= 0")
    sim = Simulation.from_config(config)
    out = Path(out_dir or config.out_dir)
    manifests: list[SnapshotManifest] = []
    log_file = None
    if write:
        out.mkdir(parents=True, exist_ok=True)
        manifests.append(write_snapshot(out, 0, sim.fields(), sim.fibres.export_rows(sim.grid.h)))
        log_file = open(out / "run_log.jsonl", "w")
        log_file.write(json.dumps(_initial_record(sim)) + "\n")
    try:
        for k in range(1, stages + 1):
            rec = sim.step()
            logger.info("stage %d: area=%d max_c=%.4f max_i=%.4f (%.2fs)", k, rec["tumour_area"],
                        rec["max_c"], rec["max_i"], rec["wall_time"])
            if log_file:
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
            if on_stage is not None:
                on_stage(sim, rec)
            if write and (k % config.snapshot_every == 0 or k == stages):
                manifests.append(write_snapshot(out, k, sim.fields(), sim.fibres.export_rows(sim.grid.h)))
    except SimulationError as exc:
        logger.error("run aborted: %s", exc)
        return RunResult(1, manifests, sim, str(exc))
    finally:
        if log_file:
            log_file.close()
    return RunResult(0, manifests, sim)


def _initial_record(sim: Simulation) -> dict:
    s = sim.state
    return {"stage": 0, "wall_time": 0.0, "mass_c": float(s.c.sum()), "mass_i": float(s.i.sum()),
            "mass_E": float(s.E.sum()), "mass_F": float(sim.fibres.F.sum()), "mass_v": float(s.v.sum()),
            "micro_fibre_mass": sim.fibres.total_mass, "tumour_area": sim.region.area}
