"""Command-line entry point: ``ovsim run | render | presets``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import PRESETS, ConfigError, RunConfig, load_config, preset_config
from .grid import TumourRegion
from .io import SnapshotError, read_field
from .render import render_heatmap
from .simulation import run_simulation

logger = logging.getLogger("ovsim")


def _build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.scenario:
        cfg = preset_config(args.scenario, cfg)
    changes = {}
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.snapshot_every is not None:
        changes["snapshot_every"] = args.snapshot_every
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.stages is not None and args.stages > 0:
        changes["stages"] = args.stages
    return dataclasses.replace(cfg, **changes) if changes else cfg


def cmd_run(args) -> int:
    try:
        cfg = _build_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"ovsim: config error: {exc}", file=sys.stderr)
        return 2
    stages = cfg.stages if args.stages is None else args.stages
    if stages < 0:
        print("ovsim: --stages must be >= 0", file=sys.stderr)
        return 2
    logger.info("scenario %s, %d stages, output in %s", cfg.scenario, stages, cfg.out_dir)
    result = run_simulation(cfg, stages=stages)
    if result.status:
        print(f"ovsim: {result.error}", file=sys.stderr)
    else:
        print(f"wrote {len(result.manifests)} snapshots to {cfg.out_dir}")
    return result.status


def cmd_render(args) -> int:
    try:
        _, values = read_field(args.field)
        region = None
        if args.mask:
            _, mask = read_field(args.mask)
            region = TumourRegion.from_mask(mask > 0.5)
        render_heatmap(values, args.out, palette=args.palette, region=region, scale=args.scale)
    except (SnapshotError, ValueError, OSError) as exc:
        print(f"ovsim: render failed: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


def cmd_presets(args) -> int:
    for name, changes in PRESETS.items():
        diff = ", ".join(f"{k}={v}" for k, v in changes.items()) or "baseline parameters"
        print(f"{name:24s} {diff}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ovsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every stage")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a simulation")
    run.add_argument("--config", help="INI config file")
    run.add_argument("--scenario", choices=sorted(PRESETS), help="named parameter preset")
    run.add_argument("--stages", type=int, help="number of stages (0 writes only the initial snapshot)")
    run.add_argument("--out", help="output directory")
    run.add_argument("--snapshot-every", type=int, dest="snapshot_every")
    run.add_argument("--threads", type=int, help="worker threads (OVSIM_THREADS overrides)")
    run.set_defaults(func=cmd_run)

    render = sub.add_parser("render", help="render a field file to PNG")
    render.add_argument("field", help="OVSIM1 field file")
    render.add_argument("-o", "--out", required=True, help="PNG path")
    render.add_argument("--mask", help="mask field file for the boundary overlay")
    render.add_argument("--palette", default="viridis")
    render.add_argument("--scale", type=int, default=4)
    render.set_defaults(func=cmd_render)

    presets = sub.add_parser("presets", help="list scenario presets")
    presets.set_defaults(func=cmd_presets)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
