"""Command-line entry point: ``sim --scene <path|preset[:knobs]> --steps N ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .io import SnapshotError
from .scene import SceneError, resolve_scene
from .sim import run_simulation

EXIT_OK, EXIT_SCHEMA, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("softcontact")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sim", description="Simulate deformable bodies with "
                                "frictional contact and write per-step diagnostics.")
    p.add_argument("--scene", required=True,
                   help="scene JSON file, or a preset name with optional knobs, "
                        "e.g. 'arch:mu=0.2,blocks=9'")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--dt", type=float, default=None, help="override the scene time step (s)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--tolerance", type=float, default=None,
                   help="solver relative tolerance (default from the scene, 1e-6)")
    p.add_argument("--snapshot-every", type=int, default=None, metavar="K",
                   help="write VTK snapshots every K steps (0 disables)")
    p.add_argument("--dump-matrices", action="store_true",
                   help="write A and its Cholesky factor per step in Matrix Market format")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.steps < 0:
        print("error: --steps must be non-negative", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        cfg = resolve_scene(args.scene)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.dt is not None and not args.dt > 0:
            raise SceneError("time step must be positive", "/scheme/dt")
        if args.tolerance is not None and not args.tolerance > 0:
            raise SceneError("tolerance must be positive", "/solver/eps_r")
    except SceneError as exc:
        print(f"scene error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        summary = run_simulation(cfg, args.steps, args.out, dt=args.dt, eps_r=args.tolerance,
                                 snapshot_every=args.snapshot_every,
                                 dump_matrices=args.dump_matrices)
    except SceneError as exc:
        print(f"scene error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (OSError, SnapshotError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"steps {summary.steps_completed}/{args.steps}  sim time {summary.sim_time:.4g} s  "
          f"wall {summary.wall_time:.3g} s  realtime rate {summary.realtime_rate:.3g}  "
          f"constraints avg {summary.mean_constraints:.1f} (max {summary.max_constraints})")
    if summary.aborted:
        print(f"aborted: {summary.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
