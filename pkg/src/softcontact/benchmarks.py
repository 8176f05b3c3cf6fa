"""Experiment protocols shared by the acceptance tests and ``scripts/``."""
from __future__ import annotations

import json
import platform
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dynamics import StepRejected, step
from .scene import ARCH_BLOCK, build_world, generate_scene

ARCH_BLOCK_HEIGHT = ARCH_BLOCK["r_outer"] - ARCH_BLOCK["r_inner"]


@dataclass
class ArchResult:
    mu: float
    steps: int
    max_displacement: float  # keystone centroid, largest |x - x0| seen
    final_drop: float  # keystone centroid, z0 - z at the end
    wall_time: float
    mean_constraints: float
    collapsed: bool

    @property
    def displacement_fraction(self) -> float:
        return self.max_displacement / ARCH_BLOCK_HEIGHT

    @property
    def drop_fraction(self) -> float:
        return self.final_drop / ARCH_BLOCK_HEIGHT


def arch_keystone(mu: float, steps: int, stop_drop: float | None = None, log=None,
                  **knobs) -> ArchResult:
    """Run the arch preset and track the keystone centroid.

    With ``stop_drop`` (a fraction of block height) the run ends as soon as
    the keystone has dropped that far.
    """
    cfg = generate_scene("arch", mu=mu, **knobs)
    world = build_world(cfg)
    key = world.bodies[len(cfg.bodies) // 2]
    c0 = key.q.reshape(-1, 3).mean(axis=0)
    worst = drop = 0.0
    counts = []
    t0 = time.perf_counter()
    k = 0
    for k in range(1, steps + 1):
        try:
            world, d = step(world, cfg.scheme, cfg.solver)
        except StepRejected:
            break
        counts.append(d.n_constraints)
        c = key.q.reshape(-1, 3).mean(axis=0)
        worst = max(worst, float(np.linalg.norm(c - c0)))
        drop = float(c0[2] - c[2])
        if log is not None and k % 50 == 0:
            log(f"step {k}: keystone drop {drop / ARCH_BLOCK_HEIGHT:.2%} of block height, "
                f"{d.n_constraints} constraints, {d.solver_iters} iterations")
        if stop_drop is not None and drop > stop_drop * ARCH_BLOCK_HEIGHT:
            break
    return ArchResult(mu, k, worst, drop, time.perf_counter() - t0,
                      float(np.mean(counts)) if counts else 0.0,
                      stop_drop is not None and drop > stop_drop * ARCH_BLOCK_HEIGHT)


def compression_displacement(cells: int, steps: int = 200, **knobs) -> float:
    """Plate travel at the end of a compression run (force ramped, then held)."""
    cfg = generate_scene("compression", cells=cells, **knobs)
    world = build_world(cfg)
    for _ in range(steps):
        world, _ = step(world, cfg.scheme, cfg.solver)
    return float(world.bodies[-1].q[0])


def arch_realtime_rate(steps: int = 40, warmup: int = 10, **knobs) -> float:
    """Simulated seconds per second of stepping on the arch preset, after a
    short warm-up so the first contact transients are not counted."""
    cfg = generate_scene("arch", **knobs)
    world = build_world(cfg)
    for _ in range(warmup):
        world, _ = step(world, cfg.scheme, cfg.solver)
    busy = 0.0
    for _ in range(steps):
        t = time.perf_counter()
        world, _ = step(world, cfg.scheme, cfg.solver)
        busy += time.perf_counter() - t
    return steps * cfg.scheme.dt / busy


def record_baseline(path, rate: float, steps: int, warmup: int) -> dict:
    entry = {"preset": "arch", "realtime_rate": rate, "steps": steps, "warmup": warmup,
             "machine": platform.machine(), "python": platform.python_version(),
             "recorded": time.strftime("%Y-%m-%d")}
    Path(path).write_text(json.dumps(entry, indent=2) + "\n")
    return entry


def load_baseline(path) -> dict:
    return json.loads(Path(path).read_text())


def arch_summary(result: ArchResult) -> dict:
    return {**asdict(result), "displacement_fraction": result.displacement_fraction,
            "drop_fraction": result.drop_fraction}
