"""Theta-method time stepping of deformable and prismatic bodies coupled
through contact and weld constraints."""
from __future__ import annotations

import time as _time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import constraints as cons
from .material import (LameParams, MaterialState, RayleighParams, elastic_energy, elastic_force,
                       stiffness_matrix, update_lagged_rotation)
from .mesh import TetMesh, assemble_mass_matrix, build_element_geometry, extract_boundary
from .solver import (ContactParams, ConvexProblem, SolverParams, delassus_diagonal,
                     regularization, solve_reduced)
from .sparse import (BlockSparseSym, CholeskyWithSchur, dump_matrix_market,
                     factorize_with_schur, order_within_partitions)


@dataclass(frozen=True)
class SchemeParams:
    theta: float = 1.0
    theta_vq: float = 1.0
    dt: float = 1e-2

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if not (0 <= self.theta <= 1 and 0 <= self.theta_vq <= 1):
            raise ValueError("theta and theta_vq must lie in [0, 1]")


class DeformableBody:
    kind = "deformable"

    def __init__(self, mesh: TetMesh, lame: LameParams, rayleigh: RayleighParams = RayleighParams(),
                 q=None, v=None, mu: float | None = None, lumped_mass: bool = False,
                 name: str = ""):
        self.mesh = mesh
        self.lame = lame
        self.rayleigh = rayleigh
        self.mu = mu
        self.name = name
        self.geom = build_element_geometry(mesh)
        self.boundary = extract_boundary(mesh)
        self.M = assemble_mass_matrix(mesh, self.geom, lumped=lumped_mass)
        self.q = mesh.vertices.ravel().copy() if q is None else np.asarray(q, dtype=float).copy()
        self.v = np.zeros(mesh.num_dofs) if v is None else np.asarray(v, dtype=float).copy()
        self.state = MaterialState.identity(len(mesh.elements))
        self._state_q = None  # configuration the current state was computed from

    @property
    def num_dofs(self) -> int:
        return self.mesh.num_dofs

    @property
    def block_sizes(self) -> np.ndarray:
        return np.full(self.mesh.num_vertices, 3)

    def lagged_state(self, q) -> tuple[MaterialState, int]:
        if self._state_q is not None and np.array_equal(self._state_q, q):
            return self.state, 0
        return update_lagged_rotation(self.mesh, self.geom, q, self.state)

    def external_force(self, gravity, t) -> np.ndarray:
        return self.M @ np.tile(np.asarray(gravity, dtype=float), self.mesh.num_vertices)

    def kinetic_energy(self, v=None) -> float:
        v = self.v if v is None else v
        return 0.5 * float(v @ (self.M @ v))


class PrismaticBody:
    """Rigid body translating along a fixed axis; one generalized coordinate."""

    kind = "prismatic"

    def __init__(self, mass: float, axis, q: float = 0.0, v: float = 0.0, force: float = 0.0,
                 ramp_time: float = 0.0, name: str = ""):
        if not mass > 0:
            raise ValueError("prismatic mass must be positive")
        self.mass = float(mass)
        a = np.asarray(axis, dtype=float)
        self.axis = a / np.linalg.norm(a)
        self.q = np.array([float(q)])
        self.v = np.array([float(v)])
        self.force = float(force)
        self.ramp_time = float(ramp_time)
        self.name = name
        self.M = BlockSparseSym.from_dense([[self.mass]], [1])

    num_dofs = 1
    block_sizes = np.array([1])

    def applied_force(self, t: float) -> float:
        if self.ramp_time > 0:
            return self.force * min(1.0, t / self.ramp_time)
        return self.force

    def external_force(self, gravity, t) -> np.ndarray:
        return np.array([self.applied_force(t) + self.mass * float(np.dot(gravity, self.axis))])

    def kinetic_energy(self, v=None) -> float:
        v = self.v if v is None else v
        return 0.5 * self.mass * float(v[0] ** 2)


@dataclass
class Weld:
    body: int
    vertex: int
    target: cons.WeldTarget


@dataclass
class BodyStep:
    """Per-step linearization of one body at the start of the step."""

    body: object
    q0: np.ndarray
    v0: np.ndarray
    M: BlockSparseSym
    K: BlockSparseSym | None
    A: BlockSparseSym
    f_ext: np.ndarray
    state: MaterialState | None = None
    rayleigh: RayleighParams = field(default_factory=RayleighParams)

    def elastic_force(self, q) -> np.ndarray:
        if self.K is None:
            return np.zeros_like(q)
        b = self.body
        return elastic_force(b.mesh, b.geom, q, self.state, b.lame)


def tangent_matrix(scheme: SchemeParams, M: BlockSparseSym, K: BlockSparseSym | None,
                   rayleigh: RayleighParams = RayleighParams()) -> BlockSparseSym:
    """A = (1 + alpha theta dt) M + theta dt (theta_vq dt + beta) K."""
    th, dt = scheme.theta, scheme.dt
    a = 1.0 + rayleigh.alpha * th * dt
    if K is None:
        return M.scaled(a)
    return M.combine(a, K, th * dt * (scheme.theta_vq * dt + rayleigh.beta))


def position_update(q0, v0, v, scheme: SchemeParams) -> np.ndarray:
    return q0 + scheme.dt * (scheme.theta_vq * v + (1 - scheme.theta_vq) * v0)


def momentum_residual(bs: BodyStep, v, scheme: SchemeParams) -> np.ndarray:
    """m(v) = M (v - v0) - dt k(q^theta(v), v^theta(v)), evaluated directly."""
    v = np.asarray(v, dtype=float)
    th = scheme.theta
    q = position_update(bs.q0, bs.v0, v, scheme)
    q_th = th * q + (1 - th) * bs.q0
    v_th = th * v + (1 - th) * bs.v0
    k = bs.f_ext + bs.elastic_force(q_th)
    if bs.K is not None:
        k = k - bs.rayleigh.alpha * (bs.M @ v_th) - bs.rayleigh.beta * (bs.K @ v_th)
    return bs.M @ (v - bs.v0) - scheme.dt * k


def free_motion_velocities(bs: BodyStep, scheme: SchemeParams,
                           factor: CholeskyWithSchur) -> np.ndarray:
    """v* = v0 - A^-1 m(v0): a single solve, exact for this linear model."""
    return bs.v0 - factor.solve(momentum_residual(bs, bs.v0, scheme))


@dataclass
class StepDiagnostics:
    step: int
    time: float
    kinetic: float
    elastic: float
    potential: float
    dissipated: float
    momentum_residual: float
    n_constraints: int
    solver_iters: int
    grad_norm: float
    converged: bool
    wall_ms: float
    realtime_factor: float
    inverted_elements: int = 0
    fill_in: int = 0
    participating: int = 0
    free_motion_solves: int = 0
    trace: list = field(default_factory=list)  # (iteration, grad norm, step length)

    @property
    def total_energy(self) -> float:
        return self.kinetic + self.elastic + self.potential


class StepRejected(RuntimeError):
    def __init__(self, message, diagnostics: StepDiagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class World:
    def __init__(self, bodies=(), colliders=(), welds=(), gravity=(0.0, 0.0, -9.81),
                 contact: ContactParams | None = None, body_contact: bool = True):
        self.bodies = list(bodies)
        self.colliders = list(colliders)
        self.welds = list(welds)
        self.gravity = np.asarray(gravity, dtype=float)
        self.contact = contact or ContactParams()
        self.body_contact = body_contact
        self.time = 0.0
        self.step_count = 0
        self.dissipated = 0.0
        self.warm_start: dict = {}

    def deformables(self):
        return [(i, b) for i, b in enumerate(self.bodies) if b.kind == "deformable"]

    def prismatic_coordinates(self) -> dict:
        return {i: (float(b.q[0]), b.axis) for i, b in enumerate(self.bodies)
                if b.kind == "prismatic"}

    def elastic_energy(self) -> float:
        total = 0.0
        for _, b in self.deformables():
            state, _ = b.lagged_state(b.q)
            total += elastic_energy(b.mesh, b.geom, b.q, state, b.lame)
        return total

    def kinetic_energy(self) -> float:
        return sum(b.kinetic_energy() for b in self.bodies)

    def potential_energy(self) -> float:
        """Potential of the constant external forces (gravity, prismatic loads)."""
        return -sum(float(b.external_force(self.gravity, self.time) @ b.q) for b in self.bodies)

    def build_constraints(self, dt: float) -> cons.ConstraintSet:
        surfaces = [cons.ContactSurface(i, b.q.reshape(-1, 3), b.boundary.surface_vertices,
                                        b.boundary.surface_faces, b.mu)
                    for i, b in self.deformables()]
        prism = self.prismatic_coordinates()
        pairs = cons.detect_contacts(surfaces, self.colliders, prism, self.contact.margin,
                                     body_contact=self.body_contact)
        blocks = [cons.contact_constraint(p, dt, self.contact.v_hat_max) for p in pairs]
        for k, w in enumerate(self.welds):
            pq = prism[w.target.prismatic][0] if w.target.prismatic is not None else 0.0
            blocks.append(cons.weld_constraint(w.body, w.vertex, w.target, self.bodies[w.body].q,
                                               dt, prismatic_q=pq, key=("weld", k)))
        return cons.stack_constraints(blocks)


def _linearize(world: World, scheme: SchemeParams):
    steps, inverted = [], 0
    t_force = world.time + scheme.theta * scheme.dt
    for b in world.bodies:
        f_ext = b.external_force(world.gravity, t_force)
        if b.kind == "deformable":
            state, n_inv = b.lagged_state(b.q)
            inverted += n_inv
            K = stiffness_matrix(b.mesh, b.geom, state, b.lame)
            A = tangent_matrix(scheme, b.M, K, b.rayleigh)
            steps.append(BodyStep(b, b.q.copy(), b.v.copy(), b.M, K, A, f_ext, state, b.rayleigh))
        else:
            steps.append(BodyStep(b, b.q.copy(), b.v.copy(), b.M, None,
                                  tangent_matrix(scheme, b.M, None), f_ext))
    return steps, inverted


def step(world: World, scheme: SchemeParams, params: SolverParams | None = None,
         reorder: bool = True, dump_dir: str | Path | None = None):
    """Advance ``world`` by one time step in place and return diagnostics.

    On solver non-convergence the world is left untouched and
    :class:`StepRejected` is raised.
    """
    params = params or SolverParams()
    t_start = _time.perf_counter()
    dt = scheme.dt

    # (1)-(2) lagged rotations, M, K, A
    steps, inverted = _linearize(world, scheme)
    # (3) constraints at q0
    cset = world.build_constraints(dt)

    # (4) partition + factorize; (5) free motion
    factors, v_star = [], []
    fill = solves = 0
    col_maps = {}
    red_offset = 0
    schur_blocks = []
    for bi, bs in enumerate(steps):
        part = cset.participating.get(bi, np.zeros(0, dtype=np.int64))
        node_of = bs.A.node_of_dof()
        mask = np.zeros(bs.A.num_blocks, dtype=bool)
        mask[node_of[part]] = True
        perm = order_within_partitions(bs.A.block_pattern(), mask, bs.A.block_sizes,
                                       reorder=reorder)
        factor = factorize_with_schur(bs.A, perm, jitter=True)
        fill += factor.fill_in
        vs = free_motion_velocities(bs, scheme, factor)
        solves += factor.solve_count
        factors.append(factor)
        v_star.append(vs)
        cmap = np.full(bs.A.n, -1, dtype=np.int64)
        pd = factor.participating_dofs
        cmap[pd] = red_offset + np.arange(len(pd))
        col_maps[bi] = cmap
        red_offset += len(pd)
        schur_blocks.append(factor.schur)
        if dump_dir is not None:
            d = Path(dump_dir)
            d.mkdir(parents=True, exist_ok=True)
            tag = f"step{world.step_count:05d}_body{bi}"
            dump_matrix_market(d / f"{tag}_A.mtx", bs.A, comment="tangent matrix (lower)")
            dump_matrix_market(d / f"{tag}_L.mtx", factor.lower_matrix(),
                               comment="Cholesky factor of permuted A")

    # (6) reduced convex problem over participating dofs
    A_hat = scipy.linalg.block_diag(*schur_blocks) if red_offset else np.zeros((0, 0))
    v_p_star = (np.concatenate([vs[f.participating_dofs] for vs, f in zip(v_star, factors)])
                if red_offset else np.zeros(0))
    J = cset.dense_jacobian(col_maps, width=red_offset)
    w = delassus_diagonal(A_hat, J, cset.cones)
    reg = regularization(cset.cones, w, dt, world.contact)
    prob = ConvexProblem(A_hat, v_p_star, J, cset.bias, cset.v_hat, cset.cones, reg.R)
    gamma0 = _warm_start(world.warm_start, cset)
    result = solve_reduced(prob, params, gamma0=gamma0)

    # (7) recover non-participating velocities
    dv_p_all = result.v - v_p_star
    v_new = []
    for bi, (factor, vs) in enumerate(zip(factors, v_star)):
        cmap = col_maps[bi]
        dv_p = dv_p_all[cmap[factor.participating_dofs]] if factor.m_p else np.zeros(0)
        dv_n = factor.recover_nonparticipating(dv_p)
        v_new.append(vs + factor.scatter(dv_n, dv_p))

    # momentum balance check on the full system: m(v) = J^T gamma
    jt_gamma = [np.zeros(bs.A.n) for bs in steps]
    r = 0
    for blk in cset.blocks:
        g = result.gamma[r:r + blk.rows]
        for body, dofs, Jb in blk.jacobian:
            jt_gamma[body][dofs] += Jb.T @ g
        r += blk.rows
    mres = float(np.sqrt(sum(np.sum((momentum_residual(bs, v, scheme) - jg) ** 2)
                             for bs, v, jg in zip(steps, v_new, jt_gamma))))

    wall = _time.perf_counter() - t_start
    trace = [(k, result.grad_norms[k], result.step_lengths[k - 1] if k else 0.0)
             for k in range(len(result.grad_norms))]
    diag = StepDiagnostics(
        step=world.step_count + 1, time=world.time + dt, kinetic=0.0, elastic=0.0,
        potential=0.0, dissipated=world.dissipated, momentum_residual=mres,
        n_constraints=len(cset), solver_iters=result.iterations,
        grad_norm=result.grad_norms[-1] if result.grad_norms else 0.0,
        converged=result.converged, wall_ms=1e3 * wall, realtime_factor=dt / max(wall, 1e-12),
        inverted_elements=inverted, fill_in=fill, participating=red_offset,
        free_motion_solves=solves, trace=trace)
    if not result.converged:
        raise StepRejected(f"solver did not converge in {result.iterations} iterations "
                           f"(|grad| = {diag.grad_norm:.3e})", diag)

    # (8) commit: positions, velocities, dissipation
    th = scheme.theta
    for bs, v in zip(steps, v_new):
        b = bs.body
        if bs.K is not None:
            v_th = th * v + (1 - th) * bs.v0
            world.dissipated += dt * float(
                v_th @ (bs.rayleigh.alpha * (bs.M @ v_th) + bs.rayleigh.beta * (bs.K @ v_th)))
        b.q = position_update(bs.q0, bs.v0, v, scheme)
        b.v = v
        if b.kind == "deformable":
            b.state, _ = update_lagged_rotation(b.mesh, b.geom, b.q, bs.state)
            b._state_q = b.q.copy()
    world.warm_start = _store_warm_start(cset, result.gamma)
    world.time += dt
    world.step_count += 1

    # (9) diagnostics
    diag.kinetic = world.kinetic_energy()
    diag.elastic = world.elastic_energy()
    diag.potential = world.potential_energy()
    diag.dissipated = world.dissipated
    diag.wall_ms = 1e3 * (_time.perf_counter() - t_start)
    diag.realtime_factor = dt / max(diag.wall_ms * 1e-3, 1e-12)
    return world, diag


def _warm_start(cache: dict, cset: cons.ConstraintSet):
    if not cache or not len(cset):
        return None
    return np.concatenate([cache.get(b.key, np.zeros(b.rows)) for b in cset.blocks])


def _store_warm_start(cset: cons.ConstraintSet, gamma) -> dict:
    out, r = {}, 0
    for b in cset.blocks:
        out[b.key] = gamma[r:r + b.rows].copy()
        r += b.rows
    return out
