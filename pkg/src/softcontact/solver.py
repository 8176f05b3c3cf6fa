"""Regularized primal solver for the convex contact problem

    min_v  1/2 |v - v*|_A^2 + sum_i l_i(J_i v + b_i)

where l_i is the regularized constraint potential whose gradient with respect
to the constraint velocity is minus the impulse. Newton steps with a
backtracking line search; impulses come from analytic projections onto the
friction cone (contacts) or are unconstrained (bilateral rows).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .constraints import Bilateral, FrictionCone


class SolverError(RuntimeError):
    pass


@dataclass
class SolverParams:
    eps_r: float = 1e-6
    max_iterations: int = 100
    ls_rho: float = 0.8
    ls_c: float = 1e-4
    ls_max: int = 40

    def __post_init__(self):
        if not self.eps_r > 0:
            raise ValueError("eps_r must be positive")
        if not 0 < self.ls_rho < 1:
            raise ValueError("line-search ratio must lie in (0, 1)")


@dataclass
class ContactParams:
    stiffness: float = 1e8  # N/m
    dissipation_time: float | None = None  # s; None means one time step
    sigma: float = 1e-3
    bilateral_factor: float = 1e-8
    margin: float = 1e-3
    v_hat_max: float = 0.1


@dataclass
class Regularization:
    """Diagonal compliance per constraint row, concatenated."""

    R: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        if not (np.all(self.R > 0) and np.all(np.isfinite(self.R))):
            raise ValueError("regularization must be positive and finite")


@dataclass
class SolveResult:
    v: np.ndarray
    gamma: np.ndarray
    iterations: int
    grad_norms: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)
    # accepted cost change per iteration, differenced term by term; more
    # accurate than differencing ``costs`` once the decrease nears roundoff
    decreases: list = field(default_factory=list)
    converged: bool = False


def project_friction_cone(y, mu: float) -> np.ndarray:
    """Euclidean projection of (t1, t2, n) onto {|g_t| <= mu g_n}."""
    y = np.asarray(y, dtype=float)
    g, _ = _project_scaled(y[None], np.array([mu]), np.ones(1), np.ones(1), with_jacobian=False)
    return g[0]


def _project_scaled(y, mu, Rt, Rn, with_jacobian=True):
    """Projection onto the friction cone in the R-weighted norm, vectorized.

    y: (k, 3). Returns gamma (k, 3) and, optionally, the Jacobian of the
    scaled-space projection (k, 3, 3), so that dgamma/dy = R^-1/2 dP R^1/2.
    Works in scaled coordinates y^ = R^(1/2) y where the cone opening becomes
    mu^ = mu sqrt(Rt / Rn) and the projection is Euclidean.
    """
    a = np.sqrt(Rt)
    c = np.sqrt(Rn)
    mh = mu * a / c
    yt = a[:, None] * y[:, :2]
    yn = c * y[:, 2]
    r = np.linalg.norm(yt, axis=1)
    stick = r <= mh * yn
    sep = ~stick & (mh * r <= -yn)
    slide = ~stick & ~sep

    xh = np.zeros_like(y)
    xh[stick, :2] = yt[stick]
    xh[stick, 2] = yn[stick]
    rs = r[slide]
    that = yt[slide] / rs[:, None]
    m = mh[slide]
    xn = (m * rs + yn[slide]) / (1 + m * m)
    xh[slide, :2] = (m * xn)[:, None] * that
    xh[slide, 2] = xn
    scale = np.column_stack([a, a, c])
    gamma = xh / scale
    if not with_jacobian:
        return gamma, None

    dP = np.zeros((len(y), 3, 3))
    dP[stick] = np.eye(3)
    k = 1 + m * m
    tt = np.einsum("ki,kj->kij", that, that)
    dP[slide, :2, :2] = ((m * m / k)[:, None, None] * tt
                         + (m * xn / rs)[:, None, None] * (np.eye(2) - tt))
    dP[slide, :2, 2] = (m / k)[:, None] * that
    dP[slide, 2, :2] = (m / k)[:, None] * that
    dP[slide, 2, 2] = 1 / k
    return gamma, dP


def constraint_impulse(v_c, v_hat, R, cone):
    """Impulse and potential for one constraint given its velocity."""
    v_c = np.asarray(v_c, dtype=float)
    R = np.broadcast_to(np.asarray(R, dtype=float), v_c.shape)
    y = (np.asarray(v_hat, dtype=float) - v_c) / R
    if isinstance(cone, Bilateral):
        gamma = y
    else:
        g, _ = _project_scaled(y[None], np.array([cone.mu]), R[:1], R[2:3], with_jacobian=False)
        gamma = g[0]
    return gamma, 0.5 * float(gamma @ (R * gamma))


@dataclass
class ConvexProblem:
    """Data of the (reduced or full) convex problem in dense form."""

    A: np.ndarray
    v_star: np.ndarray
    J: np.ndarray
    bias: np.ndarray
    v_hat: np.ndarray
    cones: list
    R: np.ndarray

    def __post_init__(self):
        starts = np.concatenate([[0], np.cumsum([c.rows for c in self.cones])]).astype(int)
        fr = [i for i, c in enumerate(self.cones) if isinstance(c, FrictionCone)]
        self._fric_rows = (starts[fr][:, None] + np.arange(3)).reshape(-1) if fr else np.zeros(0, int)
        self._fric_mu = np.array([self.cones[i].mu for i in fr], dtype=float)
        bil = [np.arange(starts[i], starts[i + 1]) for i, c in enumerate(self.cones)
               if isinstance(c, Bilateral)]
        self._bil_rows = np.concatenate(bil) if bil else np.zeros(0, int)
        nf = len(fr)
        Rf = self.R[self._fric_rows].reshape(nf, 3) if nf else np.zeros((0, 3))
        self._Rt = Rf[:, 0]
        self._Rn = Rf[:, 2]

    @property
    def num_rows(self) -> int:
        return len(self.R)

    def impulses(self, v_c, with_hessian=True):
        """Impulses, total constraint potential and, optionally, the
        block-diagonal second derivative G = -dgamma/dv_c."""
        y = (self.v_hat - v_c) / self.R
        gamma = np.empty_like(y)
        fr, bil = self._fric_rows, self._bil_rows
        gamma[bil] = y[bil]
        G_fric = None
        if len(fr):
            g, dP = _project_scaled(y[fr].reshape(-1, 3), self._fric_mu, self._Rt, self._Rn,
                                    with_jacobian=with_hessian)
            gamma[fr] = g.ravel()
            if with_hessian:
                s = 1.0 / np.sqrt(np.column_stack([self._Rt, self._Rt, self._Rn]))
                G_fric = s[:, :, None] * dP * s[:, None, :]
        cost = 0.5 * float(gamma @ (self.R * gamma))
        return gamma, cost, G_fric

    def cost(self, v) -> float:
        dv = v - self.v_star
        _, c, _ = self.impulses(self.J @ v + self.bias, with_hessian=False)
        return 0.5 * float(dv @ (self.A @ dv)) + c

    def cost_change(self, gamma, trial, alpha, lin, quad) -> float:
        """cost(v + alpha s) - cost(v) without forming either cost.

        ``lin`` = (A (v - v*)) . s and ``quad`` = s . A s. Differencing term by
        term avoids the cancellation that swamps Armijo tests near the optimum.
        """
        g_t, _, _ = self.impulses(self.J @ trial + self.bias, with_hessian=False)
        return (alpha * lin + 0.5 * alpha * alpha * quad
                + 0.5 * float(np.sum(self.R * (g_t - gamma) * (g_t + gamma))))

    def gradient(self, v):
        dv = v - self.v_star
        gamma, _, _ = self.impulses(self.J @ v + self.bias, with_hessian=False)
        return self.A @ dv - self.J.T @ gamma, gamma

    def hessian(self, G_fric) -> np.ndarray:
        H = self.A.copy()
        fr, bil = self._fric_rows, self._bil_rows
        if len(bil):
            Jb = self.J[bil]
            H += Jb.T @ (Jb / self.R[bil, None])
        if len(fr):
            Jf = self.J[fr].reshape(-1, 3, self.J.shape[1])
            GJ = np.einsum("kab,kbm->kam", G_fric, Jf).reshape(-1, self.J.shape[1])
            H += self.J[fr].T @ GJ
        return H


def delassus_diagonal(A, J, cones) -> np.ndarray:
    """Per-constraint mean diagonal of J A^-1 J^T."""
    if len(cones) == 0:
        return np.zeros(0)
    X = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A, lower=True), J.T)
    diag = np.einsum("rm,mr->r", J, X)
    starts = np.concatenate([[0], np.cumsum([c.rows for c in cones])]).astype(int)
    return np.array([diag[starts[i]:starts[i + 1]].mean() for i in range(len(cones))])


def regularization(cones, w, dt: float, params: ContactParams) -> Regularization:
    """Normal compliance from stiffness and dissipation time; tangential and
    bilateral rows scaled by the Delassus estimate ``w``."""
    tau = dt if params.dissipation_time is None else params.dissipation_time
    Rn = 1.0 / (dt * (dt + tau) * params.stiffness)
    rows = []
    for cone, wi in zip(cones, w):
        wi = max(float(wi), np.finfo(float).tiny)
        if isinstance(cone, Bilateral):
            rows.append(np.full(cone.rows, params.bilateral_factor * wi))
        else:
            Rt = params.sigma * wi
            rows.append(np.array([Rt, Rt, Rn]))
    return Regularization(np.concatenate(rows) if rows else np.zeros(0))


def _momentum_scale(prob: ConvexProblem, v, gamma) -> float:
    eps_abs = 1e-14 * max(len(v), 1) * max(1.0, float(np.linalg.norm(prob.A @ prob.v_star)))
    return max(float(np.linalg.norm(prob.A @ (v - prob.v_star))),
               float(np.linalg.norm(prob.J.T @ gamma)), eps_abs)


def solve_reduced(prob: ConvexProblem, params: SolverParams | None = None,
                  gamma0=None) -> SolveResult:
    """Newton iteration with backtracking line search.

    ``gamma0`` (previous impulses, same row layout) seeds the primal guess
    v = v* + A^-1 J^T gamma0.
    """
    params = params or SolverParams()
    v = prob.v_star.copy()
    warm = False
    if gamma0 is not None and len(gamma0) and np.any(gamma0):
        guess = v + scipy.linalg.cho_solve(scipy.linalg.cho_factor(prob.A, lower=True),
                                           prob.J.T @ gamma0)
        # a stale guess can land far outside the basin where Newton steps are
        # accepted within the backtracking budget; keep it only if it helps
        if prob.cost(guess) < prob.cost(v):
            v, warm = guess, True
    res = _newton(prob, params, v)
    if warm and not res.converged:
        res = _newton(prob, params, prob.v_star.copy())
    return res


def _newton(prob: ConvexProblem, params: SolverParams, v) -> SolveResult:
    res = SolveResult(v=v, gamma=np.zeros(prob.num_rows), iterations=0)
    for it in range(params.max_iterations + 1):
        vc = prob.J @ v + prob.bias
        gamma, c_cost, G = prob.impulses(vc)
        dv = v - prob.v_star
        Adv = prob.A @ dv
        grad = Adv - prob.J.T @ gamma
        cost = 0.5 * float(dv @ Adv) + c_cost
        gnorm = float(np.linalg.norm(grad))
        res.grad_norms.append(gnorm)
        res.costs.append(cost)
        res.v, res.gamma, res.iterations = v, gamma, it
        if gnorm <= params.eps_r * _momentum_scale(prob, v, gamma):
            res.converged = True
            return res
        if it == params.max_iterations:
            break
        H = prob.hessian(G)
        try:
            step = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H, lower=True), grad)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"Newton matrix not positive definite at iteration {it}") from exc
        slope = float(grad @ step)
        lin, quad = float(Adv @ step), float(step @ (prob.A @ step))
        alpha = 1.0
        for _ in range(params.ls_max):
            trial = v + alpha * step
            change = prob.cost_change(gamma, trial, alpha, lin, quad)
            if change <= params.ls_c * alpha * slope:
                break
            alpha *= params.ls_rho
        else:
            # no sufficient decrease representable in floating point
            break
        res.step_lengths.append(alpha)
        res.decreases.append(change)
        v = trial
    return res


def check_optimality(prob: ConvexProblem, v, gamma, tol: float) -> dict:
    """Momentum balance, cone feasibility and impulse-map consistency."""
    v = np.asarray(v, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    scale = _momentum_scale(prob, v, gamma)
    momentum = float(np.linalg.norm(prob.A @ (v - prob.v_star) - prob.J.T @ gamma)) / scale

    feasible = True
    r = 0
    for cone in prob.cones:
        g = gamma[r:r + cone.rows]
        if isinstance(cone, FrictionCone):
            slack = 1e-12 * max(float(np.linalg.norm(g)), 1e-300)
            if g[2] < -slack or np.hypot(g[0], g[1]) > cone.mu * g[2] + slack:
                feasible = False
        r += cone.rows

    expected, _, _ = prob.impulses(prob.J @ v + prob.bias, with_hessian=False)
    gscale = max(float(np.linalg.norm(expected)), float(np.linalg.norm(gamma)), 1e-300)
    comp = float(np.linalg.norm(expected - gamma)) / gscale if len(gamma) else 0.0
    report = {
        "momentum": momentum,
        "momentum_ok": momentum <= tol,
        "feasible": feasible,
        "complementarity": comp,
        "complementarity_ok": comp <= tol,
    }
    report["passed"] = report["momentum_ok"] and feasible and report["complementarity_ok"]
    return report
