import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from softcontact.constraints import Bilateral, FrictionCone
from softcontact.solver import (ContactParams, ConvexProblem, SolverParams, check_optimality,
                                constraint_impulse, delassus_diagonal, project_friction_cone,
                                regularization, solve_reduced)
from conftest import random_problem

vec3 = arrays(float, 3, elements=st.floats(-10, 10))


def test_projection_examples():
    assert project_friction_cone([0, 0, 1], 1.0) == pytest.approx([0, 0, 1])
    assert project_friction_cone([1, 0, -1], 1.0) == pytest.approx([0, 0, 0])
    assert project_friction_cone([1, 0, 0], 1.0) == pytest.approx([0.5, 0, 0.5])


@given(vec3, st.floats(0.0, 3.0))
def test_projection_is_euclidean_projection(y, mu):
    g = project_friction_cone(y, mu)
    scale = max(1.0, np.linalg.norm(y))
    # in the cone, idempotent, and y - g is normal to the cone at g (Moreau)
    assert np.hypot(g[0], g[1]) <= mu * g[2] + 1e-12 * scale
    assert np.allclose(project_friction_cone(g, mu), g, atol=1e-12 * scale)
    d = y - g
    assert abs(d @ g) <= 1e-10 * scale ** 2
    # d lies in the polar cone: mu |d_t| <= -d_n when the cone is non-degenerate
    if mu > 0:
        assert np.hypot(d[0], d[1]) <= -d[2] / mu + 1e-9 * scale / mu


def test_frictionless_cone_is_normal_ray():
    assert project_friction_cone([3.0, -2.0, 0.5], 0.0) == pytest.approx([0, 0, 0.5])
    assert project_friction_cone([3.0, -2.0, -0.5], 0.0) == pytest.approx([0, 0, 0])


def test_constraint_impulse_examples():
    g, pot = constraint_impulse([0.1, 0.2, 0.3], [0.1, 0.2, 0.3], 1e-3, FrictionCone(0.5))
    assert np.all(g == 0) and pot == 0
    g, _ = constraint_impulse([0.0, 0.0, 0.0], [0.01, 0.0, 0.0], 0.1, Bilateral(3))
    assert g == pytest.approx([0.1, 0, 0])
    g, _ = constraint_impulse([0.3, 0.0, 5.0], [0, 0, 0], [1e-3, 1e-3, 1e-5], FrictionCone(0.5))
    assert np.all(g == 0)


def test_potential_gradient_is_minus_impulse(rng):
    R = np.array([2e-3, 2e-3, 1e-4])
    for _ in range(20):
        vc, vh = rng.standard_normal(3), rng.standard_normal(3)
        g, _ = constraint_impulse(vc, vh, R, FrictionCone(0.7))
        h = 1e-7
        fd = np.array([(constraint_impulse(vc + h * e, vh, R, FrictionCone(0.7))[1]
                        - constraint_impulse(vc - h * e, vh, R, FrictionCone(0.7))[1]) / (2 * h)
                       for e in np.eye(3)])
        assert np.allclose(fd, -g, rtol=1e-5, atol=1e-6 * max(1, np.abs(g).max()))


def test_cost_gradient_hessian_consistent(rng):
    for _ in range(10):
        prob = random_problem(rng, n=9, contacts=2, welds=1)
        v = prob.v_star + 0.05 * rng.standard_normal(len(prob.v_star))
        g, _ = prob.gradient(v)
        h = 1e-6
        fd = np.array([(prob.cost(v + h * e) - prob.cost(v - h * e)) / (2 * h)
                       for e in np.eye(len(v))])
        assert np.linalg.norm(fd - g) <= 1e-5 * max(np.linalg.norm(g), 1.0)
        _, _, G = prob.impulses(prob.J @ v + prob.bias)
        H = prob.hessian(G)
        fdH = np.column_stack([(prob.gradient(v + h * e)[0] - prob.gradient(v - h * e)[0]) / (2 * h)
                               for e in np.eye(len(v))])
        assert np.linalg.norm(fdH - H) <= 1e-4 * np.linalg.norm(H)
        assert np.linalg.eigvalsh(H - prob.A).min() >= -1e-9 * np.linalg.norm(H)


def test_no_constraints_returns_free_motion(rng):
    A = np.diag([1.0, 2.0])
    prob = ConvexProblem(A, np.array([0.3, -0.4]), np.zeros((0, 2)), np.zeros(0), np.zeros(0), [],
                         np.zeros(0))
    res = solve_reduced(prob)
    assert res.converged and res.iterations == 0 and np.array_equal(res.v, prob.v_star)
    rep = check_optimality(prob, res.v, res.gamma, 1e-5)
    assert rep["passed"] and len(res.gamma) == 0


def test_single_weld_matches_hand_kkt():
    A = np.diag([2.0, 3.0, 4.0])
    v_star = np.array([1.0, -1.0, 0.5])
    v_hat = np.array([0.1, 0.0, -0.2])
    R = np.full(3, 1e-3)
    prob = ConvexProblem(A, v_star, np.eye(3), np.zeros(3), v_hat, [Bilateral(3)], R)
    res = solve_reduced(prob, SolverParams(eps_r=1e-12))
    # A (v - v*) = gamma, gamma = (v_hat - v) / R  =>  (A + I/R) v = A v* + v_hat / R
    v = (np.diag(A) * v_star + v_hat / R) / (np.diag(A) + 1 / R)
    assert np.allclose(res.v, v, rtol=1e-12)
    assert np.allclose(res.gamma, A @ (v - v_star), rtol=1e-9)
    assert np.allclose(res.v, v_hat, atol=1e-2)  # within regularization


def test_frictionless_contact_near_rigid():
    m = 2.0
    R = np.array([1e-3, 1e-3, 1e-8])
    prob = ConvexProblem(np.array([[m]]), np.array([-1.0]), np.array([[0.0], [0.0], [1.0]]),
                         np.zeros(3), np.zeros(3), [FrictionCone(0.0)], R)
    res = solve_reduced(prob)
    vn = res.v[0]
    compliance = R[2] * m / (1 + R[2] * m)  # closed form: gamma = m (v - v*), v = -R gamma
    assert -1e-6 <= vn <= 0
    assert vn == pytest.approx(-compliance, rel=1e-6)
    assert res.gamma[2] == pytest.approx(m * (vn + 1.0), rel=1e-6)  # solver tolerance


def test_solver_kkt_descent_and_warm_start(rng):
    for _ in range(20):
        prob = random_problem(rng, n=15, contacts=4, welds=1)
        params = SolverParams()
        res = solve_reduced(prob, params)
        assert res.converged
        assert check_optimality(prob, res.v, res.gamma, 10 * params.eps_r)["passed"]
        assert all(b < a for a, b in zip(res.costs, res.costs[1:]))
        warm = solve_reduced(prob, params, gamma0=res.gamma * (1 + 0.1 * rng.standard_normal()))
        assert warm.converged
        scale = max(np.linalg.norm(res.v), 1.0)
        assert np.linalg.norm(warm.v - res.v) <= 10 * params.eps_r * scale


def test_check_optimality_detects_perturbation(rng):
    prob = random_problem(rng, n=12, contacts=4)
    res = solve_reduced(prob)
    assert check_optimality(prob, res.v, res.gamma, 1e-5)["passed"]
    bad = res.gamma + 1e-2 * np.linalg.norm(res.gamma) * rng.standard_normal(len(res.gamma))
    rep = check_optimality(prob, res.v, bad, 1e-5)
    assert not rep["momentum_ok"] and not rep["passed"]
    infeasible = res.gamma.copy()
    infeasible[2] = -1.0
    assert not check_optimality(prob, res.v, infeasible, 1e-5)["feasible"]


def test_friction_opposes_sliding(rng):
    checked = 0
    for _ in range(20):
        prob = random_problem(rng, n=12, contacts=4, mu=0.2)
        res = solve_reduced(prob)
        vc = prob.J @ res.v + prob.bias
        for k in range(4):
            vt, gt = vc[3 * k:3 * k + 2], res.gamma[3 * k:3 * k + 2]
            if np.linalg.norm(vt) > 1e-8:
                assert gt @ vt <= 1e-12 * np.linalg.norm(gt) * np.linalg.norm(vt)
                checked += 1
    assert checked > 0


def test_regularization_recipe():
    cones = [FrictionCone(0.5), Bilateral(3)]
    w = np.array([2.0, 3.0])
    reg = regularization(cones, w, 0.01, ContactParams())
    assert reg.R[2] == pytest.approx(1 / (0.01 * 0.02 * 1e8))
    assert reg.R[:2] == pytest.approx([2e-3, 2e-3])
    assert reg.R[3:] == pytest.approx([3e-8] * 3)
    reg = regularization(cones, w, 0.01, ContactParams(dissipation_time=0.09))
    assert reg.R[2] == pytest.approx(1 / (0.01 * 0.1 * 1e8))


def test_delassus_diagonal():
    A = np.diag([2.0, 4.0, 8.0])
    J = np.eye(3)
    assert delassus_diagonal(A, J, [Bilateral(3)]) == pytest.approx([(0.5 + 0.25 + 0.125) / 3])
    assert len(delassus_diagonal(A, np.zeros((0, 3)), [])) == 0


def test_params_validation():
    with pytest.raises(ValueError):
        SolverParams(eps_r=0)
    with pytest.raises(ValueError):
        SolverParams(ls_rho=1.0)
