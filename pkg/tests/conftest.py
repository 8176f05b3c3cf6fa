import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.spatial.transform import Rotation

from softcontact.mesh import TetMesh, box_mesh

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_rotation(rng) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def random_spd(rng, n, cond=1e3):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


def unit_tet(density=1.0) -> TetMesh:
    return TetMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]], density)


def random_box_mesh(rng, max_tets=20) -> TetMesh:
    options = [c for c in [(1, 1, 1), (2, 1, 1), (1, 2, 1), (3, 1, 1)] if 6 * np.prod(c) <= max_tets]
    cells = options[rng.integers(len(options))]
    m = box_mesh(rng.uniform(0.5, 2.0, 3), cells, rng.uniform(100, 3000))
    # jitter vertices so elements are not all congruent
    return TetMesh(m.vertices + 0.05 * rng.standard_normal(m.vertices.shape), m.elements, m.density)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_block_spd(rng, num_nodes, density=0.15, prismatic=0):
    """Sparse SPD matrix over 3x3 node blocks plus ``prismatic`` trailing 1x1
    blocks, made diagonally dominant. Returns (dense, block_sizes)."""
    sizes = np.array([3] * num_nodes + [1] * prismatic)
    off = np.concatenate([[0], np.cumsum(sizes)])
    n = off[-1]
    A = np.zeros((n, n))
    nb = len(sizes)
    for i in range(nb):
        for j in range(i):
            if rng.random() < density:
                blk = rng.standard_normal((sizes[i], sizes[j]))
                A[off[i]:off[i + 1], off[j]:off[j + 1]] = blk
                A[off[j]:off[j + 1], off[i]:off[i + 1]] = blk.T
    for i in range(nb):
        B = rng.standard_normal((sizes[i], sizes[i]))
        A[off[i]:off[i + 1], off[i]:off[i + 1]] = B @ B.T
    A += np.diag(np.abs(A).sum(axis=1) + rng.uniform(0.1, 1.0, n))
    return A, sizes


def random_problem(rng, n=12, contacts=3, welds=0, mu=None, dt=0.01):
    """Random reduced problem with contact-like data: SPD A, unit-frame
    Jacobians on random dof triples, physically scaled regularization."""
    from softcontact.constraints import Bilateral, FrictionCone
    from softcontact.solver import ContactParams, ConvexProblem, delassus_diagonal, regularization
    A = random_spd(rng, n, cond=1e2)
    cones, rows = [], []
    for _ in range(contacts):
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        J = np.zeros((3, n))
        J[:, rng.choice(n, 3, replace=False)] = Q
        rows.append(J)
        cones.append(FrictionCone(rng.uniform(0.1, 1.5) if mu is None else mu))
    for _ in range(welds):
        J = np.zeros((3, n))
        J[:, rng.choice(n, 3, replace=False)] = np.eye(3)
        rows.append(J)
        cones.append(Bilateral(3))
    J = np.vstack(rows) if rows else np.zeros((0, n))
    v_star = rng.standard_normal(n)
    v_hat = np.zeros(len(J))
    r = 0
    for c in cones:
        if isinstance(c, FrictionCone):
            v_hat[r + 2] = rng.uniform(0, 0.1)
        else:
            v_hat[r:r + 3] = 0.01 * rng.standard_normal(3)
        r += c.rows
    w = delassus_diagonal(A, J, cones)
    R = regularization(cones, w, dt, ContactParams(stiffness=1e4)).R
    return ConvexProblem(A, v_star, J, np.zeros(len(J)), v_hat, cones, R)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
