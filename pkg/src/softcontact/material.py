"""Linear corotational material with a lagged rotation.

Energy density Psi = mu |E|_F^2 + lambda/2 tr(E)^2 with the corotated linear
strain E = sym(R^T F) - I. R is frozen at the polar rotation of the previous
step's deformation gradient, which makes the model quadratic in the nodal
positions and its Hessian constant and positive semi-definite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import ElementGeometry, TetMesh, assemble_element_matrices, deformation_gradients
from .sparse import BlockSparseSym

INVERSION_THRESHOLD = 1e-10


@dataclass(frozen=True)
class LameParams:
    mu: float
    lam: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")


@dataclass(frozen=True)
class RayleighParams:
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("Rayleigh coefficients must be non-negative")


@dataclass(frozen=True)
class MaterialState:
    """Per-element lagged rotations, shape (e, 3, 3)."""

    r_hat: np.ndarray

    @classmethod
    def identity(cls, num_elements: int) -> "MaterialState":
        return cls(np.tile(np.eye(3), (num_elements, 1, 1)))


def lame_from_young_poisson(E: float, nu: float) -> LameParams:
    if not E > 0:
        raise ValueError(f"Young's modulus must be positive, got {E}")
    if not 0 <= nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    return LameParams(E / (2 * (1 + nu)), E * nu / ((1 + nu) * (1 - 2 * nu)))


class InvertedElement(ValueError):
    pass


def polar_rotations(F, tol: float = 1e-12, max_iter: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Rotation factors of a batch of matrices (..., 3, 3).

    Scaled Newton iteration X <- (g X + X^-T / g) / 2 with Higham's scaling.
    Returns (R, ok) where ``ok`` is False for inverted or near-singular inputs;
    their R entries are undefined.
    """
    F = np.asarray(F, dtype=float)
    shape = F.shape
    X = F.reshape(-1, 3, 3).copy()
    det = np.linalg.det(X)
    ok = det > INVERSION_THRESHOLD
    X[~ok] = np.eye(3)
    active = np.ones(len(X), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        Xa = X[active]
        Xinv = np.linalg.inv(Xa)
        g = np.sqrt(np.linalg.norm(Xinv, axis=(1, 2)) / np.linalg.norm(Xa, axis=(1, 2)))
        Xn = 0.5 * (g[:, None, None] * Xa + np.swapaxes(Xinv, 1, 2) / g[:, None, None])
        diff = np.linalg.norm(Xn - Xa, axis=(1, 2))
        X[active] = Xn
        idx = np.flatnonzero(active)
        active[idx[diff <= tol * np.linalg.norm(Xn, axis=(1, 2))]] = False
    return X.reshape(shape), ok.reshape(shape[:-2])


def polar_rotation(F) -> np.ndarray:
    R, ok = polar_rotations(np.asarray(F)[None])
    if not ok[0]:
        raise InvertedElement(f"det(F) = {np.linalg.det(F):.3e} is not positive")
    return R[0]


def corotated_strain(F, r_hat) -> np.ndarray:
    Fh = np.swapaxes(r_hat, -1, -2) @ F
    return 0.5 * (Fh + np.swapaxes(Fh, -1, -2)) - np.eye(3)


def energy_density(F, state_r_hat, lame: LameParams):
    E = corotated_strain(F, state_r_hat)
    tr = np.trace(E, axis1=-2, axis2=-1)
    return lame.mu * np.sum(E * E, axis=(-2, -1)) + 0.5 * lame.lam * tr ** 2


def first_piola(F, state_r_hat, lame: LameParams) -> np.ndarray:
    E = corotated_strain(F, state_r_hat)
    tr = np.trace(E, axis1=-2, axis2=-1)
    return state_r_hat @ (2 * lame.mu * E + lame.lam * tr[..., None, None] * np.eye(3))


def hessian_density(r_hat, lame: LameParams) -> np.ndarray:
    """d2 Psi / dF_ij dF_kl = mu (d_ik d_jl + R_il R_kj) + lambda R_ij R_kl."""
    R = np.asarray(r_hat, dtype=float)
    d = np.eye(3)
    return (lame.mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,kj->ijkl", R, R))
            + lame.lam * np.einsum("ij,kl->ijkl", R, R))


def element_stiffness(geom: ElementGeometry, r_hat: np.ndarray, lame: LameParams) -> np.ndarray:
    """Dense (e, 12, 12) element stiffness blocks V G^T H G, node-major."""
    G = geom.grad_shape  # (e, 4, 3)
    W = G @ np.swapaxes(r_hat, 1, 2)  # rows: (R g_b)^T
    GG = G @ np.swapaxes(G, 1, 2)  # (e, 4, 4)
    eye = np.eye(3)
    K = (lame.mu * np.einsum("ebc,ik->ebick", GG, eye)
         + lame.mu * np.einsum("eci,ebk->ebick", W, W)
         + lame.lam * np.einsum("ebi,eck->ebick", W, W))
    return (geom.volume[:, None, None, None, None] * K).reshape(-1, 12, 12)


def elastic_energy(mesh: TetMesh, geom: ElementGeometry, q, state: MaterialState,
                   lame: LameParams) -> float:
    F = deformation_gradients(geom, mesh.elements, q)
    return float(np.dot(geom.volume, energy_density(F, state.r_hat, lame)))


def elastic_force(mesh: TetMesh, geom: ElementGeometry, q, state: MaterialState,
                  lame: LameParams) -> np.ndarray:
    """f_e = -dE/dq, flat (3n,)."""
    F = deformation_gradients(geom, mesh.elements, q)
    P = first_piola(F, state.r_hat, lame)
    per_node = -geom.volume[:, None, None] * (geom.grad_shape @ np.swapaxes(P, 1, 2))  # (e,4,3)
    f = np.zeros((mesh.num_vertices, 3))
    np.add.at(f, mesh.elements, per_node)
    return f.ravel()


def stiffness_matrix(mesh: TetMesh, geom: ElementGeometry, state: MaterialState,
                     lame: LameParams) -> BlockSparseSym:
    return assemble_element_matrices(mesh.elements, element_stiffness(geom, state.r_hat, lame),
                                     mesh.num_vertices)


def elastic_force_and_stiffness(mesh: TetMesh, geom: ElementGeometry, q, state: MaterialState,
                                lame: LameParams) -> tuple[np.ndarray, BlockSparseSym]:
    return (elastic_force(mesh, geom, q, state, lame),
            stiffness_matrix(mesh, geom, state, lame))


def damping_force(M: BlockSparseSym, K: BlockSparseSym, v, rayleigh: RayleighParams) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return -(rayleigh.alpha * (M @ v) + rayleigh.beta * (K @ v))


def update_lagged_rotation(mesh: TetMesh, geom: ElementGeometry, q0,
                           state: MaterialState) -> tuple[MaterialState, int]:
    """New lagged rotations from the accepted configuration ``q0``.

    Elements whose deformation gradient is inverted keep their previous
    rotation. Returns the new state and the number of such elements.
    """
    F0 = deformation_gradients(geom, mesh.elements, q0)
    R, ok = polar_rotations(F0)
    R[~ok] = state.r_hat[~ok]
    return MaterialState(R), int(np.count_nonzero(~ok))
