"""Linear tetrahedral meshes: element geometry, deformation gradients,
mass matrices and boundary extraction, plus small procedural generators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse import BlockSparseSym


class MeshError(ValueError):
    pass


@dataclass
class TetMesh:
    vertices: np.ndarray  # (n, 3) reference positions
    elements: np.ndarray  # (e, 4) vertex indices
    density: float

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, 4)
        if not self.density > 0:
            raise MeshError(f"density must be positive, got {self.density}")
        if self.elements.size and (self.elements.min() < 0
                                   or self.elements.max() >= len(self.vertices)):
            raise MeshError("element index out of range")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_dofs(self) -> int:
        return 3 * len(self.vertices)

    def translated(self, offset) -> "TetMesh":
        return TetMesh(self.vertices + np.asarray(offset, dtype=float), self.elements.copy(),
                       self.density)

    def scaled(self, s: float) -> "TetMesh":
        return TetMesh(self.vertices * s, self.elements.copy(), self.density)


@dataclass
class ElementGeometry:
    dm_inverse: np.ndarray  # (e, 3, 3)
    volume: np.ndarray  # (e,)
    grad_shape: np.ndarray  # (e, 4, 3): gradient of each nodal shape function


@dataclass
class BoundaryInfo:
    surface_vertices: np.ndarray
    surface_faces: np.ndarray  # (f, 3), counter-clockwise seen from outside
    face_element: np.ndarray  # owning element per face


def shape_matrices(x: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Edge matrices [x1-x0, x2-x0, x3-x0] per element, shape (e, 3, 3)."""
    p = x[elements]
    return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=-1)


def build_element_geometry(mesh: TetMesh) -> ElementGeometry:
    dm = shape_matrices(mesh.vertices, mesh.elements)
    det = np.linalg.det(dm)
    extent = np.ptp(mesh.vertices, axis=0) if mesh.num_vertices else np.zeros(3)
    tol = 1e-14 * float(np.linalg.norm(extent)) ** 3
    bad = np.flatnonzero(det <= tol)
    if bad.size:
        e = int(bad[0])
        kind = "inverted" if det[e] < -tol else "degenerate"
        raise MeshError(f"element {e} is {kind} (det Dm = {det[e]:.3e})")
    dm_inv = np.linalg.inv(dm)
    grad = np.empty((len(dm), 4, 3))
    grad[:, 1:, :] = dm_inv
    grad[:, 0, :] = -dm_inv.sum(axis=1)
    return ElementGeometry(dm_inv, det / 6.0, grad)


def deformation_gradient(geom: ElementGeometry, element: int, q, elements) -> np.ndarray:
    """F = Ds Dm^-1 for a single element; ``q`` is flat or (n, 3)."""
    x = np.asarray(q, dtype=float).reshape(-1, 3)
    idx = np.asarray(elements)[element]
    p = x[idx]
    ds = np.stack([p[1] - p[0], p[2] - p[0], p[3] - p[0]], axis=-1)
    return ds @ geom.dm_inverse[element]


def deformation_gradients(geom: ElementGeometry, elements, q) -> np.ndarray:
    """All element deformation gradients, shape (e, 3, 3)."""
    x = np.asarray(q, dtype=float).reshape(-1, 3)
    return shape_matrices(x, np.asarray(elements)) @ geom.dm_inverse


def element_dof_indices(elements: np.ndarray) -> np.ndarray:
    """(e, 12) global dof indices, node-major."""
    return (3 * elements[:, :, None] + np.arange(3)).reshape(len(elements), 12)


def assemble_element_matrices(elements, mats, num_vertices) -> BlockSparseSym:
    """Sum dense (e, 12, 12) element matrices into a block-sparse matrix."""
    dofs = element_dof_indices(np.asarray(elements))
    rows = np.repeat(dofs, 12, axis=1).ravel()
    cols = np.tile(dofs, (1, 12)).ravel()
    return BlockSparseSym.from_triplets(rows, cols, np.asarray(mats).ravel(),
                                        np.full(num_vertices, 3))


def assemble_mass_matrix(mesh: TetMesh, geom: ElementGeometry, lumped: bool = False) -> BlockSparseSym:
    """Consistent linear-tet mass matrix (or its row-sum lumping)."""
    scalar = (np.ones((4, 4)) + np.eye(4)) / 20.0
    if lumped:
        scalar = np.eye(4) / 4.0
    per = mesh.density * geom.volume[:, None, None] * scalar  # (e, 4, 4)
    mats = np.einsum("eab,ij->eaibj", per, np.eye(3)).reshape(-1, 12, 12)
    return assemble_element_matrices(mesh.elements, mats, mesh.num_vertices)


_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


def extract_boundary(mesh: TetMesh) -> BoundaryInfo:
    """Faces referenced by exactly one element, oriented outward."""
    faces = mesh.elements[:, _TET_FACES].reshape(-1, 3)
    owner = np.repeat(np.arange(len(mesh.elements)), 4)
    keys = np.sort(faces, axis=1)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        bad = uniq[np.flatnonzero(counts > 2)[0]]
        raise MeshError(f"non-manifold face {tuple(bad.tolist())} shared by more than two elements")
    once = counts[inverse] == 1
    surf = faces[once]
    return BoundaryInfo(np.unique(surf), surf, owner[once])


def face_normals(x: np.ndarray, faces: np.ndarray, normalize: bool = True) -> np.ndarray:
    p = x[faces]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    if normalize:
        n /= np.linalg.norm(n, axis=1, keepdims=True)
    return n


def vertex_normals(x: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted outward normals at every vertex (zero off the surface)."""
    n = face_normals(x, faces, normalize=False)
    out = np.zeros_like(x)
    for k in range(3):
        np.add.at(out, faces[:, k], n)
    norm = np.linalg.norm(out, axis=1, keepdims=True)
    np.divide(out, norm, out=out, where=norm > 0)
    return out


# -- generators ---------------------------------------------------------------

# Kuhn subdivision of the unit cube into 6 tets sharing the (0,0,0)-(1,1,1) diagonal;
# corners indexed by bits (x, y, z).
_KUHN = [
    (0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7),
    (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7),
]


def _lattice_tets(nx: int, ny: int, nz: int) -> np.ndarray:
    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                corner = [vid(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)) for c in range(8)]
                for t in _KUHN:
                    tets.append([corner[c] for c in t])
    return np.array(tets, dtype=np.int64)


def _orient(x: np.ndarray, tets: np.ndarray) -> np.ndarray:
    det = np.linalg.det(shape_matrices(x, tets))
    tets = tets.copy()
    flip = det < 0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()
    return tets


def box_mesh(size, cells, density: float, center=(0.0, 0.0, 0.0)) -> TetMesh:
    """Axis-aligned box split into cells[0]*cells[1]*cells[2] cubes of 6 tets."""
    nx, ny, nz = (int(c) for c in cells)
    sx, sy, sz = (float(s) for s in size)
    gx = np.linspace(-sx / 2, sx / 2, nx + 1)
    gy = np.linspace(-sy / 2, sy / 2, ny + 1)
    gz = np.linspace(-sz / 2, sz / 2, nz + 1)
    x = np.stack(np.meshgrid(gx, gy, gz, indexing="ij"), axis=-1).reshape(-1, 3)
    x = x + np.asarray(center, dtype=float)
    tets = _orient(x, _lattice_tets(nx, ny, nz))
    return TetMesh(x, tets, density)


def cube_five_tets(density: float = 1.0) -> TetMesh:
    """Unit cube split into 5 tets (one central, four corners)."""
    x = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)
    # corner bits: index = 4*i + 2*j + k
    tets = np.array([[0, 4, 2, 1], [6, 2, 4, 7], [5, 4, 1, 7], [3, 1, 2, 7], [4, 2, 1, 7]])
    return TetMesh(x, _orient(x, tets), density)


def wedge_mesh(r_inner: float, r_outer: float, angle0: float, angle1: float, depth: float,
               cells, density: float, center=(0.0, 0.0, 0.0)) -> TetMesh:
    """Annular-sector block in the x-z plane, extruded along y.

    ``cells`` = (angular, radial, depth) subdivisions. Angles in radians,
    measured from +x toward +z.
    """
    na, nr, nd = (int(c) for c in cells)
    angles = np.linspace(angle0, angle1, na + 1)
    radii = np.linspace(r_inner, r_outer, nr + 1)
    ys = np.linspace(-depth / 2, depth / 2, nd + 1)
    a, r, y = np.meshgrid(angles, radii, ys, indexing="ij")
    x = np.stack([r * np.cos(a), y, r * np.sin(a)], axis=-1).reshape(-1, 3)
    x = x + np.asarray(center, dtype=float)
    tets = _orient(x, _lattice_tets(na, nr, nd))
    return TetMesh(x, tets, density)
