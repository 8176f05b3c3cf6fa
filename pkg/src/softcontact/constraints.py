"""Contact detection against analytic colliders and other bodies, and the
construction of constraint blocks (Jacobian, bias, stabilization velocity,
cone) for contacts and welds."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .mesh import vertex_normals

DEFAULT_MU = 0.5


@dataclass(frozen=True)
class FrictionCone:
    mu: float

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("friction coefficient must be non-negative")

    @property
    def rows(self) -> int:
        return 3


@dataclass(frozen=True)
class Bilateral:
    rows: int = 3

    def __post_init__(self):
        if self.rows < 1:
            raise ValueError("bilateral constraint needs at least one row")


# -- colliders -----------------------------------------------------------------

@dataclass
class HalfSpace:
    point: np.ndarray
    normal: np.ndarray
    mu: float = DEFAULT_MU
    attached_to: int | None = None  # prismatic body carrying this collider

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float)
        n = np.asarray(self.normal, dtype=float)
        self.normal = n / np.linalg.norm(n)

    def signed_distance(self, p, offset=np.zeros(3)):
        phi = (p - (self.point + offset)) @ self.normal
        return phi, np.broadcast_to(self.normal, p.shape).copy()


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    mu: float = DEFAULT_MU
    attached_to: int | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)

    def signed_distance(self, p, offset=np.zeros(3)):
        d = p - (self.center + offset)
        r = np.linalg.norm(d, axis=1)
        n = np.tile([0.0, 0.0, 1.0], (len(p), 1))
        nz = r > 0
        n[nz] = d[nz] / r[nz, None]
        return r - self.radius, n


@dataclass
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    mu: float = DEFAULT_MU
    attached_to: int | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)

    def signed_distance(self, p, offset=np.zeros(3)):
        d = p - (self.center + offset)
        h = self.half_extents
        excess = np.abs(d) - h
        outside = np.any(excess > 0, axis=1)
        phi = np.empty(len(p))
        n = np.zeros_like(d)
        # outside: distance to the closest point of the box
        diff = d - np.clip(d, -h, h)
        dist = np.linalg.norm(diff, axis=1)
        phi[outside] = dist[outside]
        n[outside] = diff[outside] / dist[outside, None]
        # inside: nearest face, ties to the lowest axis
        axis = np.argmax(excess, axis=1)
        rows = np.flatnonzero(~outside)
        phi[rows] = excess[rows, axis[rows]]
        sgn = np.where(d[rows, axis[rows]] >= 0, 1.0, -1.0)
        n[rows, axis[rows]] = sgn
        return phi, n


# -- contact pairs ---------------------------------------------------------------

def contact_frame(normal) -> np.ndarray:
    """Orthonormal frame with columns (t1, t2, n).

    The helper axis follows the largest normal component cyclically; ties
    resolve to the lowest index (+x first).
    """
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    k = int(np.argmax(np.abs(n)))
    helper = np.zeros(3)
    helper[(k + 1) % 3] = 1.0
    t1 = helper - (helper @ n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.column_stack([t1, t2, n])


@dataclass
class ContactPair:
    key: tuple
    body: int  # body owning the contacting vertex
    vertex: int
    frame: np.ndarray  # columns t1, t2, n; n points from the other side toward the vertex
    phi0: float
    mu: float
    other_body: int | None = None  # deformable body on the other side
    other_vertices: np.ndarray | None = None
    other_weights: np.ndarray | None = None
    prismatic: int | None = None  # prismatic body carrying the collider
    prismatic_axis: np.ndarray | None = None


@dataclass
class ContactSurface:
    """What the narrow phase needs to know about one deformable body."""

    body: int
    x: np.ndarray  # (n, 3) positions at the start of the step
    surface_vertices: np.ndarray
    surface_faces: np.ndarray
    mu: float


def combine_friction(a: float, b: float) -> float:
    return 0.0 if a + b == 0 else 2 * a * b / (a + b)


def _barycentric(p, a, b, c):
    v0, v1, v2 = b - a, c - a, p - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    return np.array([1 - v - w, v, w])


def _body_body_pairs(A: ContactSurface, B: ContactSurface, margin: float) -> list[ContactPair]:
    """Surface vertices of A against the convex hull of B."""
    lo_a, hi_a = A.x.min(0) - margin, A.x.max(0) + margin
    lo_b, hi_b = B.x.min(0), B.x.max(0)
    if np.any(hi_a < lo_b) or np.any(hi_b < lo_a):
        return []
    try:
        hull = ConvexHull(B.x)
    except QhullError:
        return []
    normals = hull.equations[:, :3]
    offsets = hull.equations[:, 3]
    verts = A.surface_vertices
    inside_box = np.all((A.x[verts] >= lo_b - margin) & (A.x[verts] <= hi_b + margin), axis=1)
    verts = verts[inside_box]
    if verts.size == 0:
        return []
    p = A.x[verts]
    s = p @ normals.T + offsets  # (nv, nf)
    smax = s.max(axis=1)
    vn = vertex_normals(A.x, A.surface_faces)[verts]
    window = max(margin, 1e-12)
    cand = s >= smax[:, None] - window
    score = np.where(cand, vn @ normals.T, np.inf)
    face = np.argmin(score, axis=1)
    phi = s[np.arange(len(verts)), face]
    given = [m for m in (A.mu, B.mu) if m is not None]
    mu = combine_friction(*given) if len(given) == 2 else (given[0] if given else DEFAULT_MU)
    pairs = []
    for i in np.flatnonzero(phi < margin):
        f = face[i]
        tri = hull.simplices[f]
        n = normals[f]
        witness = p[i] - phi[i] * n
        w = np.clip(_barycentric(witness, *B.x[tri]), 0.0, None)
        w /= w.sum()
        keep = w > 0
        pairs.append(ContactPair(
            key=("body", A.body, int(verts[i]), B.body),
            body=A.body, vertex=int(verts[i]), frame=contact_frame(n), phi0=float(phi[i]),
            mu=mu, other_body=B.body, other_vertices=tri[keep].copy(), other_weights=w[keep]))
    return pairs


def detect_contacts(surfaces: list[ContactSurface], colliders: list,
                    prismatic: dict | None = None, margin: float = 1e-3,
                    body_contact: bool = True) -> list[ContactPair]:
    """Point contacts of surface vertices against colliders and other bodies.

    ``prismatic`` maps a prismatic body id to (coordinate, axis); colliders
    attached to it are translated by coordinate * axis. Pairs are ordered
    by (body, vertex), colliders before bodies.
    """
    prismatic = prismatic or {}
    pairs: list[ContactPair] = []
    for surf in surfaces:
        verts = surf.surface_vertices
        p = surf.x[verts]
        for ci, col in enumerate(colliders):
            offset = np.zeros(3)
            axis = None
            if col.attached_to is not None:
                qp, axis = prismatic[col.attached_to]
                axis = np.asarray(axis, dtype=float)
                offset = qp * axis
            phi, normals = col.signed_distance(p, offset)
            mu = col.mu if surf.mu is None else combine_friction(surf.mu, col.mu)
            for i in np.flatnonzero(phi < margin):
                pairs.append(ContactPair(
                    key=("collider", surf.body, int(verts[i]), ci),
                    body=surf.body, vertex=int(verts[i]), frame=contact_frame(normals[i]),
                    phi0=float(phi[i]), mu=mu,
                    prismatic=col.attached_to, prismatic_axis=axis))
        if body_contact:
            for other in surfaces:
                if other.body != surf.body:
                    pairs.extend(_body_body_pairs(surf, other, margin))
    pairs.sort(key=lambda c: (c.body, c.vertex, c.key[0] != "collider", c.key))
    return pairs


# -- constraint blocks -----------------------------------------------------------

def vertex_dofs(v: int) -> np.ndarray:
    return np.arange(3 * v, 3 * v + 3)


@dataclass
class ConstraintBlock:
    key: tuple
    cone: FrictionCone | Bilateral
    jacobian: list  # [(body, local dofs, (r, len(dofs)) matrix)]
    bias: np.ndarray
    v_hat: np.ndarray

    @property
    def rows(self) -> int:
        return self.cone.rows

    def constraint_velocity(self, velocities: dict) -> np.ndarray:
        """v_c = J v + b given per-body velocity vectors."""
        vc = self.bias.copy()
        for body, dofs, J in self.jacobian:
            vc += J @ velocities[body][dofs]
        return vc


def contact_constraint(pair: ContactPair, dt: float, v_hat_max: float = 0.1) -> ConstraintBlock:
    """Three rows (t1, t2, n) of relative velocity in the contact frame."""
    Rt = pair.frame.T
    jac = [(pair.body, vertex_dofs(pair.vertex), Rt.copy())]
    if pair.other_body is not None:
        dofs = np.concatenate([vertex_dofs(v) for v in pair.other_vertices])
        J = -np.hstack([w * Rt for w in pair.other_weights])
        jac.append((pair.other_body, dofs, J))
    if pair.prismatic is not None:
        jac.append((pair.prismatic, np.array([0]), -(Rt @ pair.prismatic_axis)[:, None]))
    v_hat = np.array([0.0, 0.0, min(-pair.phi0 / dt, v_hat_max)])
    return ConstraintBlock(pair.key, FrictionCone(pair.mu), jac, np.zeros(3), v_hat)


@dataclass
class WeldTarget:
    """A world point, or a point riding on a prismatic body."""

    point: np.ndarray
    prismatic: int | None = None
    axis: np.ndarray | None = None

    def position(self, prismatic_q: float = 0.0) -> np.ndarray:
        p = np.asarray(self.point, dtype=float)
        if self.prismatic is None:
            return p
        return p + prismatic_q * np.asarray(self.axis, dtype=float)


def weld_constraint(body: int, vertex: int, target: WeldTarget, q0, dt: float,
                    prismatic_q: float = 0.0, key=None) -> ConstraintBlock:
    """Hold a vertex on a target point: g = p_vertex - p_target."""
    x = np.asarray(q0, dtype=float).reshape(-1, 3)
    g = x[vertex] - target.position(prismatic_q)
    jac = [(body, vertex_dofs(vertex), np.eye(3))]
    if target.prismatic is not None:
        jac.append((target.prismatic, np.array([0]), -np.asarray(target.axis, dtype=float)[:, None]))
    key = key if key is not None else ("weld", body, vertex)
    return ConstraintBlock(key, Bilateral(3), jac, np.zeros(3), -g / dt)


@dataclass
class ConstraintSet:
    blocks: list = field(default_factory=list)
    participating: dict = field(default_factory=dict)  # body -> sorted local dofs

    @property
    def num_rows(self) -> int:
        return sum(b.rows for b in self.blocks)

    def __len__(self):
        return len(self.blocks)

    @property
    def bias(self) -> np.ndarray:
        return np.concatenate([b.bias for b in self.blocks]) if self.blocks else np.zeros(0)

    @property
    def v_hat(self) -> np.ndarray:
        return np.concatenate([b.v_hat for b in self.blocks]) if self.blocks else np.zeros(0)

    @property
    def cones(self) -> list:
        return [b.cone for b in self.blocks]

    def dense_jacobian(self, columns: dict, width: int | None = None) -> np.ndarray:
        """Stack J into a dense matrix; ``columns[body]`` maps local dof -> column
        (an array indexed by local dof, -1 where absent)."""
        if width is None:
            width = 1 + max((int(c.max()) for c in columns.values() if len(c)), default=-1)
        J = np.zeros((self.num_rows, width))
        r = 0
        for blk in self.blocks:
            for body, dofs, Jb in blk.jacobian:
                cols = columns[body][dofs]
                if np.any(cols < 0):
                    raise KeyError(f"constraint {blk.key} touches dofs outside the column map")
                J[r:r + blk.rows][:, cols] += Jb
            r += blk.rows
        return J


def stack_constraints(blocks) -> ConstraintSet:
    """Collect blocks; participating dofs are the nonzero Jacobian columns."""
    blocks = list(blocks)
    part: dict = {}
    for blk in blocks:
        for body, dofs, J in blk.jacobian:
            nz = np.asarray(dofs)[np.any(J != 0, axis=0)]
            part.setdefault(body, set()).update(int(d) for d in nz)
    return ConstraintSet(blocks, {b: np.array(sorted(s), dtype=np.int64) for b, s in part.items()})
