"""VTK legacy ASCII snapshots of tetrahedral bodies.

Values are written with 17 significant digits so positions read back
bit-identically.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .material import corotated_strain
from .mesh import deformation_gradients

VTK_TETRA = 10


class SnapshotError(IOError):
    pass


def _fmt(rows) -> str:
    return "\n".join(" ".join(repr(float(x)) for x in r) for r in np.atleast_2d(rows))


def write_vtk(path, points, elements, velocity=None, strain=None, title="softcontact") -> Path:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    elements = np.asarray(elements, dtype=np.int64).reshape(-1, 4)
    n, e = len(points), len(elements)
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    if n:
        lines.append(_fmt(points))
    lines.append(f"CELLS {e} {5 * e}")
    lines.extend("4 " + " ".join(str(int(i)) for i in el) for el in elements)
    lines.append(f"CELL_TYPES {e}")
    lines.extend([str(VTK_TETRA)] * e)
    if velocity is not None and n:
        lines += [f"POINT_DATA {n}", "VECTORS velocity double",
                  _fmt(np.asarray(velocity, dtype=float).reshape(-1, 3))]
    if strain is not None and e:
        lines += [f"CELL_DATA {e}", "SCALARS strain double 1", "LOOKUP_TABLE default"]
        lines.extend(repr(float(s)) for s in np.asarray(strain, dtype=float).ravel())
    path = Path(path)
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise SnapshotError(f"cannot write snapshot {path}: {exc}") from exc
    return path


def read_vtk(path) -> dict:
    """Parse a file written by :func:`write_vtk` (or any legacy ASCII
    unstructured grid made only of tetrahedra).

    Returns a dict with ``points`` (n, 3), ``elements`` (e, 4) and, when
    present, ``velocity`` and ``strain``.
    """
    path = Path(path)
    try:
        tokens = path.read_text().split("\n")
    except OSError as exc:
        raise SnapshotError(f"cannot read {path}: {exc}") from exc
    if len(tokens) < 4 or not tokens[0].startswith("# vtk DataFile"):
        raise SnapshotError(f"{path}: not a VTK legacy file")
    if tokens[2].strip().upper() != "ASCII":
        raise SnapshotError(f"{path}: only ASCII files are supported")
    words = " ".join(tokens[3:]).split()
    out: dict = {}
    i = 0

    def take(k):
        nonlocal i
        chunk = words[i:i + k]
        if len(chunk) < k:
            raise SnapshotError(f"{path}: truncated data")
        i += k
        return chunk

    try:
        while i < len(words):
            key = words[i].upper()
            if key == "DATASET":
                if words[i + 1].upper() != "UNSTRUCTURED_GRID":
                    raise SnapshotError(f"{path}: dataset {words[i + 1]} is not supported")
                i += 2
            elif key == "POINTS":
                n = int(words[i + 1])
                i += 3
                out["points"] = np.array(take(3 * n), dtype=float).reshape(n, 3)
            elif key == "CELLS":
                e, size = int(words[i + 1]), int(words[i + 2])
                i += 3
                raw = np.array(take(size), dtype=np.int64)
                if size != 5 * e or np.any(raw[::5] != 4):
                    raise SnapshotError(f"{path}: only tetrahedral cells are supported")
                out["elements"] = raw.reshape(e, 5)[:, 1:]
            elif key == "CELL_TYPES":
                e = int(words[i + 1])
                i += 2
                types = np.array(take(e), dtype=int)
                if np.any(types != VTK_TETRA):
                    raise SnapshotError(f"{path}: cell type other than {VTK_TETRA} found")
            elif key in ("POINT_DATA", "CELL_DATA"):
                i += 2
            elif key == "VECTORS":
                name = words[i + 1]
                i += 3
                out[name] = np.array(take(3 * len(out["points"])), dtype=float).reshape(-1, 3)
            elif key == "SCALARS":
                name = words[i + 1]
                i += 4 if i + 3 < len(words) and words[i + 3].isdigit() else 3
                if words[i].upper() == "LOOKUP_TABLE":
                    i += 2
                out[name] = np.array(take(len(out["elements"])), dtype=float)
            else:
                raise SnapshotError(f"{path}: unexpected keyword {words[i]!r}")
    except (ValueError, IndexError, KeyError) as exc:
        raise SnapshotError(f"{path}: malformed file ({exc})") from exc
    if "points" not in out or "elements" not in out:
        raise SnapshotError(f"{path}: missing POINTS or CELLS")
    return out


def element_strain(body) -> np.ndarray:
    """Frobenius norm of the corotated strain per element at the body's
    current configuration and lagged rotation."""
    F = deformation_gradients(body.geom, body.mesh.elements, body.q)
    return np.linalg.norm(corotated_strain(F, body.state.r_hat), axis=(1, 2))


def write_snapshot(body, path) -> Path:
    return write_vtk(path, body.q.reshape(-1, 3), body.mesh.elements, body.v.reshape(-1, 3),
                     element_strain(body), title=body.name or "body")
