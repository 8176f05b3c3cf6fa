import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from softcontact.dynamics import DeformableBody
from softcontact.io import SnapshotError, element_strain, read_vtk, write_snapshot, write_vtk
from softcontact.material import LameParams
from conftest import unit_tet


def _tet_body():
    return DeformableBody(unit_tet(1.0), LameParams(1.0, 1.0))


def test_rest_tet_has_zero_strain(tmp_path):
    b = _tet_body()
    data = read_vtk(write_snapshot(b, tmp_path / "t.vtk"))
    assert data["strain"].tolist() == [0.0]
    assert np.array_equal(data["velocity"], np.zeros((4, 3)))


def test_stretched_tet_strain(tmp_path):
    b = _tet_body()
    q = b.mesh.vertices.copy()
    q[:, 0] *= 1.1  # F = diag(1.1, 1, 1) with identity lagged rotation
    b.q = q.ravel()
    assert element_strain(b)[0] == pytest.approx(0.1, rel=1e-12)
    data = read_vtk(write_snapshot(b, tmp_path / "t.vtk"))
    assert data["strain"][0] == pytest.approx(0.1, rel=1e-12)


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False)


@given(arrays(np.float64, (5, 3), elements=finite), arrays(np.float64, (5, 3), elements=finite),
       arrays(np.float64, 2, elements=st.floats(0, 10)))
def test_round_trip_is_bit_exact(tmp_path_factory, pts, vel, strain):
    path = tmp_path_factory.mktemp("vtk") / "r.vtk"
    elements = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])
    write_vtk(path, pts, elements, vel, strain)
    data = read_vtk(path)
    assert np.array_equal(data["points"], pts)
    assert np.array_equal(data["velocity"], vel)
    assert np.array_equal(data["strain"], strain)
    assert np.array_equal(data["elements"], elements)


def test_reader_rejects_bad_files(tmp_path):
    p = tmp_path / "x.vtk"
    p.write_text("hello\n")
    with pytest.raises(SnapshotError):
        read_vtk(p)
    write_vtk(p, np.eye(4, 3), [[0, 1, 2, 3]])
    text = p.read_text().replace("CELL_TYPES 1\n10", "CELL_TYPES 1\n12")
    p.write_text(text)
    with pytest.raises(SnapshotError, match="cell type"):
        read_vtk(p)
    with pytest.raises(SnapshotError):
        read_vtk(tmp_path / "missing.vtk")


def test_unwritable_path(tmp_path):
    with pytest.raises(SnapshotError):
        write_vtk(tmp_path / "no" / "such" / "dir.vtk", np.eye(4, 3), [[0, 1, 2, 3]])
