import numpy as np
import pytest
from hypothesis import given, strategies as st

from oseen_pseudostress.mesh import Mesh, build_lshape, build_square, uniform_refine

PATTERNS = ["right", "left", "alternating"]


def _check_invariants(mesh, area):
    assert np.all(mesh.cell_areas > 0)
    counts = np.bincount(mesh.cell_edges.ravel(), minlength=mesh.n_edges)
    assert np.all((counts == 1) | (counts == 2))
    np.testing.assert_array_equal(counts == 1, mesh.boundary_edges)
    assert mesh.area == pytest.approx(area, rel=1e-12)
    # interior edges: the two local signs cancel
    total = np.zeros(mesh.n_edges)
    np.add.at(total, mesh.cell_edges.ravel(), mesh.edge_signs.ravel().astype(float))
    assert np.all(total[~mesh.boundary_edges] == 0)
    # Euler: V - E + F = 1 for a simply connected planar mesh
    assert mesh.n_vertices - mesh.n_edges + mesh.n_cells == 1


def test_unit_square_smallest():
    m = build_square(1)
    assert (m.n_cells, m.n_vertices, m.n_edges) == (2, 4, 5)
    assert m.area == pytest.approx(1.0)


def test_square_counts_and_h():
    m = build_square(20)
    assert m.n_cells == 800 and m.n_vertices == 441
    assert build_square(4).h_max == pytest.approx(np.sqrt(2) / 4)


def test_rejects_bad_N():
    with pytest.raises(ValueError):
        build_square(0)
    with pytest.raises(ValueError):
        build_lshape(3)


def test_lshape_counts():
    m = build_lshape(2)
    assert m.n_cells == 6 and m.area == pytest.approx(3.0)
    assert build_lshape(64).n_cells == 6144
    corner = np.all(m.vertices == 0.0, axis=1)
    assert corner.sum() == 1


@given(N=st.integers(1, 9), pattern=st.sampled_from(PATTERNS))
def test_square_invariants(N, pattern):
    _check_invariants(build_square(N, pattern), 1.0)


@given(half=st.integers(1, 5), pattern=st.sampled_from(PATTERNS))
def test_lshape_invariants(half, pattern):
    m = build_lshape(2 * half, pattern)
    _check_invariants(m, 3.0)
    assert np.sum(np.all(m.vertices == 0.0, axis=1)) == 1
    assert not np.any((m.vertices[:, 0] < 0) & (m.vertices[:, 1] < 0))


def test_biunit_square():
    m = build_square(6, bounds=(-1, 1))
    assert m.area == pytest.approx(4.0)
    lo, hi = m.bounding_box()
    np.testing.assert_allclose(lo, [-1, -1])
    np.testing.assert_allclose(hi, [1, 1])


def test_uniform_refine():
    m = build_square(1)
    r = uniform_refine(m)
    assert r.n_cells == 8
    assert r.area == pytest.approx(m.area, rel=1e-12)
    assert r.boundary_edges.sum() == 2 * m.boundary_edges.sum()
    assert r.h_max == pytest.approx(m.h_max / 2)
    _check_invariants(uniform_refine(build_lshape(4)), 3.0)


def test_determinism():
    a, b = build_square(7, "alternating"), build_square(7, "alternating")
    for name in ("vertices", "cells", "edges", "cell_edges", "edge_signs"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_rejects_clockwise_cells():
    with pytest.raises(ValueError):
        Mesh.from_cells([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])


def test_save_load_roundtrip(tmp_path):
    m = build_lshape(4, "alternating")
    path = tmp_path / "mesh.txt"
    m.save_txt(path)
    header = path.read_text().splitlines()[0].split()
    assert [int(t) for t in header] == [m.n_vertices, m.n_edges, m.n_cells]
    r = Mesh.load_txt(path)
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.cells, m.cells)
