import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wgls.polymesh import (MeshFormatError, MeshValidationError, PolyMesh, classify_boundary,
                           generate_nonconvex_polygonal, generate_triangular, is_convex, load_mesh, save_mesh)

def brute_diameter(xy):
    return max(np.linalg.norm(a - b) for a, b in itertools.combinations(xy, 2))


def facets_on(mesh, axis, value):
    mid = mesh.facet_midpoints
    return {f for f in mesh.boundary_facets if abs(mid[f, axis] - value) < 1e-12}


@pytest.mark.parametrize("level, ncell, nvert, nfacet", [(0, 2, 4, 5), (1, 8, 9, 16), (2, 32, 25, 56)])
def test_triangular_counts(level, ncell, nvert, nfacet):
    m = generate_triangular(level)
    assert (m.n_cells, m.n_vertices, m.n_facets) == (ncell, nvert, nfacet)


def test_triangular_diagonal_lower_left_to_upper_right():
    m = generate_triangular(0)
    diag = [f for f in range(m.n_facets) if len(m.facet(f).cell_ids) == 2]
    assert len(diag) == 1
    ends = m.vertices[list(m.facets[diag[0]])]
    assert {tuple(p) for p in ends} == {(-1.0, -1.0), (1.0, 1.0)}


@pytest.mark.parametrize("gen, levels", [(generate_triangular, range(0, 5)),
                                         (generate_nonconvex_polygonal, range(1, 5))])
def test_partition_and_normals(gen, levels):
    for level in levels:
        m = gen(level)
        assert m.cell_areas.sum() == pytest.approx(4.0, rel=1e-12)
        for f in m.interior_facets:
            fc = m.facet(f)
            normals = list(fc.unit_normal_per_cell.values())
            assert len(normals) == 2
            assert np.abs(normals[0] + normals[1]).max() <= 1e-14
        for f in range(m.n_facets):
            for n in m.facet(f).unit_normal_per_cell.values():
                assert abs(np.linalg.norm(n) - 1.0) <= 1e-14


@pytest.mark.parametrize("gen, level", [(generate_triangular, 2), (generate_nonconvex_polygonal, 2)])
def test_cell_geometry_matches_brute_force(gen, level):
    m = gen(level)
    for c in range(m.n_cells):
        cell = m.cell(c)
        xy = cell.vertices
        x, y = xy[:, 0], xy[:, 1]
        shoelace = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        assert shoelace > 0
        assert cell.area == pytest.approx(shoelace, rel=1e-14)
        assert cell.diameter == pytest.approx(brute_diameter(xy), rel=1e-14)
        for f in cell.facet_ids:
            assert c in m.facet(f).cell_ids
    assert m.h == pytest.approx(max(brute_diameter(m.cell(c).vertices) for c in range(m.n_cells)))


def test_triangular_h_halves_exactly():
    hs = [generate_triangular(level).h for level in range(6)]
    for a, b in zip(hs, hs[1:]):
        assert b / a == 0.5


def test_nonconvex_family():
    m = generate_nonconvex_polygonal(1)
    assert m.n_cells == 8
    assert m.cell_areas.sum() == pytest.approx(4.0, rel=1e-12)
    big = [c for c in range(m.n_cells) if m.cell_nvert[c] > 4]
    small = [c for c in range(m.n_cells) if m.cell_nvert[c] == 4]
    assert len(big) == 4 and len(small) == 4
    for c in big:
        assert not m.is_cell_convex(c)
        assert m.cell_areas[c] == pytest.approx(3 * m.cell_areas[small[0]])
    for c in small:
        assert m.is_cell_convex(c)


def test_nonconvex_level2_diameter():
    m = generate_nonconvex_polygonal(2)
    side = 0.25  # small square side at level 2 on (-1, 1)^2
    # L-cell spans a 2x2 block of small squares: its diameter is the block diagonal
    assert m.h == pytest.approx(2 * np.sqrt(2) * side, rel=1e-14)
    assert m.h == pytest.approx(max(brute_diameter(m.cell(c).vertices) for c in range(m.n_cells)), rel=1e-14)


def test_nonconvex_family_is_conforming():
    m = generate_nonconvex_polygonal(3)
    # every facet is shared by at most two cells and boundary facets cover the box perimeter
    assert np.all(m.facet_cells[:, 0] >= 0)
    assert m.facet_lengths[m.boundary_facets].sum() == pytest.approx(8.0, rel=1e-13)


def test_is_convex():
    assert is_convex(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float))
    L = np.array([[0, 0], [1, 0], [1, .5], [.5, .5], [.5, 1], [0, 1]], float)
    assert not is_convex(L)


@pytest.mark.parametrize("beta, expected", [
    ((1.0, 1.0), [(0, -1.0), (1, -1.0)]),
    ((-1.0, 0.0), [(0, 1.0)]),
    ((0.0, 1.0), [(1, -1.0)]),
])
def test_classify_boundary(beta, expected):
    m = generate_triangular(2)
    bc = classify_boundary(m, beta)
    want = set().union(*(facets_on(m, axis, v) for axis, v in expected))
    assert bc.inflow_facets == want
    assert bc.inflow_facets | bc.nonin_facets == set(m.boundary_facets.tolist())
    assert not bc.inflow_facets & bc.nonin_facets


def test_characteristic_facets_are_not_inflow():
    m = generate_triangular(2)
    bc = classify_boundary(m, (0.0, 1.0))
    side = facets_on(m, 0, -1.0) | facets_on(m, 0, 1.0)
    assert side <= bc.nonin_facets


@settings(max_examples=30, deadline=None)
@given(bx=st.floats(-3, 3), by=st.floats(-3, 3), scale=st.floats(1e-3, 1e3))
def test_classification_scale_invariant(bx, by, scale):
    m = generate_nonconvex_polygonal(1)
    a = classify_boundary(m, (bx, by))
    b = classify_boundary(m, (scale * bx, scale * by))
    assert a.inflow_facets == b.inflow_facets


def test_variable_beta_sampled_at_midpoints():
    m = generate_triangular(1)
    bc = classify_boundary(m, lambda p: np.stack([-p[..., 1], p[..., 0]], axis=-1))
    # rotation: on each side exactly one of the two facets is inflow
    want = set()
    for f in m.boundary_facets:
        x, y = m.facet_midpoints[f]
        n = m.facet(f).unit_normal_per_cell[m.facet(f).cell_ids[0]]
        if -y * n[0] + x * n[1] < 0:
            want.add(int(f))
    assert bc.inflow_facets == want and len(want) == 4


@pytest.mark.parametrize("gen, level", [(generate_triangular, 1), (generate_nonconvex_polygonal, 2)])
def test_save_load_round_trip(tmp_path, gen, level):
    m = gen(level)
    path = tmp_path / "mesh.txt"
    save_mesh(m, path)
    m2 = load_mesh(path)
    assert m2.n_vertices == m.n_vertices and m2.n_cells == m.n_cells
    assert np.array_equal(m2.vertices, m.vertices)
    for c in range(m.n_cells):
        assert np.array_equal(m2.cell_loop(c), m.cell_loop(c))


def test_save_uses_17_digits(tmp_path):
    v = np.array([[0.0, 0.0], [1.0 / 3.0, 0.0], [0.0, 2.0 / 3.0]])
    path = tmp_path / "tri.txt"
    save_mesh(PolyMesh(v, [[0, 1, 2]]), path)
    assert np.array_equal(load_mesh(path).vertices, v)


@pytest.mark.parametrize("text, lineno", [
    ("", 1),
    ("polymesh 3\n", 1),
    ("polymesh 2\nvertices 2\n0 0\n", 4),
    ("polymesh 2\nvertices 1\n0 zero\ncells 0\n", 3),
    ("polymesh 2\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n3 0 1\n", 7),
    ("polymesh 2\nvertices 3\n0 0\n1 0\n0 1\ncells 1\n3 0 1 2\nextra\n", 8),
])
def test_parse_errors_carry_line_numbers(tmp_path, text, lineno):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(MeshFormatError) as info:
        load_mesh(path)
    assert info.value.lineno == lineno
    assert f"line {lineno}" in str(info.value)


@pytest.mark.parametrize("cells", [
    [[0, 1, 5]],            # missing vertex
    [[0, 1, 1, 2]],         # repeated vertex
    [[0, 1, 3]],            # collinear, zero area
    [[0, 1, 2, 3], [0, 1, 2, 3], [0, 1, 2, 3]],  # facet in three cells
])
def test_validation_errors(cells):
    v = np.array([[0, 0], [1, 0], [1, 1], [2, 0]], float)
    with pytest.raises(MeshValidationError):
        PolyMesh(v, cells)


def test_self_intersecting_cell_rejected():
    v = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], float)
    with pytest.raises(MeshValidationError):
        PolyMesh(v, [[0, 1, 2, 3]])


def test_clockwise_loop_is_reoriented():
    v = np.array([[0, 0], [1, 0], [0, 1]], float)
    m = PolyMesh(v, [[0, 2, 1]])
    assert m.cell_areas[0] == pytest.approx(0.5)
    n = m.cell_normals(0)
    mid = m.facet_midpoints[m.cell_facet_ids(0)]
    assert np.all(np.einsum("ij,ij->i", n, mid - m.cell_centroids[0]) > 0)
