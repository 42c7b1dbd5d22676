"""Mesh core: OBJ round trips, normalization, adjacency, Laplacian entries,
normals, and the curvature definition checked against hand-evaluated cases."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshmark.mesh import (Mesh, MeshValidationError, Neighborhood, ObjParseError,
                           build_neighborhood, laplacian_matrix,
                           normalize_unit_cube, parse_obj, vertex_curvature,
                           vertex_normals, write_obj)
from meshmark.synth import icosphere


def square_pyramid() -> Mesh:
    # apex 4 above a base of half-width 1 at height 1; side faces outward
    verts = [(1, 1, 0), (-1, 1, 0), (-1, -1, 0), (1, -1, 0), (0, 0, 1)]
    faces = [(4, 0, 1), (4, 1, 2), (4, 2, 3), (4, 3, 0)]
    return Mesh(np.array(verts, dtype=float), np.array(faces))


def flat_grid(n: int = 5) -> Mesh:
    xs, ys = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float))
    verts = np.stack([xs.ravel(), ys.ravel(), np.zeros(n * n)], axis=1)
    faces = []
    for r in range(n - 1):
        for c in range(n - 1):
            a = r * n + c
            faces += [(a, a + 1, a + n), (a + 1, a + n + 1, a + n)]
    return Mesh(verts, np.array(faces))


# --- OBJ ----------------------------------------------------------------------

def test_parse_minimal_obj():
    m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3")
    assert m.n_vertices == 3 and m.n_faces == 1
    assert tuple(m.faces[0]) == (0, 1, 2)
    assert not m.normalized


def test_parse_out_of_range_face_index():
    with pytest.raises(MeshValidationError, match="out of range"):
        parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 5")


def test_parse_quad_fan_triangulation():
    m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4")
    assert m.n_faces == 2
    assert tuple(m.faces[0]) == (0, 1, 2)
    assert tuple(m.faces[1]) == (0, 2, 3)


def test_parse_malformed_number_reports_line():
    with pytest.raises(ObjParseError, match="line 2"):
        parse_obj("v 0 0 0\nv zero 0 0")


def test_parse_slashed_face_tokens():
    m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3/1/1")
    assert m.n_faces == 1


def test_parse_rejects_zero_index():
    with pytest.raises(MeshValidationError, match="out of range"):
        parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2")


def test_write_obj_round_trip_triangle():
    m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3")
    again = parse_obj(write_obj(m))
    assert np.array_equal(again.vertices, m.vertices)
    assert np.array_equal(again.faces, m.faces)


def test_write_obj_empty_mesh():
    m = Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    assert write_obj(m) == ""


def test_write_obj_round_trip_icosphere():
    m, _ = normalize_unit_cube(icosphere(3))
    again = parse_obj(write_obj(m))
    assert again.n_vertices == 642
    assert np.abs(again.vertices - m.vertices).max() < 1e-6
    assert np.array_equal(again.faces, m.faces)


def test_mesh_rejects_repeated_vertex_in_face():
    with pytest.raises(MeshValidationError, match="repeats"):
        Mesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))


# --- normalization --------------------------------------------------------------

def test_normalize_segment():
    m = Mesh(np.array([[0.0, 0, 0], [2.0, 0, 0]]), np.zeros((0, 3), dtype=np.int64))
    out, t = normalize_unit_cube(m)
    assert np.allclose(out.vertices, [[-0.5, 0, 0], [0.5, 0, 0]])
    assert np.allclose(t.center, [1, 0, 0]) and t.scale == 2.0
    assert out.normalized


def test_normalize_idempotent_on_cube_corners():
    corners = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5)
                        for z in (-0.5, 0.5)])
    m = Mesh(corners, np.zeros((0, 3), dtype=np.int64))
    out, _ = normalize_unit_cube(m)
    assert np.abs(out.vertices - corners).max() < 1e-9


def test_normalize_random_cloud_against_bbox_oracle(rng):
    pts = rng.normal(size=(100, 3)) * [3.0, 1.0, 0.5]
    out, t = normalize_unit_cube(Mesh(pts, np.zeros((0, 3), dtype=np.int64)))
    # independent bounding-box computation
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    assert t.scale == pytest.approx((hi - lo).max(), abs=0)
    assert np.abs(out.vertices).max() == pytest.approx(0.5, abs=1e-12)
    widest = np.argmax(hi - lo)
    assert np.abs(out.vertices[:, widest]).max() == pytest.approx(0.5, abs=1e-12)


def test_normalize_inverse_round_trip(rng):
    pts = rng.normal(size=(50, 3))
    mesh = Mesh(pts, np.zeros((0, 3), dtype=np.int64))
    out, t = normalize_unit_cube(mesh)
    assert np.abs(t.to_original(out.vertices) - pts).max() < 1e-9


def test_normalize_rejects_degenerate():
    m = Mesh(np.zeros((4, 3)), np.zeros((0, 3), dtype=np.int64))
    with pytest.raises(MeshValidationError, match="degenerate"):
        normalize_unit_cube(m)


# --- neighborhood ----------------------------------------------------------------

def test_single_triangle_degrees():
    m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3")
    nb = build_neighborhood(m)
    assert nb.degrees.tolist() == [2, 2, 2]


def test_shared_edge_counted_once():
    m = Mesh(np.zeros((4, 3)) + np.arange(4)[:, None],
             np.array([[0, 1, 2], [1, 2, 3]]))
    nb = build_neighborhood(m)
    assert nb.degrees.tolist() == [2, 3, 3, 2]


def test_icosphere_degree_census_euler_oracle():
    # subdividing an icosahedron keeps 12 valence-5 vertices; all others are 6
    m = icosphere(3)
    nb = build_neighborhood(m)
    counts = np.bincount(nb.degrees)
    assert counts[5] == 12 and counts[6] == 630
    # Euler characteristic of a closed genus-0 mesh
    e = nb.degrees.sum() // 2
    assert m.n_vertices - e + m.n_faces == 2


def test_isolated_vertex_has_empty_list():
    m = Mesh(np.arange(12, dtype=float).reshape(4, 3), np.array([[0, 1, 2]]))
    nb = build_neighborhood(m)
    assert nb.degree(3) == 0 and len(nb.neighbors(3)) == 0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 9)),
                min_size=1, max_size=20))
def test_neighborhood_symmetry_property(face_list):
    faces = [f for f in face_list if len(set(f)) == 3]
    if not faces:
        return
    m = Mesh(np.random.default_rng(0).normal(size=(10, 3)), np.array(faces))
    nb = build_neighborhood(m)
    for i in range(10):
        for j in nb.neighbors(i):
            assert i in nb.neighbors(int(j))
        assert nb.degree(i) == len(nb.neighbors(i))
        assert i not in nb.neighbors(i)
        assert (np.diff(nb.neighbors(i)) > 0).all()  # sorted, unique


# --- Laplacian --------------------------------------------------------------------

def test_laplacian_triangle_rows():
    m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3")
    lap = laplacian_matrix(build_neighborhood(m))
    for i in range(3):
        row = lap.row(i)
        assert row[i] == 1.0
        off = [v for c, v in row.items() if c != i]
        assert off == [-0.5, -0.5]


def test_laplacian_path_graph_rows():
    # path 0-1-2 built directly as a neighborhood
    offsets = np.array([0, 1, 3, 4])
    targets = np.array([1, 0, 2, 1])
    lap = laplacian_matrix(Neighborhood(offsets, targets, 3))
    assert lap.row(1) == {0: -0.5, 1: 1.0, 2: -0.5}
    assert lap.row(0) == {0: 1.0, 1: -1.0}
    assert lap.row(2) == {1: -1.0, 2: 1.0}


def test_laplacian_degree_zero_row_is_identity():
    nb = build_neighborhood(Mesh(np.arange(12, dtype=float).reshape(4, 3),
                                 np.array([[0, 1, 2]])))
    lap = laplacian_matrix(nb)
    assert lap.row(3) == {3: 1.0}


def test_laplacian_row_sums_zero_icosphere():
    lap = laplacian_matrix(build_neighborhood(icosphere(3)))
    sums = lap.matvec(np.ones((lap.shape[0], 1)))
    assert np.abs(sums).max() < 1e-12


# --- normals ---------------------------------------------------------------------

def test_flat_grid_normals():
    m = flat_grid()
    n = vertex_normals(m)
    assert np.abs(n - [0.0, 0.0, 1.0]).max() < 1e-12


def test_sphere_normals_align_with_radial_direction():
    m = icosphere(3)
    n = vertex_normals(m)
    radial = m.vertices / np.linalg.norm(m.vertices, axis=1)[:, None]
    assert (np.einsum("ij,ij->i", n, radial) > 0.99).all()
    assert np.abs(np.linalg.norm(n, axis=1) - 1).max() < 1e-12


def test_isolated_vertex_normal_fallback():
    m = Mesh(np.arange(12, dtype=float).reshape(4, 3), np.array([[0, 1, 2]]))
    n = vertex_normals(m)
    assert tuple(n[3]) == (0.0, 0.0, 1.0)


# --- curvature -------------------------------------------------------------------

def test_flat_grid_interior_curvature_zero():
    m = flat_grid()
    nb = build_neighborhood(m)
    cur = vertex_curvature(m, nb, vertex_normals(m))
    interior = [r * 5 + c for r in range(1, 4) for c in range(1, 4)]
    assert np.abs(cur[interior]).max() < 1e-9


def test_tetrahedron_apex_curvature_negative():
    verts = np.array([[1, 1, 0], [-1, 0, 0], [0, -1, 0], [0, 0, 1.5]])
    faces = np.array([[3, 0, 1], [3, 1, 2], [3, 2, 0], [0, 2, 1]])
    m = Mesh(verts, faces)
    nb = build_neighborhood(m)
    cur = vertex_curvature(m, nb, vertex_normals(m))
    assert cur[3] < 0


def test_pyramid_apex_curvature_hand_value():
    # hand evaluation at the apex: each neighbor direction is (+-1,+-1,-1),
    # apex normal (0,0,1) by symmetry, so cos(theta) = -1/sqrt(3) four times
    m = square_pyramid()
    nb = build_neighborhood(m)
    normals = vertex_normals(m)
    assert np.allclose(normals[4], [0, 0, 1])
    cur = vertex_curvature(m, nb, normals)
    assert cur[4] == pytest.approx(-4.0 / np.sqrt(3.0), abs=1e-12)


def test_curvature_degree_zero_vertex_is_zero():
    m = Mesh(np.arange(12, dtype=float).reshape(4, 3), np.array([[0, 1, 2]]))
    nb = build_neighborhood(m)
    cur = vertex_curvature(m, nb, vertex_normals(m))
    assert cur[3] == 0.0


def test_curvature_errors_on_coincident_neighbors():
    m = Mesh(np.array([[0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0]]),
             np.array([[0, 1, 2]]))
    nb = build_neighborhood(m)
    with pytest.raises(MeshValidationError, match="coincident"):
        vertex_curvature(m, nb, vertex_normals(m))


def _rotation(deg_x, deg_y, deg_z):
    from meshmark.attacks import rotation_matrix
    return rotation_matrix(np.array([deg_x, deg_y, deg_z]))


@settings(max_examples=20, deadline=None)
@given(st.floats(-180, 180), st.floats(-180, 180), st.floats(-180, 180))
def test_curvature_rigid_rotation_invariance(ax, ay, az):
    m = icosphere(1)
    nb = build_neighborhood(m)
    cur = vertex_curvature(m, nb, vertex_normals(m))
    r = _rotation(ax, ay, az)
    rotated = m.with_vertices(m.vertices @ r.T)
    cur_rot = vertex_curvature(rotated, nb, vertex_normals(rotated))
    assert np.abs(cur - cur_rot).max() < 1e-6


def test_curvature_uniform_scale_invariance():
    m = icosphere(1)
    nb = build_neighborhood(m)
    cur = vertex_curvature(m, nb, vertex_normals(m))
    scaled = m.with_vertices(m.vertices * 37.5)
    cur_scaled = vertex_curvature(scaled, nb, vertex_normals(scaled))
    assert np.abs(cur - cur_scaled).max() < 1e-6
