import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial import ConvexHull

from hullopt.errors import BindingError
from hullopt.fixtures import hull_fixture, icosphere, unit_cube_surface, volume_fixture
from hullopt.geometry import (
    DegenerateTriangleError,
    MeshError,
    MeshParseError,
    NodalField,
    SurfaceMesh,
    WatertightError,
    cell_volume,
    cell_volumes,
    clip_triangles_below,
    hex_volume_mesh,
    immersed_volume,
    non_orthogonality,
    quality_report,
    read_surface_mesh,
    read_vmesh,
    write_obj,
    write_stl,
    write_vmesh,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def _sub_areas(sub, valid):
    q = sub[..., :3]
    s = 0.5 * np.cross(q[..., 1, :] - q[..., 0, :], q[..., 2, :] - q[..., 0, :])
    return np.where(valid, np.linalg.norm(s, axis=-1), 0.0).sum()


def _box(lo, hi):
    cube = unit_cube_surface()
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return SurfaceMesh(lo + cube.vertices * (hi - lo), cube.triangles)


# surface meshes ---------------------------------------------------------------
def test_cube_is_closed_and_outward():
    cube = unit_cube_surface()
    assert cube.is_closed()
    centres = cube.vertices[cube.triangles].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", cube.triangle_area_vectors, centres - 0.5) > 0)


def test_hull_fixture_closed_and_symmetric():
    hull = hull_fixture()
    assert hull.is_closed()
    assert 4000 <= hull.n_triangles <= 6000
    lo, hi = hull.bbox
    assert lo[1] == -hi[1]


def test_degenerate_triangle_reports_facet():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], float)
    with pytest.raises(DegenerateTriangleError) as exc:
        SurfaceMesh(v, [[0, 1, 2], [0, 1, 3]])
    assert exc.value.facets == [1]


def test_bad_indices_rejected():
    with pytest.raises(MeshError):
        SurfaceMesh(np.zeros((3, 3)), [[0, 1, 3]], check_degenerate=False)


def test_topology_hash_ignores_coordinates():
    hull = hull_fixture()
    moved = hull.with_vertices(hull.vertices * 1.1)
    assert moved.topology_hash == hull.topology_hash
    flipped = SurfaceMesh(hull.vertices, hull.triangles[:, ::-1])
    assert flipped.topology_hash != hull.topology_hash


def test_nodal_field_binding(tmp_path):
    hull = hull_fixture()
    f = NodalField(hull.topology_hash, np.zeros(hull.n_vertices))
    f.check_bound(hull)
    with pytest.raises(BindingError):
        NodalField("0" * 16, np.zeros(hull.n_vertices)).check_bound(hull)
    with pytest.raises(BindingError):
        NodalField(hull.topology_hash, np.zeros(hull.n_vertices - 1)).check_bound(hull)
    with pytest.raises(ValueError):
        NodalField(hull.topology_hash, np.full(3, np.nan))


# I/O --------------------------------------------------------------------------
def test_stl_round_trip_exact(tmp_path):
    hull = hull_fixture()
    write_stl(hull, tmp_path / "h.stl")
    back = read_surface_mesh(tmp_path / "h.stl")
    assert back.n_vertices == hull.n_vertices
    np.testing.assert_array_equal(back.vertices[back.triangles], hull.vertices[hull.triangles])


def test_obj_round_trip_exact(tmp_path):
    hull = hull_fixture()
    write_obj(hull, tmp_path / "h.obj")
    back = read_surface_mesh(tmp_path / "h.obj")
    np.testing.assert_array_equal(back.vertices, hull.vertices)
    np.testing.assert_array_equal(back.triangles, hull.triangles)


def test_stl_weld_tolerance(tmp_path):
    text = """solid t
facet normal 0 0 1
outer loop
vertex 0 0 0
vertex 1 0 0
vertex 0 1 0
endloop
endfacet
facet normal 0 0 1
outer loop
vertex 1.0000000001 0 0
vertex 1 1 0
vertex 0 1 0
endloop
endfacet
endsolid t
"""
    p = tmp_path / "w.stl"
    p.write_text(text)
    assert read_surface_mesh(p).n_vertices == 5
    assert read_surface_mesh(p, weld_tol=1e-6).n_vertices == 4


@pytest.mark.parametrize("body, line", [
    ("solid t\nfacet normal 0 0 1\nouter loop\nvertex 0 0\n", 4),
    ("solid t\nfacet normal 0 0 1\nouter loop\nvertex 0 0 0\nvertex 1 0 0\nendloop\n", 6),
    ("solid t\nbogus\n", 2),
    ("facet normal 0 0 1\n", 1),
])
def test_stl_parse_errors_carry_line(tmp_path, body, line):
    p = tmp_path / "bad.stl"
    p.write_text(body)
    with pytest.raises(MeshParseError) as exc:
        read_surface_mesh(p)
    assert exc.value.line == line


def test_vmesh_round_trip(tmp_path):
    vol = volume_fixture()
    write_vmesh(vol, tmp_path / "v.vmesh")
    back = read_vmesh(tmp_path / "v.vmesh")
    np.testing.assert_array_equal(back.nodes, vol.nodes)
    assert back.topology_hash == vol.topology_hash


def test_vmesh_parse_error(tmp_path):
    p = tmp_path / "bad.vmesh"
    p.write_text("vmesh 1\nnodes 2\n0 0 0\n1 1\n")
    with pytest.raises(MeshParseError) as exc:
        read_vmesh(p)
    assert exc.value.line == 4


# volume meshes ------------------------------------------------------------------
def _sheared_pair(d):
    nodes = np.array([
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
        [2, d, 0], [2, 1 + d, 0], [2, d, 1], [2, 1 + d, 1],
    ], float)
    hexes = [[0, 1, 2, 3, 4, 5, 6, 7], [1, 8, 9, 2, 5, 10, 11, 6]]
    return hex_volume_mesh(nodes, hexes)


@given(st.floats(-0.8, 0.8))
def test_two_cell_non_orthogonality_closed_form(d):
    mesh = _sheared_pair(d)
    assert mesh.n_cells == 2 and mesh.internal.sum() == 1
    np.testing.assert_allclose(cell_volumes(mesh), [1.0, 1.0], rtol=0, atol=1e-12)
    # centroids (0.5, 0.5, 0.5) and (1.5, 0.5 + d/2, 0.5); shared face normal is x
    np.testing.assert_allclose(non_orthogonality(mesh), [np.degrees(np.arctan(abs(d) / 2))], atol=1e-9)


def test_cartesian_grid_quality():
    g = np.stack(np.meshgrid(*[np.linspace(0, 1, 4)] * 3, indexing="ij"), -1)
    idx = np.arange(64).reshape(4, 4, 4)
    hexes = []
    for i in range(3):
        for j in range(3):
            for k in range(3):
                hexes.append([idx[i, j, k], idx[i + 1, j, k], idx[i + 1, j + 1, k], idx[i, j + 1, k],
                              idx[i, j, k + 1], idx[i + 1, j, k + 1], idx[i + 1, j + 1, k + 1],
                              idx[i, j + 1, k + 1]])
    mesh = hex_volume_mesh(g.reshape(-1, 3), hexes)
    rep = quality_report(mesh)
    assert rep.max_non_orthogonality == pytest.approx(0.0, abs=1e-9)
    assert rep.min_cell_volume == pytest.approx(1 / 27, rel=1e-12)
    assert rep.min_face_area == pytest.approx(1 / 9, rel=1e-12)
    assert cell_volume(mesh, 5) == pytest.approx(1 / 27, rel=1e-12)
    with pytest.raises(IndexError):
        cell_volume(mesh, 27)


def test_inverted_cell_reported():
    mesh = _sheared_pair(0.0)
    nodes = mesh.nodes.copy()
    nodes[8:, 0] = 0.5  # pull the far face of the second cell behind its near face
    bad = mesh.with_nodes(nodes)
    rep = quality_report(bad)
    assert rep.negative_cells == 1
    assert rep.warnings


def test_volume_fixture_cells_positive():
    vol = volume_fixture()
    assert 15000 <= vol.n_cells <= 25000
    assert cell_volumes(vol).min() > 0


# waterline clipping -----------------------------------------------------------
@given(arrays(float, (3, 3), elements=finite), st.floats(-10, 10))
def test_clip_conserves_area(tri, w):
    # both clips are closed half-spaces, so a triangle in the plane itself is counted twice
    assume(not np.all(tri[:, 2] == w))
    tri = tri[None]
    area = 0.5 * np.linalg.norm(np.cross(tri[0, 1] - tri[0, 0], tri[0, 2] - tri[0, 0]))
    below = _sub_areas(*clip_triangles_below(tri, w))
    mirrored = tri * np.array([1, 1, -1])
    above = _sub_areas(*clip_triangles_below(mirrored, -w))
    assert below + above == pytest.approx(area, rel=1e-9, abs=1e-9)


def test_triangle_in_waterline_plane_counts_as_below():
    tri = np.array([[[1.0, 0.0, 0.5], [0.0, 1.0, 0.5], [0.0, 0.0, 0.5]]])
    assert _sub_areas(*clip_triangles_below(tri, 0.5)) == pytest.approx(0.5, rel=1e-15)
    assert _sub_areas(*clip_triangles_below(tri, 0.5 - 1e-9)) == 0.0


@given(arrays(float, (3, 3), elements=finite), arrays(float, 3, elements=finite), st.floats(-10, 10))
def test_clip_interpolates_linear_channels(tri, a, w):
    chan = np.concatenate([tri, (tri @ a)[:, None]], axis=1)[None]
    sub, valid = clip_triangles_below(chan, w)
    pts = sub[0][valid[0]]
    np.testing.assert_allclose(pts[..., 3], pts[..., :3] @ a, atol=1e-8 * (1 + np.abs(a).sum() * 10))
    assert np.all(pts[..., 2] <= w + 1e-9)


@given(arrays(float, 3, elements=st.floats(-5, 5)), arrays(float, 3, elements=st.floats(0.1, 4)),
       st.floats(0.01, 0.99))
def test_box_immersed_volume_closed_form(lo, size, frac):
    box = _box(lo, lo + size)
    w = lo[2] + frac * size[2]
    assert immersed_volume(box, w) == pytest.approx(size[0] * size[1] * (w - lo[2]), rel=1e-10)


def test_box_volume_limits():
    box = _box([0, 0, 0], [2, 3, 4])
    assert immersed_volume(box, -1.0) == 0.0
    assert immersed_volume(box, 10.0) == pytest.approx(24.0, rel=1e-12)


def test_icosphere_half_volume_matches_convex_hull():
    sphere = icosphere(3)
    full = ConvexHull(sphere.vertices).volume
    # the icosphere is mirror-symmetric in z, so exactly half lies below z = 0
    assert immersed_volume(sphere, 0.0) == pytest.approx(0.5 * full, rel=1e-12)
    assert immersed_volume(sphere, 2.0) == pytest.approx(full, rel=1e-12)


def test_open_surface_raises_watertight():
    cube = unit_cube_surface()
    # drop the y = 0 side; a missing horizontal face would not disturb the in-plane flux
    open_box = SurfaceMesh(cube.vertices, np.delete(cube.triangles, [4, 5], axis=0))
    with pytest.raises(WatertightError) as exc:
        immersed_volume(open_box, 0.5)
    assert exc.value.residual > exc.value.tolerance
