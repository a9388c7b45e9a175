import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlshelm.errors import InvalidArgumentError
from vlshelm.mesh import (
    Mesh,
    generate_polygon_disk_mesh,
    generate_rect_mesh,
    polygon_disk_area,
    refine_uniform,
)


def test_single_cell():
    mesh = generate_rect_mesh(1, 1, 1.0, 1.0)
    assert mesh.n_vertices == 4
    assert mesh.n_triangles == 2
    assert mesh.area == pytest.approx(1.0, rel=1e-12)
    mesh.check_invariants(polygon_area=1.0)


def test_counts_4x4():
    mesh = generate_rect_mesh(4, 4)
    assert mesh.n_triangles == 32
    assert len(mesh.boundary_edges) == 16


def test_counts_against_brute_enumeration():
    mesh = generate_rect_mesh(5, 3)
    seen = {}
    for tri in mesh.triangles.tolist():
        for a, b in ((0, 1), (1, 2), (2, 0)):
            key = frozenset((tri[a], tri[b]))
            seen[key] = seen.get(key, 0) + 1
    boundary = [e for e, c in seen.items() if c == 1]
    assert len(boundary) == len(mesh.boundary_edges) == 2 * (5 + 3)
    assert {frozenset(e) for e in mesh.boundary_edges.tolist()} == set(boundary)


def test_rectangle_area():
    mesh = generate_rect_mesh(2, 3, 2.0, 1.5)
    assert abs(mesh.area - 3.0) <= 1e-12
    mesh.check_invariants(polygon_area=3.0)


@pytest.mark.parametrize("args", [(0, 1), (1, 0), (-2, 3), (1.5, 2)])
def test_rect_rejects_bad_counts(args):
    with pytest.raises(InvalidArgumentError):
        generate_rect_mesh(*args)


def test_rect_rejects_bad_size():
    with pytest.raises(InvalidArgumentError):
        generate_rect_mesh(2, 2, 0.0, 1.0)


def test_octagon_area():
    mesh = generate_polygon_disk_mesh(8, 1.0)
    assert mesh.area == pytest.approx(2 * np.sqrt(2), rel=1e-12)
    mesh.check_invariants(polygon_area=polygon_disk_area(8))


def test_fine_polygon_approaches_disk():
    mesh = generate_polygon_disk_mesh(256, 1.0)
    assert abs(mesh.area - np.pi) <= 1e-3
    mesh.check_invariants(polygon_area=polygon_disk_area(256))
    assert len(mesh.boundary_edges) == 256


def test_disk_rejects_degenerate_radius():
    with pytest.raises(InvalidArgumentError):
        generate_polygon_disk_mesh(8, 0.0)
    with pytest.raises(InvalidArgumentError):
        generate_polygon_disk_mesh(7, 1.0)


def test_refine_counts_and_area():
    mesh = generate_rect_mesh(1, 1)
    fine = refine_uniform(mesh)
    assert fine.n_triangles == 8
    assert fine.area == pytest.approx(1.0, rel=1e-12)
    finer = refine_uniform(fine)
    assert finer.n_triangles == 16 * mesh.n_triangles
    assert len(fine.boundary_edges) == 2 * len(mesh.boundary_edges)
    assert len(finer.boundary_edges) == 4 * len(mesh.boundary_edges)
    finer.check_invariants(polygon_area=1.0)


def test_refine_halves_h():
    for mesh in (generate_rect_mesh(3, 2, 1.0, 0.7), generate_polygon_disk_mesh(12)):
        fine = refine_uniform(mesh)
        assert fine.h == pytest.approx(mesh.h / 2, rel=1e-12)
        fine.check_invariants(polygon_area=mesh.area)


def test_boundary_orientation_and_normals():
    mesh = generate_rect_mesh(3, 3)
    mid = 0.5 * (mesh.vertices[mesh.boundary_edges[:, 0]] + mesh.vertices[mesh.boundary_edges[:, 1]])
    # outward normals point away from the centre on the unit square
    assert np.all(np.einsum("ij,ij->i", mesh.boundary_normals, mid - 0.5) > 0)
    assert mesh.perimeter == pytest.approx(4.0)
    assert mesh.boundary_vertex_mask.sum() == 12


def test_from_triangles_fixes_orientation():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = Mesh.from_triangles(v, np.array([[0, 2, 1]]))
    mesh.check_invariants(polygon_area=0.5)


def test_check_invariants_detects_wrong_area():
    with pytest.raises(AssertionError):
        generate_rect_mesh(2, 2).check_invariants(polygon_area=1.1)


def test_immutable():
    mesh = generate_rect_mesh(2, 2)
    with pytest.raises(ValueError):
        mesh.vertices[0, 0] = 5.0


def test_fingerprint_distinguishes_meshes():
    assert generate_rect_mesh(2, 2).fingerprint == generate_rect_mesh(2, 2).fingerprint
    assert generate_rect_mesh(2, 2).fingerprint != generate_rect_mesh(2, 3).fingerprint


@settings(max_examples=25, deadline=None)
@given(
    nx=st.integers(1, 7),
    ny=st.integers(1, 7),
    w=st.floats(0.1, 5.0),
    h=st.floats(0.1, 5.0),
    refine=st.booleans(),
)
def test_rect_invariants_property(nx, ny, w, h, refine):
    mesh = generate_rect_mesh(nx, ny, w, h)
    if refine:
        mesh = refine_uniform(mesh)
    mesh.check_invariants(polygon_area=w * h)
    factor = 4 if refine else 1
    assert mesh.n_triangles == 2 * nx * ny * factor
    assert len(mesh.boundary_edges) == 2 * (nx + ny) * (2 if refine else 1)


@settings(max_examples=15, deadline=None)
@given(n=st.integers(8, 80), r=st.floats(0.2, 3.0))
def test_disk_invariants_property(n, r):
    mesh = generate_polygon_disk_mesh(n, r)
    mesh.check_invariants(polygon_area=polygon_disk_area(n, r))
