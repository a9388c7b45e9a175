"""Conforming triangular meshes of planar polygonal domains.

Meshes are immutable containers of numpy arrays. Triangles are stored
counter-clockwise, and boundary edges keep the orientation they have inside
their owning triangle, so walking a boundary edge from its first to its
second vertex keeps the domain on the left.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay

from .errors import InvalidArgumentError

__all__ = [
    "Mesh",
    "generate_rect_mesh",
    "generate_polygon_disk_mesh",
    "refine_uniform",
]


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulation with explicit boundary-edge structure.

    Attributes
    ----------
    vertices : (V, 2) float array
    triangles : (T, 3) int array, counter-clockwise
    boundary_edges : (E_b, 2) int array, oriented with the domain on the left
    boundary_edge_triangle : (E_b,) int array, owning triangle of each edge
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_edge_triangle: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _freeze(np.asarray(self.vertices, dtype=np.float64)))
        object.__setattr__(self, "triangles", _freeze(np.asarray(self.triangles, dtype=np.int64)))
        object.__setattr__(self, "boundary_edges", _freeze(np.asarray(self.boundary_edges, dtype=np.int64)))
        object.__setattr__(
            self, "boundary_edge_triangle", _freeze(np.asarray(self.boundary_edge_triangle, dtype=np.int64))
        )

    @classmethod
    def from_triangles(cls, vertices, triangles, label=""):
        """Build a mesh from raw arrays, fixing orientation and finding the boundary."""
        vertices = np.asarray(vertices, dtype=np.float64)
        triangles = np.array(triangles, dtype=np.int64)
        p = vertices[triangles]
        signed = _signed_areas(p)
        flip = signed < 0
        triangles[flip] = triangles[flip][:, [0, 2, 1]]
        edges, tri = _boundary_from_triangles(triangles)
        return cls(vertices, triangles, edges, tri, label=label)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @cached_property
    def boundary_vertex_mask(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_edges.ravel()] = True
        return _freeze(mask)

    @cached_property
    def areas(self):
        return _freeze(_signed_areas(self.vertices[self.triangles]))

    @cached_property
    def centroids(self):
        return _freeze(self.vertices[self.triangles].mean(axis=1))

    @property
    def area(self):
        return float(np.sum(self.areas))

    @cached_property
    def edges(self):
        """Unique undirected edges (sorted vertex pairs), shape (n_edges, 2)."""
        return self._edge_data[0]

    @cached_property
    def triangle_edges(self):
        """(T, 3) edge indices; local edge j joins local vertices j and (j+1)%3."""
        return self._edge_data[1]

    @cached_property
    def _edge_data(self):
        local = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return _freeze(edges), _freeze(inverse.reshape(-1, 3))

    @cached_property
    def boundary_edge_index(self):
        """Index into ``edges`` of every boundary edge."""
        lookup = {tuple(e): i for i, e in enumerate(self.edges.tolist())}
        return _freeze(np.array([lookup[tuple(sorted(e))] for e in self.boundary_edges.tolist()], dtype=np.int64))

    @cached_property
    def boundary_edge_lengths(self):
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        return _freeze(np.hypot(d[:, 0], d[:, 1]))

    @cached_property
    def boundary_normals(self):
        """Outward unit normals of the boundary edges."""
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return _freeze(n / np.hypot(n[:, 0], n[:, 1])[:, None])

    @property
    def perimeter(self):
        return float(np.sum(self.boundary_edge_lengths))

    @cached_property
    def h(self):
        """Mesh size: the longest edge."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.max(np.hypot(d[:, 0], d[:, 1])))

    @cached_property
    def fingerprint(self):
        digest = hashlib.sha256()
        for a in (self.vertices, self.triangles, self.boundary_edges):
            digest.update(np.ascontiguousarray(a).astype(a.dtype.newbyteorder("<")).tobytes())
        return digest.hexdigest()[:16]

    def check_invariants(self, polygon_area=None):
        """Raise ``AssertionError`` if any structural invariant is violated."""
        if np.any(self.areas <= 0):
            raise AssertionError("triangle with non-positive signed area")
        # conformity: each directed half-edge appears once; interior edges twice
        local = self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        directed = {tuple(e) for e in local.tolist()}
        if len(directed) != local.shape[0]:
            raise AssertionError("duplicated directed edge (inconsistent orientation)")
        edges, tri = _boundary_from_triangles(self.triangles)
        if {tuple(e) for e in edges.tolist()} != {tuple(e) for e in self.boundary_edges.tolist()}:
            raise AssertionError("stored boundary edges do not match the triangulation")
        for e, t in zip(self.boundary_edges.tolist(), self.boundary_edge_triangle.tolist()):
            if not set(e) <= set(self.triangles[t].tolist()):
                raise AssertionError("boundary edge does not belong to its owning triangle")
        # hanging nodes: a vertex lying strictly inside an edge of another triangle
        used = np.zeros(self.n_vertices, dtype=bool)
        used[self.triangles.ravel()] = True
        if not np.all(used):
            raise AssertionError("unreferenced vertex")
        _check_closed_loops(self.boundary_edges)
        if polygon_area is not None:
            if abs(self.area - polygon_area) > 1e-12 * abs(polygon_area):
                raise AssertionError(f"area {self.area!r} differs from polygon area {polygon_area!r}")


def _signed_areas(p):
    return 0.5 * (
        (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
        - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    )


def _boundary_from_triangles(triangles):
    local = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    owner = np.repeat(np.arange(triangles.shape[0]), 3)
    key = np.sort(local, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise AssertionError("edge shared by more than two triangles")
    on_boundary = counts[inverse] == 1
    return local[on_boundary], owner[on_boundary]


def _check_closed_loops(boundary_edges):
    nxt = {}
    for a, b in boundary_edges.tolist():
        if a in nxt:
            raise AssertionError("boundary vertex with two outgoing edges")
        nxt[a] = b
    if set(nxt) != set(nxt.values()):
        raise AssertionError("boundary edges do not form closed loops")


def generate_rect_mesh(nx, ny, width=1.0, height=1.0):
    """Structured mesh of ``[0, width] x [0, height]`` with ``2*nx*ny`` triangles.

    Cells are split along alternating diagonals (checkerboard pattern), so the
    mesh is symmetric under reflections of the rectangle for even ``nx, ny``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise InvalidArgumentError(f"nx, ny must be positive integers, got {nx}, {ny}")
    if not (width > 0 and height > 0):
        raise InvalidArgumentError(f"width and height must be positive, got {width}, {height}")
    nx, ny = int(nx), int(ny)
    x = np.linspace(0.0, width, nx + 1)
    y = np.linspace(0.0, height, ny + 1)
    xx, yy = np.meshgrid(x, y, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    even = (i + j) % 2 == 0
    # even cells use the (v00, v11) diagonal, odd cells the (v10, v01) one
    t1 = np.where(even[:, None], np.column_stack([v00, v10, v11]), np.column_stack([v00, v10, v01]))
    t2 = np.where(even[:, None], np.column_stack([v00, v11, v01]), np.column_stack([v10, v11, v01]))
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = t1
    triangles[1::2] = t2
    return Mesh.from_triangles(vertices, triangles, label=f"rect:{nx}x{ny}:{width!r}x{height!r}")


def generate_polygon_disk_mesh(n_boundary, radius=1.0):
    """Triangulated regular ``n_boundary``-gon inscribed in a circle.

    Interior points sit on concentric rings strictly inside the polygon; the
    Delaunay triangulation of all points then has the polygon as its hull.
    """
    if int(n_boundary) != n_boundary or n_boundary < 8:
        raise InvalidArgumentError(f"n_boundary must be an integer >= 8, got {n_boundary}")
    if not radius > 0:
        raise InvalidArgumentError(f"radius must be positive, got {radius}")
    n = int(n_boundary)
    n_rings = max(1, int(round(n / (2.0 * np.pi))))
    points = [np.zeros((1, 2))]
    for ring in range(1, n_rings):
        rho = radius * ring / n_rings
        count = max(6, int(round(n * ring / n_rings)))
        theta = 2.0 * np.pi * (np.arange(count) + 0.5 * (ring % 2)) / count
        points.append(rho * np.column_stack([np.cos(theta), np.sin(theta)]))
    theta = 2.0 * np.pi * np.arange(n) / n
    points.append(radius * np.column_stack([np.cos(theta), np.sin(theta)]))
    vertices = np.vstack(points)
    tri = Delaunay(vertices)
    triangles = tri.simplices.astype(np.int64)
    areas = np.abs(_signed_areas(vertices[triangles]))
    triangles = triangles[areas > 1e-14 * radius**2]
    mesh = Mesh.from_triangles(vertices, triangles, label=f"disk:{n}:{radius!r}")
    return mesh


def polygon_disk_area(n_boundary, radius=1.0):
    """Exact area of the regular polygon used by ``generate_polygon_disk_mesh``."""
    return 0.5 * n_boundary * radius**2 * np.sin(2.0 * np.pi / n_boundary)


def refine_uniform(mesh):
    """Split every triangle into four through its edge midpoints."""
    nv = mesh.n_vertices
    edges = mesh.edges
    mid = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mid])
    t = mesh.triangles
    e = mesh.triangle_edges + nv  # local edge j joins local vertices j, j+1
    m01, m12, m20 = e[:, 0], e[:, 1], e[:, 2]
    children = np.stack(
        [
            np.column_stack([t[:, 0], m01, m20]),
            np.column_stack([m01, t[:, 1], m12]),
            np.column_stack([m20, m12, t[:, 2]]),
            np.column_stack([m01, m12, m20]),
        ],
        axis=1,
    ).reshape(-1, 3)

    bmid = mesh.boundary_edge_index + nv
    a, b = mesh.boundary_edges[:, 0], mesh.boundary_edges[:, 1]
    bedges = np.stack([np.column_stack([a, bmid]), np.column_stack([bmid, b])], axis=1).reshape(-1, 2)
    # child k of triangle t sits at row 4*t + k; find the corner child owning each half
    owners = []
    tri_rows = mesh.triangles[mesh.boundary_edge_triangle]
    for (va, vb), parent, row in zip(mesh.boundary_edges.tolist(), mesh.boundary_edge_triangle.tolist(), tri_rows.tolist()):
        owners.append(4 * parent + row.index(va))
        owners.append(4 * parent + row.index(vb))
    return Mesh(vertices, children, bedges, np.array(owners), label=mesh.label + "+r")
