"""Lagrange finite elements (P1, P2) and assembly of the Helmholtz forms.

The discrete weak form of the impedance problem is

    (S - k^2 M_m - i k B) u = b,

with ``S`` the stiffness matrix, ``M_m`` the mass matrix weighted by the
refractive index ``m = 1 + q`` and ``B`` the boundary mass matrix. All three
are real symmetric for real ``m``; the combined operator is complex symmetric.
"""

from __future__ import annotations

import hashlib
import itertools
import threading
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError, UnsupportedOperationError
from .mesh import Mesh

__all__ = [
    "TriangleQuadrature",
    "QUAD_DEG4",
    "QUAD_DEG2",
    "FunctionSpace",
    "CoefficientField",
    "Wavefield",
    "MollifiedPointSource",
    "SparseComplexSystem",
    "Norms",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_boundary_mass",
    "assemble_load",
    "assemble_boundary_load",
    "norms",
    "interpolate",
    "error_norms",
    "source_l2_norm",
]


@dataclass(frozen=True)
class TriangleQuadrature:
    """Quadrature on the reference triangle {(0,0), (1,0), (0,1)}.

    ``weights`` sum to 1, i.e. they integrate against the normalized area.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


def _dunavant4():
    a, b = 0.44594849091596488632, 0.09157621350977074346
    w1, w2 = 0.22338158967801146570, 0.10995174365532186764
    bary = np.array(
        [
            [a, a, 1 - 2 * a],
            [a, 1 - 2 * a, a],
            [1 - 2 * a, a, a],
            [b, b, 1 - 2 * b],
            [b, 1 - 2 * b, b],
            [1 - 2 * b, b, b],
        ]
    )
    weights = np.array([w1, w1, w1, w2, w2, w2])
    return TriangleQuadrature(bary[:, 1:], weights / weights.sum(), 4)


QUAD_DEG4 = _dunavant4()
QUAD_DEG2 = TriangleQuadrature(
    np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]), np.full(3, 1 / 3), 2
)

_GAUSS_1D = np.polynomial.legendre.leggauss(4)
_EDGE_T = 0.5 * (_GAUSS_1D[0] + 1.0)
_EDGE_W = 0.5 * _GAUSS_1D[1]


# --------------------------------------------------------------------------
# reference basis functions


def _basis(order, xi, eta):
    """Values (nq, nb) of the reference basis at points (xi, eta)."""
    l0, l1, l2 = 1.0 - xi - eta, xi, eta
    if order == 1:
        return np.column_stack([l0, l1, l2])
    return np.column_stack(
        [
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l0 * l1,
            4 * l1 * l2,
            4 * l2 * l0,
        ]
    )


def _basis_grad(order, xi, eta):
    """Reference gradients (nq, nb, 2)."""
    nq = np.size(xi)
    if order == 1:
        g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        return np.broadcast_to(g, (nq, 3, 2)).copy()
    l0, l1, l2 = 1.0 - xi - eta, xi, eta
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    lam = [l0, l1, l2]
    out = np.empty((nq, 6, 2))
    for v in range(3):
        out[:, v, :] = (4 * lam[v] - 1)[:, None] * dl[v]
    for e, (p, r) in enumerate([(0, 1), (1, 2), (2, 0)]):
        out[:, 3 + e, :] = 4 * (lam[p][:, None] * dl[r] + lam[r][:, None] * dl[p])
    return out


def _p2_hessians():
    """Constant reference Hessians (6, 2, 2) of the P2 basis."""
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    out = np.empty((6, 2, 2))
    for v in range(3):
        out[v] = 4 * np.outer(dl[v], dl[v])
    for e, (p, r) in enumerate([(0, 1), (1, 2), (2, 0)]):
        out[3 + e] = 4 * (np.outer(dl[p], dl[r]) + np.outer(dl[r], dl[p]))
    return out


def _edge_basis(order, t):
    """Basis along a boundary edge in local order (start, end[, midpoint])."""
    if order == 1:
        return np.column_stack([1 - t, t])
    return np.column_stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)])


# --------------------------------------------------------------------------
# spaces and fields


class FunctionSpace:
    """Continuous Lagrange space of order 1 or 2 on a mesh.

    P2 degrees of freedom are numbered vertices first, then one per mesh edge
    (at the edge midpoint) in the order of ``mesh.edges``.
    """

    def __init__(self, mesh: Mesh, order: int = 1):
        if order not in (1, 2):
            raise InvalidArgumentError(f"element order must be 1 or 2, got {order}")
        self.mesh = mesh
        self.order = order
        nv = mesh.n_vertices
        if order == 1:
            self.dof_count = nv
            self.dof_map = mesh.triangles.copy()
            self.boundary_edge_dofs = mesh.boundary_edges.copy()
        else:
            self.dof_count = nv + mesh.edges.shape[0]
            self.dof_map = np.hstack([mesh.triangles, mesh.triangle_edges + nv])
            self.boundary_edge_dofs = np.column_stack([mesh.boundary_edges, mesh.boundary_edge_index + nv])
        self.dof_map.setflags(write=False)
        self.boundary_dofs = np.unique(self.boundary_edge_dofs)

    def __repr__(self):
        return f"FunctionSpace(P{self.order}, dofs={self.dof_count}, mesh={self.mesh.label!r})"

    @cached_property
    def dof_coords(self):
        m = self.mesh
        if self.order == 1:
            return m.vertices
        mid = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
        return np.vstack([m.vertices, mid])

    @cached_property
    def _geometry(self):
        p = self.mesh.vertices[self.mesh.triangles]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edge vectors
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1] / det
        inv[:, 1, 1] = jac[:, 0, 0] / det
        inv[:, 0, 1] = -jac[:, 0, 1] / det
        inv[:, 1, 0] = -jac[:, 1, 0] / det
        return p[:, 0], jac, det, inv

    def quadrature_points(self, quad=QUAD_DEG4):
        """Physical quadrature points (T, nq, 2) and weights (T, nq)."""
        origin, jac, det, _ = self._geometry
        pts = origin[:, None, :] + np.einsum("tij,qj->tqi", jac, quad.points)
        weights = 0.5 * det[:, None] * quad.weights[None, :]
        return pts, weights

    def basis_values(self, quad=QUAD_DEG4):
        return _basis(self.order, quad.points[:, 0], quad.points[:, 1])

    def physical_gradients(self, quad=QUAD_DEG4):
        """Basis gradients (T, nq, nb, 2) at quadrature points."""
        _, _, _, inv = self._geometry
        ref = _basis_grad(self.order, quad.points[:, 0], quad.points[:, 1])
        return np.einsum("tji,qbj->tqbi", inv, ref)

    def element_mass(self, cell_weights=None, quad=QUAD_DEG4):
        """Element mass matrices (T, nb, nb), optionally with a weight per quadrature point."""
        _, w = self.quadrature_points(quad)
        if cell_weights is not None:
            w = w * cell_weights
        phi = self.basis_values(quad)
        return np.einsum("tq,qa,qb->tab", w, phi, phi)

    def element_stiffness(self, quad=QUAD_DEG4):
        _, w = self.quadrature_points(quad)
        g = self.physical_gradients(quad)
        return np.einsum("tq,tqai,tqbi->tab", w, g, g)

    def scatter(self, element_matrices):
        """Assemble element matrices into a global CSR matrix."""
        nb = self.dof_map.shape[1]
        rows = np.repeat(self.dof_map, nb, axis=1).ravel()
        cols = np.tile(self.dof_map, (1, nb)).ravel()
        a = sp.coo_matrix((element_matrices.ravel(), (rows, cols)), shape=(self.dof_count,) * 2)
        return a.tocsr()

    def scatter_vector(self, element_vectors):
        out = np.zeros(self.dof_count, dtype=np.result_type(element_vectors, np.float64))
        np.add.at(out, self.dof_map.ravel(), element_vectors.ravel())
        return out

    def evaluate(self, dofs, quad=QUAD_DEG4):
        """Field values (T, nq) at quadrature points."""
        return np.asarray(dofs)[self.dof_map] @ self.basis_values(quad).T

    def evaluate_gradient(self, dofs, quad=QUAD_DEG4):
        """Field gradients (T, nq, 2) at quadrature points."""
        return np.einsum("tb,tqbi->tqi", np.asarray(dofs)[self.dof_map], self.physical_gradients(quad))

    @cached_property
    def system(self):
        return SparseComplexSystem(self)


_CALLBACK_IDS = itertools.count()


class CoefficientField:
    """A real scalar field, either piecewise constant per triangle or analytic.

    Used both for the contrast ``q`` and for the refractive index ``m = 1 + q``.
    Analytic callbacks take an array ``(..., 2)`` of points and return values
    of shape ``(...)``.
    """

    def __init__(self, values=None, func: Callable | None = None, *, name="", lower_bound_check=False):
        if (values is None) == (func is None):
            raise InvalidArgumentError("give exactly one of cell values or a callback")
        self.kind = "piecewise" if values is not None else "analytic"
        self.values = None if values is None else np.asarray(values, dtype=np.float64)
        if self.values is not None:
            self.values.setflags(write=False)
            if not np.all(np.isfinite(self.values)):
                raise InvalidArgumentError("coefficient values must be finite")
        self.func = func
        self.name = name
        self.lower_bound_check = lower_bound_check
        self._terms = None
        if lower_bound_check:
            self.check_admissible()

    @classmethod
    def constant(cls, c, mesh: Mesh, **kw):
        return cls(np.full(mesh.n_triangles, float(c)), **kw)

    @classmethod
    def indicator(cls, mesh: Mesh, box, value=1.0, **kw):
        """``value`` on triangles whose centroid lies in ``box = (x0, x1, y0, y1)``."""
        x0, x1, y0, y1 = box
        c = mesh.centroids
        inside = (c[:, 0] > x0) & (c[:, 0] < x1) & (c[:, 1] > y0) & (c[:, 1] < y1)
        return cls(np.where(inside, float(value), 0.0), **kw)

    def __repr__(self):
        return f"CoefficientField({self.kind}, name={self.name!r})"

    def at(self, space: FunctionSpace, quad=QUAD_DEG4):
        """Values (T, nq) at the quadrature points of ``space``."""
        if self.kind == "piecewise":
            if self.values.shape != (space.mesh.n_triangles,):
                raise InvalidArgumentError("cell values do not match the mesh")
            return np.broadcast_to(self.values[:, None], (space.mesh.n_triangles, quad.points.shape[0]))
        pts, _ = space.quadrature_points(quad)
        return np.asarray(self.func(pts), dtype=np.float64) * np.ones(pts.shape[:2])

    def shifted(self, c=1.0):
        """The field ``c + self``; ``q.shifted()`` is the refractive index."""
        if self.kind == "piecewise":
            return CoefficientField(self.values + c, name=f"{c}+{self.name}")
        f = self.func
        return CoefficientField(func=lambda x: c + f(x), name=f"{c}+{self.name}")

    def is_zero(self):
        return self.kind == "piecewise" and not np.any(self.values)

    def check_admissible(self, space: FunctionSpace | None = None):
        """Raise if the contrast drops below -1."""
        if self.kind == "piecewise":
            low = float(np.min(self.values)) if self.values.size else 0.0
        elif space is not None:
            low = float(np.min(self.at(space)))
        else:
            return
        if low < -1.0:
            raise InvalidArgumentError(f"contrast {self.name!r} is not admissible: min value {low} < -1")

    @cached_property
    def fingerprint(self):
        if self.kind == "piecewise":
            return hashlib.sha256(self.values.astype("<f8").tobytes()).hexdigest()[:16]
        return f"callback-{next(_CALLBACK_IDS)}"


class Wavefield:
    """Complex DoF vector bound to a function space."""

    def __init__(self, space: FunctionSpace, dofs):
        dofs = np.asarray(dofs, dtype=np.complex128)
        if dofs.shape != (space.dof_count,):
            raise InvalidArgumentError(f"expected {space.dof_count} dofs, got shape {dofs.shape}")
        if not np.all(np.isfinite(dofs)):
            raise InvalidArgumentError("wavefield contains non-finite values")
        self.space = space
        self.dofs = dofs

    def __repr__(self):
        return f"Wavefield({self.space!r})"

    def __add__(self, other):
        return Wavefield(self.space, self.dofs + other.dofs)

    def __sub__(self, other):
        return Wavefield(self.space, self.dofs - other.dofs)

    def __mul__(self, alpha):
        return Wavefield(self.space, alpha * self.dofs)

    __rmul__ = __mul__

    @property
    def trace(self):
        return self.dofs[self.space.boundary_dofs]


@dataclass(frozen=True)
class MollifiedPointSource:
    """Normalized cone bump ``c * max(0, 1 - |x - center| / radius)``.

    The load vector is rescaled so the discrete source integrates to exactly
    one, independent of how well the quadrature resolves the bump.
    """

    center: tuple
    radius: float

    def __call__(self, x):
        r = np.hypot(x[..., 0] - self.center[0], x[..., 1] - self.center[1])
        return 3.0 / (np.pi * self.radius**2) * np.maximum(0.0, 1.0 - r / self.radius)

    @property
    def l2_norm(self):
        # int (c (1 - r/eps))^2 dx over the disk, c = 3 / (pi eps^2)
        return float(np.sqrt(1.5 / (np.pi * self.radius**2)))


# --------------------------------------------------------------------------
# assembly


def assemble_stiffness(space: FunctionSpace):
    """Stiffness matrix ``S_ab = (grad phi_a, grad phi_b)``."""
    return space.scatter(space.element_stiffness())


def assemble_mass(space: FunctionSpace, m: CoefficientField | float | None = None, quad=QUAD_DEG4):
    """Weighted mass matrix ``(M_m)_ab = (m phi_a, phi_b)``.

    ``m=None`` means the unweighted mass matrix. Piecewise-constant weights are
    integrated exactly for P1 and P2 by the default degree-4 rule.
    """
    if m is None:
        w = None
    elif isinstance(m, CoefficientField):
        w = m.at(space, quad)
    else:
        w = float(m)
    return space.scatter(space.element_mass(w, quad))


def _boundary_element_mass(space: FunctionSpace):
    lengths = space.mesh.boundary_edge_lengths
    phi = _edge_basis(space.order, _EDGE_T)
    local = np.einsum("q,qa,qb->ab", _EDGE_W, phi, phi)
    return lengths[:, None, None] * local[None]


def assemble_boundary_mass(space: FunctionSpace):
    """Boundary mass matrix ``B_ab = (phi_a, phi_b)_{L2(boundary)}``."""
    ed = space.boundary_edge_dofs
    nb = ed.shape[1]
    rows = np.repeat(ed, nb, axis=1).ravel()
    cols = np.tile(ed, (1, nb)).ravel()
    vals = _boundary_element_mass(space).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(space.dof_count,) * 2).tocsr()


def assemble_load(space: FunctionSpace, f, quad=QUAD_DEG4):
    """Load vector ``b_j = int f phi_j dx``.

    ``f`` may be a callback, an array of per-triangle values or a
    ``MollifiedPointSource``; ``None`` gives the zero vector.
    """
    if f is None:
        return np.zeros(space.dof_count, dtype=np.complex128)
    pts, w = space.quadrature_points(quad)
    if callable(f):
        fv = np.asarray(f(pts)) * np.ones(pts.shape[:2])
    else:
        values = np.asarray(f)
        if values.shape != (space.mesh.n_triangles,):
            raise InvalidArgumentError("cellwise source does not match the mesh")
        fv = np.broadcast_to(values[:, None], w.shape)
    phi = space.basis_values(quad)
    b = space.scatter_vector(np.einsum("tq,tq,qa->ta", w, fv, phi)).astype(np.complex128)
    if isinstance(f, MollifiedPointSource):
        total = b.sum()
        if abs(total) == 0.0:
            raise InvalidArgumentError("mollified source support misses every quadrature point")
        b = b / total
    return b


def assemble_boundary_load(space: FunctionSpace, g):
    """Boundary load ``b_j = int_{boundary} g phi_j ds``.

    ``g(x, n)`` receives edge quadrature points ``(E_b, nq, 2)`` and the
    matching outward normals. Only used for manufactured-solution testing.
    """
    mesh = space.mesh
    a = mesh.vertices[mesh.boundary_edges[:, 0]]
    d = mesh.vertices[mesh.boundary_edges[:, 1]] - a
    pts = a[:, None, :] + _EDGE_T[None, :, None] * d[:, None, :]
    normals = np.broadcast_to(mesh.boundary_normals[:, None, :], pts.shape)
    gv = np.asarray(g(pts, normals), dtype=np.complex128) * np.ones(pts.shape[:2])
    phi = _edge_basis(space.order, _EDGE_T)
    local = np.einsum("e,q,eq,qa->ea", mesh.boundary_edge_lengths, _EDGE_W, gv, phi)
    out = np.zeros(space.dof_count, dtype=np.complex128)
    np.add.at(out, space.boundary_edge_dofs.ravel(), local.ravel())
    return out


class SparseComplexSystem:
    """The matrices ``S``, ``M_1`` and ``B`` of one space plus a factorization cache.

    ``combined(k, q)`` returns ``S - k^2 M_{1+q} - i k B``. Factorizations are
    cached by ``(k, q.fingerprint)``, keeping the ``cache_size`` most recent.
    """

    def __init__(self, space: FunctionSpace, cache_size=16):
        self.space = space
        self.stiffness = assemble_stiffness(space)
        self.mass = assemble_mass(space)
        self.boundary_mass = assemble_boundary_mass(space)
        self.cache_size = cache_size
        self._factorizations = OrderedDict()
        self._lock = threading.Lock()

    def mass_for(self, q: CoefficientField | None):
        """``M_q``; ``None`` or a zero contrast gives the zero matrix."""
        if q is None:
            return sp.csr_matrix((self.space.dof_count,) * 2)
        return assemble_mass(self.space, q)

    def combined(self, k, q: CoefficientField | None = None):
        a = self.stiffness - k**2 * self.mass - 1j * k * self.boundary_mass
        if q is not None and not q.is_zero():
            a = a - k**2 * self.mass_for(q)
        return a.tocsc()

    def factorization(self, k, q: CoefficientField | None = None):
        from .solver import lu_factorize

        key = (float(k), None if q is None or q.is_zero() else q.fingerprint)
        with self._lock:
            fac = self._factorizations.get(key)
            if fac is not None:
                self._factorizations.move_to_end(key)
                return fac
        fac = lu_factorize(self.combined(k, q))
        with self._lock:
            self._factorizations[key] = fac
            while len(self._factorizations) > self.cache_size:
                self._factorizations.popitem(last=False)
        return fac

    def clear_cache(self):
        self._factorizations.clear()


# --------------------------------------------------------------------------
# norms and interpolation


@dataclass(frozen=True)
class Norms:
    l2: float
    h1: float
    broken_h2_semi: float | None = None


def broken_h2_seminorm(u: Wavefield):
    """Root-sum of elementwise L2 norms of all second derivatives (P2 only)."""
    space = u.space
    if space.order != 2:
        raise UnsupportedOperationError("the broken H2 seminorm needs an order-2 space")
    _, _, det, inv = space._geometry
    ref = _p2_hessians()
    # physical Hessian H = inv^T Href inv for each basis function
    hess = np.einsum("tji,bjk,tkl->tbil", inv, ref, inv)
    local = np.einsum("tb,tbil->til", u.dofs[space.dof_map], hess)
    area = 0.5 * det
    return float(np.sqrt(np.sum(area * np.sum(np.abs(local) ** 2, axis=(1, 2)))))


def norms(u: Wavefield, broken_h2=False):
    """L2 and H1 norms of ``u``; with ``broken_h2=True`` also the broken H2 seminorm."""
    sysm = u.space.system
    x = u.dofs
    l2sq = float(np.real(np.vdot(x, sysm.mass @ x)))
    semi = float(np.real(np.vdot(x, sysm.stiffness @ x)))
    h2 = broken_h2_seminorm(u) if broken_h2 else None
    return Norms(np.sqrt(max(l2sq, 0.0)), np.sqrt(max(l2sq, 0.0) + max(semi, 0.0)), h2)


def interpolate(space: FunctionSpace, func):
    """Nodal interpolant of ``func`` (called with an ``(n, 2)`` point array)."""
    return Wavefield(space, np.asarray(func(space.dof_coords), dtype=np.complex128))


def error_norms(u: Wavefield, exact, exact_grad, quad=QUAD_DEG4):
    """L2 and H1 errors against an analytic solution, by quadrature."""
    space = u.space
    pts, w = space.quadrature_points(quad)
    diff = space.evaluate(u.dofs, quad) - exact(pts)
    gdiff = space.evaluate_gradient(u.dofs, quad) - exact_grad(pts)
    l2sq = float(np.sum(w * np.abs(diff) ** 2))
    semi = float(np.sum(w * np.sum(np.abs(gdiff) ** 2, axis=-1)))
    return np.sqrt(l2sq), np.sqrt(l2sq + semi)


def source_l2_norm(space: FunctionSpace, f, quad=QUAD_DEG4):
    """L2 norm of a volume source on the mesh by quadrature."""
    if isinstance(f, MollifiedPointSource):
        return f.l2_norm
    pts, w = space.quadrature_points(quad)
    fv = np.asarray(f(pts)) * np.ones(pts.shape[:2]) if callable(f) else np.asarray(f)[:, None]
    return float(np.sqrt(np.sum(w * np.abs(fv) ** 2)))
