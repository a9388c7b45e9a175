"""Snapshot data and the reduced-order-model block matrices.

Snapshots ``u_i^(s)`` solve the forward problem at wavenumber ``k_i`` for the
source ``f^(s)``. Block entries are stored as 4-index arrays
``X[i, j, r, s]`` with

    M[i, j, r, s] = int (1 + q) u_i^(s) conj(u_j^(r)) dx
    S[i, j, r, s] = int grad u_i^(s) . conj(grad u_j^(r)) dx
    B[i, j, r, s] = int_boundary u_i^(s) conj(u_j^(r)) ds

and receiver responses as ``E[i, r, s] = <f^(r), u_i^(s)>``, a pairing that
is antilinear in the wavefield. ``rom_from_data`` recovers ``M`` and ``S``
from the boundary traces and receiver responses only, by pairing the weak
form of snapshot ``(i, s)`` with snapshot ``(j, r)`` and vice versa:

    S - k_i^2 M - i k_i B = E[j, s, r]
    S - k_j^2 M + i k_j B = conj(E[i, r, s])

For ``i == j`` the system degenerates and the limit ``k_j -> k_i`` is taken
with the wavenumber derivatives of the traces and responses.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import IllConditionedRecoveryError, InvalidArgumentError
from .fem import CoefficientField, FunctionSpace, _boundary_element_mass
from .forward import HelmholtzProblem, dk_rhs, load_vector, mollified_source
from .mesh import Mesh

__all__ = [
    "WavenumberGrid",
    "SourceSet",
    "SnapshotSet",
    "RomDataset",
    "RomMatrices",
    "BoundaryBlocks",
    "generate_snapshots",
    "extract_data",
    "rom_oracle",
    "assemble_B_from_traces",
    "rom_from_data",
    "block_relative_errors",
]

SPACING_GUARD = 1e-8


@dataclass(frozen=True)
class WavenumberGrid:
    k_values: tuple

    def __post_init__(self):
        k = np.asarray(self.k_values, dtype=np.float64)
        if k.ndim != 1 or k.size == 0:
            raise InvalidArgumentError("wavenumber grid must be a non-empty list")
        if np.any(k <= 0) or not np.all(np.isfinite(k)):
            raise InvalidArgumentError("wavenumbers must be positive and finite")
        if np.any(np.diff(k) <= 0):
            raise InvalidArgumentError("wavenumbers must be strictly increasing")
        object.__setattr__(self, "k_values", tuple(float(v) for v in k))

    def __len__(self):
        return len(self.k_values)

    @property
    def array(self):
        return np.asarray(self.k_values)


class SourceSet:
    """Mollified point sources that double as receivers."""

    def __init__(self, space: FunctionSpace, positions, radius=None):
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        if positions.shape[1] != 2:
            raise InvalidArgumentError("source positions must be 2D points")
        if len({tuple(p) for p in positions.tolist()}) != len(positions):
            raise InvalidArgumentError("source positions must be pairwise distinct")
        self.space = space
        self.positions = positions
        self.sources = [mollified_source(space, p, radius) for p in positions]
        self.radius = self.sources[0].radius
        self._check_interior()
        self.vectors = np.array([load_vector(space, f) for f in self.sources])

    def _check_interior(self):
        # the support disk must stay inside the domain; test against every boundary edge
        mesh = self.space.mesh
        a = mesh.vertices[mesh.boundary_edges[:, 0]]
        b = mesh.vertices[mesh.boundary_edges[:, 1]]
        d = b - a
        for p in self.positions:
            t = np.clip(np.einsum("ij,ij->i", p - a, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
            dist = np.hypot(*(a + t[:, None] * d - p).T).min()
            inside = _point_in_mesh(mesh, p)
            if not inside or dist < self.radius:
                raise InvalidArgumentError(f"source at ({p[0]:g}, {p[1]:g}) with radius {self.radius:g} is not interior")

    def __len__(self):
        return len(self.sources)


def _point_in_mesh(mesh: Mesh, p):
    v = mesh.vertices[mesh.triangles]
    s = []
    for j in range(3):
        e = v[:, (j + 1) % 3] - v[:, j]
        s.append(e[:, 0] * (p[1] - v[:, j, 1]) - e[:, 1] * (p[0] - v[:, j, 0]))
    return bool(np.any((s[0] >= 0) & (s[1] >= 0) & (s[2] >= 0)))


@dataclass
class SnapshotSet:
    space: FunctionSpace
    q: CoefficientField
    grid: WavenumberGrid
    sources: SourceSet
    u: np.ndarray  # (N, M, ndof)
    du: np.ndarray  # (N, M, ndof)


def generate_snapshots(space, q_true, grid: WavenumberGrid, sources: SourceSet, threads=1, tol=None):
    """Forward fields and their wavenumber derivatives for every (k_i, f^(s)).

    One factorization per wavenumber serves all sources and both solves.
    ``tol`` switches on iterative refinement down to that relative residual.
    """
    if q_true is None:
        q_true = CoefficientField.constant(0.0, space.mesh, name="zero")
    n, m = len(grid), len(sources)
    u = np.zeros((n, m, space.dof_count), dtype=np.complex128)
    du = np.zeros_like(u)

    def run(i):
        k = grid.k_values[i]
        problem = HelmholtzProblem(space, q_true, k)
        try:
            fac = problem.factorization()
        except Exception as exc:
            raise type(exc)(f"{exc} [wavenumber index i={i}]") from exc
        b = sources.vectors.T
        ui = fac.solve(b, refine_tol=tol)
        return i, ui.T, fac.solve(dk_rhs(problem, ui), refine_tol=tol).T

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, range(n)))
    else:
        results = [run(i) for i in range(n)]
    for i, ui, dui in results:
        u[i] = ui
        du[i] = dui
    return SnapshotSet(space, q_true, grid, sources, u, du)


@dataclass
class RomDataset:
    """Boundary traces and receiver responses of a snapshot set.

    ``dk_responses`` (receiver responses of the wavenumber derivatives) are
    not part of the classical data model; diagonal-block recovery needs them.
    """

    k_values: np.ndarray  # (N,)
    order: int
    boundary_dofs: np.ndarray  # (nb,)
    traces: np.ndarray  # (N, M, nb)
    dk_traces: np.ndarray  # (N, M, nb)
    responses: np.ndarray  # (N, M, M), E[i, r, s] = <f^(r), u_i^(s)>
    dk_responses: np.ndarray  # (N, M, M)
    source_positions: np.ndarray  # (M, 2)
    source_radius: float
    mesh_fingerprint: str
    q_fingerprint: str = ""

    @property
    def n_wavenumbers(self):
        return self.traces.shape[0]

    @property
    def n_sources(self):
        return self.traces.shape[1]


def extract_data(snapshots: SnapshotSet):
    """Boundary restrictions and receiver responses of the snapshots."""
    bd = snapshots.space.boundary_dofs
    f = snapshots.sources.vectors  # real-valued load vectors (M, ndof)
    # E[i, r, s] = sum_a f_r[a] conj(u_i^s[a])
    e = np.einsum("ra,isa->irs", f, snapshots.u.conj())
    de = np.einsum("ra,isa->irs", f, snapshots.du.conj())
    return RomDataset(
        k_values=snapshots.grid.array.copy(),
        order=snapshots.space.order,
        boundary_dofs=bd.copy(),
        traces=snapshots.u[:, :, bd].copy(),
        dk_traces=snapshots.du[:, :, bd].copy(),
        responses=e,
        dk_responses=de,
        source_positions=snapshots.sources.positions.copy(),
        source_radius=snapshots.sources.radius,
        mesh_fingerprint=snapshots.space.mesh.fingerprint,
        q_fingerprint=snapshots.q.fingerprint,
    )


@dataclass
class RomMatrices:
    """Block matrices as 4-index arrays ``X[i, j, r, s]``."""

    mass: np.ndarray
    stiffness: np.ndarray
    boundary: np.ndarray

    @staticmethod
    def full(blocks):
        """``NM x NM`` matrix with row ``i*M + s`` and column ``j*M + r``.

        With this layout the matrix is the (conjugated) Gram matrix of the
        snapshots, hence Hermitian positive semidefinite for ``M`` and ``B``.
        """
        n, _, m, _ = blocks.shape
        return blocks.transpose(0, 3, 1, 2).reshape(n * m, n * m)

    @property
    def M(self):
        return self.full(self.mass)

    @property
    def S(self):
        return self.full(self.stiffness)

    @property
    def B(self):
        return self.full(self.boundary)


def _gram_blocks(u, a):
    """X[i, j, r, s] = conj(u_j^r)^T A u_i^s."""
    n, m, ndof = u.shape
    flat = u.reshape(n * m, ndof)
    g = flat.conj() @ (a @ flat.T)  # g[(j, r), (i, s)]
    return g.reshape(n, m, n, m).transpose(2, 0, 1, 3)


def rom_oracle(snapshots: SnapshotSet, q_true=None):
    """Block matrices by volume and boundary quadrature of the full snapshots."""
    q = snapshots.q if q_true is None else q_true
    sysm = snapshots.space.system
    mm = sysm.mass + sysm.mass_for(q)
    return RomMatrices(
        mass=_gram_blocks(snapshots.u, mm),
        stiffness=_gram_blocks(snapshots.u, sysm.stiffness),
        boundary=_gram_blocks(snapshots.u, sysm.boundary_mass),
    )


def trace_mass_matrix(mesh: Mesh, order: int, boundary_dofs):
    """Boundary mass matrix acting on trace vectors ordered like ``boundary_dofs``."""
    space = FunctionSpace(mesh, order)
    if not np.array_equal(space.boundary_dofs, boundary_dofs):
        raise InvalidArgumentError("trace ordering does not match the mesh boundary")
    local_index = np.full(space.dof_count, -1)
    local_index[boundary_dofs] = np.arange(len(boundary_dofs))
    ed = local_index[space.boundary_edge_dofs]
    nb = ed.shape[1]
    rows = np.repeat(ed, nb, axis=1).ravel()
    cols = np.tile(ed, (1, nb)).ravel()
    vals = _boundary_element_mass(space).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(len(boundary_dofs),) * 2).tocsr()


@dataclass
class BoundaryBlocks:
    """``B[i, j, r, s]`` plus the cross terms ``dB[i, r, s] = int u_i^(s) conj(d_k u_i^(r)) ds``."""

    values: np.ndarray
    dk_cross: np.ndarray


def assemble_B_from_traces(data: RomDataset, mesh: Mesh):
    """Boundary blocks from trace data alone (1D quadrature on boundary edges)."""
    bm = trace_mass_matrix(mesh, data.order, data.boundary_dofs)
    values = _gram_blocks(data.traces, bm)
    # dk_cross[i, r, s] = conj(du_i^r)^T B u_i^s
    dk_cross = np.einsum("ira,isa->irs", data.dk_traces.conj(), (bm @ data.traces.reshape(-1, bm.shape[0]).T).T.reshape(data.traces.shape))
    return BoundaryBlocks(values, dk_cross)


def rom_from_data(data: RomDataset, boundary: BoundaryBlocks, spacing_guard=SPACING_GUARD):
    """Recover the mass and stiffness blocks from boundary and receiver data."""
    k = np.asarray(data.k_values, dtype=np.float64)
    n, m = data.n_wavenumbers, data.n_sources
    e = data.responses
    de = data.dk_responses
    bb = boundary.values
    mass = np.zeros((n, n, m, m), dtype=np.complex128)
    stiff = np.zeros_like(mass)
    for i in range(n):
        for j in range(n):
            ki, kj = k[i], k[j]
            b_ij = bb[i, j]
            e_j_sr = e[j].T  # [r, s] -> E[j, s, r]
            if i != j:
                if abs(ki - kj) < spacing_guard:
                    raise IllConditionedRecoveryError(
                        f"wavenumbers k_{i}={ki} and k_{j}={kj} closer than {spacing_guard:g}"
                    )
                num = e_j_sr - e[i].conj() + 1j * (ki + kj) * b_ij
                mass[i, j] = num / (kj**2 - ki**2)
            else:
                # d/dk_j of numerator and denominator at k_j = k_i
                dnum = de[i].T + 1j * b_ij + 2j * ki * boundary.dk_cross[i]
                mass[i, i] = dnum / (2 * ki)
            stiff[i, j] = e_j_sr + ki**2 * mass[i, j] + 1j * ki * b_ij
    return RomMatrices(mass=mass, stiffness=stiff, boundary=bb.copy())


def block_relative_errors(approx: RomMatrices, ref: RomMatrices, name="mass"):
    """Relative Frobenius errors over off-diagonal and diagonal blocks."""
    a, b = getattr(approx, name), getattr(ref, name)
    n = a.shape[0]
    diag = np.eye(n, dtype=bool)
    out = {}
    for label, mask in (("offdiag", ~diag), ("diag", diag)):
        if not mask.any():
            out[label] = 0.0
            continue
        num = np.linalg.norm(a[mask] - b[mask])
        den = np.linalg.norm(b[mask])
        out[label] = float(num / den) if den > 0 else float(num)
    return out


def dataset_fingerprint(data: RomDataset):
    digest = hashlib.sha256()
    for arr in (data.k_values, data.traces, data.responses):
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()[:16]
