"""Forward Helmholtz solves and the variational Lippmann-Schwinger operator.

With ``A_0 = S - k^2 M_1 - i k B`` the background operator, the contrast
operator is ``V_q g = A_0^{-1} M_q g`` and the total field solves

    u - k^2 V_q u = u_i,    u_i = A_0^{-1} b.

``solve_vls`` solves this matrix-free with GMRES, reusing one background
factorization per wavenumber; ``solve_direct`` factorizes
``S - k^2 M_{1+q} - i k B`` instead. Both give the same field.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, SingularMatrixError, UnsupportedOperationError
from .fem import (
    CoefficientField,
    FunctionSpace,
    MollifiedPointSource,
    Wavefield,
    assemble_boundary_load,
    assemble_load,
    norms,
)
from .solver import KrylovConfig, gmres

__all__ = [
    "HelmholtzProblem",
    "BackgroundOperator",
    "VlsResult",
    "load_vector",
    "solve_direct",
    "make_background",
    "apply_Vq",
    "solve_vls",
    "dk_wavefield",
    "h2_ratio",
    "mollified_source",
]

logger = logging.getLogger(__name__)


@dataclass
class HelmholtzProblem:
    """``(-Laplace - k^2 (1 + q)) u = f`` in the domain, ``(d_n - i k) u = g`` on its boundary.

    ``boundary_data`` is ``None`` (homogeneous impedance condition) except in
    manufactured-solution tests.
    """

    space: FunctionSpace
    q: CoefficientField | None
    k: float
    sources: list = field(default_factory=list)
    boundary_data: object = None
    check_admissible: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.k) and self.k > 0):
            raise InvalidArgumentError(f"wavenumber must be positive, got {self.k}")
        if self.q is None:
            self.q = CoefficientField.constant(0.0, self.space.mesh, name="zero")
        if self.check_admissible:
            self.q.check_admissible(self.space)

    @property
    def system(self):
        return self.space.system

    def operator(self):
        return self.system.combined(self.k, self.q)

    def factorization(self):
        try:
            return self.system.factorization(self.k, self.q)
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"{exc} (k={self.k}, q={self.q.name or self.q.fingerprint})") from exc


def load_vector(space: FunctionSpace, f):
    """Right-hand side for a source given as a vector, callback, cell values or point source."""
    if isinstance(f, np.ndarray) and f.shape == (space.dof_count,):
        return f.astype(np.complex128)
    if isinstance(f, Wavefield):
        return f.dofs
    return assemble_load(space, f)


def solve_direct(problem: HelmholtzProblem, f=None):
    """Solve the assembled system ``(S - k^2 M_m - i k B) u = b``."""
    space = problem.space
    b = load_vector(space, f)
    if problem.boundary_data is not None:
        b = b + assemble_boundary_load(space, problem.boundary_data)
    if not np.any(b):
        return Wavefield(space, np.zeros(space.dof_count, dtype=np.complex128))
    fac = problem.factorization()
    return Wavefield(space, fac.solve(b))


class BackgroundOperator:
    """Factorized ``A_0 = S - k^2 M_1 - i k B`` at a fixed wavenumber."""

    def __init__(self, space: FunctionSpace, k: float):
        if not (np.isfinite(k) and k > 0):
            raise InvalidArgumentError(f"wavenumber must be positive, got {k}")
        self.space = space
        self.k = float(k)
        sysm = space.system
        self.stiffness = sysm.stiffness
        self.mass = sysm.mass
        self.boundary_mass = sysm.boundary_mass
        self.factorization = sysm.factorization(self.k, None)

    @property
    def fingerprint(self):
        return self.factorization.fingerprint

    def apply(self, x):
        return self.factorization.matrix @ x

    def solve(self, b):
        return self.factorization.solve(b)

    def incident(self, f):
        """``u_i = A_0^{-1} b`` for the source ``f``."""
        return Wavefield(self.space, self.solve(load_vector(self.space, f)))


def make_background(space: FunctionSpace, k: float):
    return BackgroundOperator(space, k)


def apply_Vq(bg: BackgroundOperator, q: CoefficientField, g: Wavefield):
    """``w = A_0^{-1} M_q g``: the impedance solve with volume source ``q g``."""
    if g.space is not bg.space:
        raise InvalidArgumentError("field and background operator live on different spaces")
    if q.is_zero():
        return Wavefield(bg.space, np.zeros(bg.space.dof_count, dtype=np.complex128))
    mq = bg.space.system.mass_for(q)
    return Wavefield(bg.space, bg.solve(mq @ g.dofs))


@dataclass
class VlsResult:
    u: Wavefield
    iterations: int
    residual_history: list


def solve_vls(bg: BackgroundOperator, q: CoefficientField, f, config: KrylovConfig = KrylovConfig()):
    """Solve ``u - k^2 V_q u = u_i`` matrix-free with GMRES.

    Each iteration costs one sparse product with ``M_q`` and one solve with
    the cached background factors.
    """
    q.check_admissible(bg.space)
    ui = bg.incident(f)
    mq = bg.space.system.mass_for(q)
    k2 = bg.k**2

    def apply(x):
        return x - k2 * bg.solve(mq @ x)

    res = gmres(apply, ui.dofs, config)
    logger.debug("vls k=%g: %d GMRES iterations", bg.k, res.iterations)
    return VlsResult(Wavefield(bg.space, res.x), res.iterations, res.residual_history)


def dk_rhs(problem: HelmholtzProblem, x):
    """``(2 k M_m + i B) x`` for one or several (column) DoF vectors."""
    sysm = problem.system
    return 2 * problem.k * (sysm.mass @ x + sysm.mass_for(problem.q) @ x) + 1j * (sysm.boundary_mass @ x)


def dk_wavefield(problem: HelmholtzProblem, u: Wavefield):
    """Wavenumber derivative of ``u``: ``(S - k^2 M_m - i k B) du = (2 k M_m + i B) u``."""
    rhs = dk_rhs(problem, u.dofs)
    if not np.any(rhs):
        return Wavefield(problem.space, np.zeros(problem.space.dof_count, dtype=np.complex128))
    return Wavefield(problem.space, problem.factorization().solve(rhs))


def h2_ratio(u: Wavefield, f_l2_norm: float, k: float):
    """Broken H2 norm of ``u`` over ``(k + 1 + 1/k + 1/k^2) |f|_{L2}``.

    Returns 0 when both numerator and ``f_l2_norm`` vanish.
    """
    if u.space.order != 2:
        raise UnsupportedOperationError("h2_ratio needs an order-2 space")
    nm = norms(u, broken_h2=True)
    h2 = float(np.sqrt(nm.h1**2 + nm.broken_h2_semi**2))
    if f_l2_norm == 0.0:
        if h2 == 0.0:
            return 0.0
        raise InvalidArgumentError("nonzero field with zero source norm")
    return h2 / ((k + 1.0 + 1.0 / k + 1.0 / k**2) * f_l2_norm)


def mollified_source(space: FunctionSpace, center, radius=None):
    """Point source mollified over ``radius`` (default twice the mesh size)."""
    if radius is None:
        radius = 2.0 * space.mesh.h
    return MollifiedPointSource(tuple(float(c) for c in center), float(radius))
