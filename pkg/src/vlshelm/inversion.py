"""Regularized ROM-based and conventional waveform inversion.

Both functionals are minimized over coarse-cell contrasts ``q >= -1``:

    phi_rom(q; a) = 1/2 |S_obs - S(q)|_F^2 + a |q|_p
    phi_fwi(q; a) = 1/2 sum_{i,r,s} |<f^(r), u_i^(s)(q)> - E_obs[i, r, s]|^2 + a |q|_p

``S(q)`` is the ROM stiffness matrix of the snapshots at the trial contrast.
For ``p = inf`` the penalty is replaced by the box constraint
``|q|_inf <= bound``.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ObjectiveEvaluationError
from .fem import CoefficientField, FunctionSpace
from .forward import HelmholtzProblem
from .mesh import Mesh
from .rom import SourceSet, WavenumberGrid, _gram_blocks

__all__ = [
    "ParamGrid",
    "ObjectiveConfig",
    "InversionOptions",
    "InversionResult",
    "lp_norm",
    "phi_rom",
    "phi_fwi",
    "misfit",
    "gradient_fd",
    "gradient_adjoint_fwi",
    "project_admissible",
    "minimize",
]

logger = logging.getLogger(__name__)


class ParamGrid:
    """Partition of a rectangle into ``nx * ny`` coarse cells, mapped onto mesh triangles."""

    def __init__(self, mesh: Mesh, nx: int, ny: int, bounds=(0.0, 1.0, 0.0, 1.0)):
        if nx < 1 or ny < 1:
            raise InvalidArgumentError("coarse grid needs at least one cell per direction")
        self.mesh = mesh
        self.nx, self.ny = int(nx), int(ny)
        x0, x1, y0, y1 = bounds
        c = mesh.centroids
        ix = np.floor((c[:, 0] - x0) / (x1 - x0) * nx).astype(int)
        iy = np.floor((c[:, 1] - y0) / (y1 - y0) * ny).astype(int)
        if np.any((ix < 0) | (ix >= nx) | (iy < 0) | (iy >= ny)):
            raise InvalidArgumentError("mesh extends beyond the coarse grid bounds")
        self.cell_of_triangle = iy * nx + ix
        self.cell_areas = np.bincount(self.cell_of_triangle, weights=mesh.areas, minlength=self.size)
        if np.any(self.cell_areas == 0):
            raise InvalidArgumentError("coarse cell without any mesh triangle")

    @property
    def size(self):
        return self.nx * self.ny

    def to_field(self, values, name="q"):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.size,):
            raise InvalidArgumentError(f"expected {self.size} coarse values, got shape {values.shape}")
        return CoefficientField(values[self.cell_of_triangle], name=name)

    def indicator(self, box, value=1.0):
        """Coarse values: ``value`` on cells whose centers lie in ``box``."""
        j, i = np.divmod(np.arange(self.size), self.nx)
        cx, cy = (i + 0.5) / self.nx, (j + 0.5) / self.ny
        x0, x1, y0, y1 = box
        return np.where((cx > x0) & (cx < x1) & (cy > y0) & (cy < y1), float(value), 0.0)


def lp_norm(q, weights, p):
    """Area-weighted discrete L^p norm."""
    q = np.abs(np.asarray(q, dtype=np.float64))
    if np.isinf(p):
        return float(q.max(initial=0.0))
    return float(np.sum(weights * q**p) ** (1.0 / p))


def lp_norm_gradient(q, weights, p):
    """Gradient of ``lp_norm``; zero at ``q = 0`` where the norm has a kink."""
    norm = lp_norm(q, weights, p)
    if norm == 0.0:
        return np.zeros_like(q, dtype=np.float64)
    return weights * np.abs(q) ** (p - 2) * q / norm ** (p - 1)


@dataclass
class ObjectiveConfig:
    """Everything needed to evaluate one of the two misfit functionals.

    ``reference`` holds the observed stiffness blocks ``S[i, j, r, s]`` for
    ``kind="rom"`` or the observed responses ``E[i, r, s]`` for ``kind="fwi"``.
    """

    kind: str
    space: FunctionSpace
    grid: WavenumberGrid
    sources: SourceSet
    param_grid: ParamGrid
    reference: np.ndarray
    a: float = 0.0
    p: float = 4.0
    bound: float | None = None
    gradient: str | None = None
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.kind not in ("rom", "fwi"):
            raise InvalidArgumentError(f"objective kind must be 'rom' or 'fwi', got {self.kind!r}")
        if self.a < 0:
            raise InvalidArgumentError("regularization weight must be non-negative")
        if not self.p > 2:
            raise InvalidArgumentError("Lebesgue exponent must exceed 2")
        if np.isinf(self.p) and self.bound is None:
            raise InvalidArgumentError("p = inf needs a box bound")
        if self.gradient is None:
            self.gradient = "adjoint" if self.kind == "fwi" else "fd"
        if self.gradient == "adjoint" and self.kind != "fwi":
            raise InvalidArgumentError("adjoint gradients are available for the fwi functional only")


def _solve_all(q, cfg: ObjectiveConfig):
    """Wavefields (N, M, ndof) and per-wavenumber factorizations at the coarse contrast ``q``."""
    field_q = cfg.param_grid.to_field(q)
    u = np.zeros((len(cfg.grid), len(cfg.sources), cfg.space.dof_count), dtype=np.complex128)
    facs = []
    for i, k in enumerate(cfg.grid.k_values):
        problem = HelmholtzProblem(cfg.space, field_q, k, check_admissible=False)
        try:
            fac = problem.factorization()
        except Exception as exc:
            raise ObjectiveEvaluationError(f"forward solve failed at k={k}: {exc}") from exc
        u[i] = fac.solve(cfg.sources.vectors.T).T
        facs.append(fac)
    return u, facs


def _responses(u, cfg):
    return np.einsum("ra,isa->irs", cfg.sources.vectors, u.conj())


def misfit(q, cfg: ObjectiveConfig):
    """Data term of the functional (no penalty)."""
    q = np.asarray(q, dtype=np.float64)
    u, _ = _solve_all(q, cfg)
    if cfg.kind == "rom":
        model = _gram_blocks(u, cfg.space.system.stiffness)
    else:
        model = _responses(u, cfg)
    return 0.5 * float(np.sum(np.abs(model - cfg.reference) ** 2))


def penalty(q, cfg: ObjectiveConfig):
    if np.isinf(cfg.p):
        return 0.0
    return cfg.a * lp_norm(q, cfg.param_grid.cell_areas, cfg.p)


def phi_rom(q, cfg: ObjectiveConfig):
    if cfg.kind != "rom":
        raise InvalidArgumentError("configuration is not for the rom functional")
    return misfit(q, cfg) + penalty(q, cfg)


def phi_fwi(q, cfg: ObjectiveConfig):
    if cfg.kind != "fwi":
        raise InvalidArgumentError("configuration is not for the fwi functional")
    return misfit(q, cfg) + penalty(q, cfg)


def objective(q, cfg: ObjectiveConfig):
    return misfit(q, cfg) + penalty(q, cfg)


def gradient_fd(phi, q, h=1e-6):
    """Central finite differences, one pair of evaluations per component."""
    q = np.asarray(q, dtype=np.float64)
    g = np.zeros_like(q)
    for c in range(q.size):
        e = np.zeros_like(q)
        e[c] = h
        g[c] = (phi(q + e) - phi(q - e)) / (2 * h)
    return g


def _cell_pairing(space: FunctionSpace, cells, ncells, lam, u):
    """Per coarse cell, ``sum_T lam_T^T M_T u_T`` with unit-weight element mass matrices."""
    me = _element_mass_cache(space)
    dm = space.dof_map
    local = np.einsum("ta,tab,tb->t", lam[dm], me, u[dm])
    return np.bincount(cells, weights=local.real, minlength=ncells) + 1j * np.bincount(
        cells, weights=local.imag, minlength=ncells
    )


def _element_mass_cache(space):
    me = getattr(space, "_unit_element_mass", None)
    if me is None:
        me = space.element_mass()
        space._unit_element_mass = me
    return me


def gradient_adjoint_fwi(q, cfg: ObjectiveConfig):
    """Gradient of ``phi_fwi`` by the adjoint-state method.

    With ``A_i(q) u = f^(s)`` complex symmetric, the derivative in coarse cell
    ``c`` is ``Re sum_{i,s} k_i^2 lam_is^T M_c u_i^(s)`` where
    ``A_i lam_is = sum_r res[i, r, s] f^(r)``: one extra solve per ``(i, s)``.
    """
    if cfg.kind != "fwi":
        raise InvalidArgumentError("adjoint gradient needs the fwi functional")
    q = np.asarray(q, dtype=np.float64)
    u, facs = _solve_all(q, cfg)
    res = _responses(u, cfg) - cfg.reference
    pg = cfg.param_grid
    grad = np.zeros(pg.size)
    for i, k in enumerate(cfg.grid.k_values):
        w = np.einsum("rs,ra->sa", res[i], cfg.sources.vectors)
        lam = facs[i].solve(w.T).T
        for s in range(len(cfg.sources)):
            grad += k**2 * _cell_pairing(cfg.space, pg.cell_of_triangle, pg.size, lam[s], u[i, s]).real
    if not np.isinf(cfg.p) and cfg.a > 0:
        grad += cfg.a * lp_norm_gradient(q, pg.cell_areas, cfg.p)
    return grad


def objective_gradient(q, cfg: ObjectiveConfig):
    if cfg.gradient == "adjoint":
        return gradient_adjoint_fwi(q, cfg)
    g = gradient_fd(lambda x: misfit(x, cfg), q, cfg.fd_step)
    if not np.isinf(cfg.p) and cfg.a > 0:
        g = g + cfg.a * lp_norm_gradient(q, cfg.param_grid.cell_areas, cfg.p)
    return g


def project_admissible(q, floor=0.0, upper=None):
    """Clip to ``q >= -1 + floor`` (and ``q <= upper`` in box mode)."""
    q = np.maximum(np.asarray(q, dtype=np.float64), -1.0 + floor)
    if upper is not None:
        q = np.minimum(q, upper)
    return q


@dataclass
class InversionOptions:
    max_iter: int = 100
    grad_tol: float = 1e-10
    step_init: float = 1.0
    backtrack: float = 0.5
    armijo_c: float = 1e-4
    max_backtracks: int = 30
    floor: float = 0.0
    step_min: float = 1e-12
    step_max: float = 1e12


@dataclass
class InversionResult:
    q_est: np.ndarray
    objective_history: list = field(default_factory=list)
    misfit_history: list = field(default_factory=list)
    projected_gradient_norm_history: list = field(default_factory=list)
    step_history: list = field(default_factory=list)
    iterations: int = 0
    termination_reason: str = ""

    def write_csv(self, path):
        """History as CSV (iteration, objective, misfit, grad_norm, step), written atomically."""
        from .io import atomic_write_text

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(["iteration", "objective", "misfit", "grad_norm", "step"])
        rows = zip(self.objective_history, self.misfit_history, self.projected_gradient_norm_history, self.step_history)
        for it, (f, m, g, s) in enumerate(rows):
            writer.writerow([it, f"{f:.17g}", f"{m:.17g}", f"{g:.17g}", f"{s:.17g}"])
        atomic_write_text(path, buf.getvalue())


def minimize(cfg: ObjectiveConfig, q0, opts: InversionOptions = InversionOptions()):
    """Projected gradient descent with Armijo backtracking.

    The first trial step moves the largest coarse value by ``step_init``;
    later trial steps use the Barzilai-Borwein length ``s.s / s.y``. Only
    steps satisfying the Armijo condition along the projection arc are
    accepted, so the objective history is non-increasing.
    """
    upper = cfg.bound if np.isinf(cfg.p) else None
    lower_box = -cfg.bound if upper is not None else None

    def project(x):
        x = project_admissible(x, opts.floor, upper)
        return np.maximum(x, lower_box) if lower_box is not None else x

    q = np.asarray(q0, dtype=np.float64)
    if not np.array_equal(project(q), q):
        raise InvalidArgumentError("initial contrast is not admissible")
    m = misfit(q, cfg)
    f = m + penalty(q, cfg)
    g = objective_gradient(q, cfg)
    result = InversionResult(q_est=q.copy())
    prev = None
    reason = "max_iter"
    it = 0
    for it in range(opts.max_iter + 1):
        pg_norm = float(np.linalg.norm(project(q - g) - q))
        result.objective_history.append(f)
        result.misfit_history.append(m)
        result.projected_gradient_norm_history.append(pg_norm)
        if pg_norm <= opts.grad_tol:
            reason = "converged"
            result.step_history.append(0.0)
            break
        if it == opts.max_iter:
            result.step_history.append(0.0)
            break
        if prev is None:
            t = opts.step_init / max(float(np.max(np.abs(g))), 1e-300)
        else:
            s, y = q - prev[0], g - prev[1]
            sy = float(s @ y)
            t = float(s @ s) / sy if sy > 0 else opts.step_max
        t = min(max(t, opts.step_min), opts.step_max)

        accepted = False
        for _ in range(opts.max_backtracks + 1):
            q_new = project(q - t * g)
            d = q_new - q
            if not np.any(d):
                break
            m_new = misfit(q_new, cfg)
            f_new = m_new + penalty(q_new, cfg)
            if f_new <= f + opts.armijo_c * float(g @ d):
                accepted = True
                break
            t *= opts.backtrack
        if not accepted:
            reason = "stalled"
            result.step_history.append(0.0)
            break
        result.step_history.append(t)
        prev = (q, g)
        q, f, m = q_new, f_new, m_new
        g = objective_gradient(q, cfg)
        logger.info("iter %d: objective %.6e misfit %.6e |pg| %.3e step %.3e", it, f, m, pg_norm, t)
    result.q_est = q
    result.iterations = len(result.objective_history) - 1
    result.termination_reason = reason
    return result
