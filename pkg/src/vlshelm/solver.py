"""Sparse direct factorization and restarted GMRES for complex systems."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceFailure, InvalidArgumentError, NumericalBreakdownError, SingularMatrixError

__all__ = ["Factorization", "KrylovConfig", "GmresResult", "lu_factorize", "gmres", "write_iteration_log"]

# relative pivot size below which the factor is reported singular
_PIVOT_RTOL = 1e-13


def _fingerprint(a):
    a = a.tocsr()
    a.sort_indices()
    digest = hashlib.sha256()
    digest.update(np.asarray(a.shape, dtype="<i8").tobytes())
    digest.update(a.indptr.astype("<i8").tobytes())
    digest.update(a.indices.astype("<i8").tobytes())
    digest.update(a.data.astype("<c16").tobytes())
    return digest.hexdigest()[:16]


class Factorization:
    """LU factors of a sparse complex matrix (SuperLU, COLAMD ordering).

    Immutable after construction; ``solve`` does not modify the factors.
    """

    def __init__(self, a):
        a = sp.csc_matrix(a, dtype=np.complex128)
        if a.shape[0] != a.shape[1]:
            raise InvalidArgumentError(f"matrix must be square, got shape {a.shape}")
        self.shape = a.shape
        self.fingerprint = _fingerprint(a)
        self.matrix = a
        try:
            self._lu = spla.splu(a, permc_spec="COLAMD", options={"SymmetricMode": False})
        except RuntimeError as exc:
            raise SingularMatrixError(f"LU factorization failed: {exc}") from exc
        pivots = np.abs(self._lu.U.diagonal())
        if pivots.size and (not np.all(np.isfinite(pivots)) or pivots.min() <= _PIVOT_RTOL * pivots.max()):
            raise SingularMatrixError(
                f"numerically singular pivot (min/max pivot ratio {pivots.min() / pivots.max():.3e})"
            )

    def solve(self, b, refine_tol=None, max_refine=5):
        """Solve ``A x = b``.

        With ``refine_tol`` set, iterative refinement runs until
        ``|Ax - b| <= refine_tol |b|`` (columnwise) or ``max_refine`` sweeps.
        """
        b = np.asarray(b, dtype=np.complex128)
        if b.shape[0] != self.shape[0]:
            raise InvalidArgumentError(f"right-hand side has {b.shape[0]} rows, expected {self.shape[0]}")
        x = self._lu.solve(b)
        if refine_tol is None:
            return x
        bnorm = np.linalg.norm(b, axis=0)
        for _ in range(max_refine):
            r = b - self.matrix @ x
            if np.all(np.linalg.norm(r, axis=0) <= refine_tol * bnorm):
                break
            x = x + self._lu.solve(r)
        return x

    def residual(self, x, b):
        """Relative residual ``|Ax - b| / (|A|_F |x| + |b|)``."""
        r = self.matrix @ x - b
        scale = spla.norm(self.matrix) * np.linalg.norm(x) + np.linalg.norm(b)
        return float(np.linalg.norm(r) / scale) if scale > 0 else 0.0


def lu_factorize(a):
    """Factorize a square sparse (or dense) complex matrix."""
    return Factorization(a)


@dataclass(frozen=True)
class KrylovConfig:
    tol: float = 1e-10
    max_iter: int = 500
    restart: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1 or self.restart < 1:
            raise InvalidArgumentError("max_iter and restart must be at least 1")


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    residual_history: list = field(default_factory=list)
    restart_residuals: list = field(default_factory=list)


def gmres(apply, b, config: KrylovConfig = KrylovConfig(), x0=None):
    """Restarted GMRES with modified Gram-Schmidt and Givens rotations.

    ``residual_history`` holds the relative residual estimate after every
    Arnoldi step (entry 0 is the initial residual); ``restart_residuals``
    the true relative residual at each restart boundary.

    Raises ``ConvergenceFailure`` after ``config.max_iter`` steps and
    ``NumericalBreakdownError`` on non-finite values.
    """
    b = np.asarray(b, dtype=np.complex128)
    n = b.shape[0]
    bnorm = np.linalg.norm(b)
    x = np.zeros(n, dtype=np.complex128) if x0 is None else np.array(x0, dtype=np.complex128)
    if bnorm == 0.0 and x0 is None:
        return GmresResult(x, 0, [0.0], [0.0])
    if not np.isfinite(bnorm):
        raise NumericalBreakdownError("right-hand side is not finite")
    target = config.tol * bnorm
    history, restarts = [], []
    iterations = 0
    m = config.restart

    while True:
        r = b - apply(x)
        beta = np.linalg.norm(r)
        if not np.isfinite(beta):
            raise NumericalBreakdownError("non-finite residual in GMRES")
        restarts.append(beta / bnorm)
        if not history:
            history.append(beta / bnorm)
        if beta <= target:
            return GmresResult(x, iterations, history, restarts)
        if iterations >= config.max_iter:
            raise ConvergenceFailure(
                f"GMRES did not reach tol={config.tol:g} in {config.max_iter} iterations "
                f"(relative residual {beta / bnorm:.3e})",
                x=x,
                iterations=iterations,
                residual_history=history,
            )

        V = np.zeros((m + 1, n), dtype=np.complex128)
        H = np.zeros((m + 1, m), dtype=np.complex128)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=np.complex128)
        g = np.zeros(m + 1, dtype=np.complex128)
        g[0] = beta
        V[0] = r / beta
        j_used = 0
        for j in range(m):
            w = apply(V[j])
            if not np.all(np.isfinite(w)):
                raise NumericalBreakdownError("operator returned non-finite values")
            for i in range(j + 1):
                H[i, j] = np.vdot(V[i], w)
                w = w - H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            breakdown = abs(H[j + 1, j]) <= 1e-14 * max(abs(H[: j + 1, j]).max(), 1e-300)
            if not breakdown:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -np.conj(sn[i]) * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            cs[j], sn[j], H[j, j] = _givens(H[j, j], H[j + 1, j])
            H[j + 1, j] = 0.0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]
            iterations += 1
            j_used = j + 1
            history.append(abs(g[j + 1]) / bnorm)
            if abs(g[j + 1]) <= target or breakdown or iterations >= config.max_iter:
                break
        y = _back_substitute(H[:j_used, :j_used], g[:j_used])
        x = x + V[:j_used].T @ y


def _givens(a, b):
    """Rotation (c real, s complex) mapping (a, b) to (r, 0)."""
    rho = np.hypot(abs(a), abs(b))
    if rho == 0.0:
        raise NumericalBreakdownError("zero column in the Hessenberg matrix")
    if abs(a) == 0.0:
        return 0.0, 1.0, b
    phase = a / abs(a)
    return abs(a) / rho, phase * np.conj(b) / rho, phase * rho


def _back_substitute(r, g):
    y = np.zeros_like(g)
    for i in range(len(g) - 1, -1, -1):
        y[i] = (g[i] - r[i, i + 1 :] @ y[i + 1 :]) / r[i, i]
    return y


def write_iteration_log(path, history):
    """Write a residual history as CSV rows ``iteration,residual``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "residual"])
        for i, r in enumerate(history):
            writer.writerow([i, f"{r:.17g}"])
