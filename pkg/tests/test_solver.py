import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from vlshelm.errors import ConvergenceFailure, InvalidArgumentError, NumericalBreakdownError, SingularMatrixError
from vlshelm.solver import KrylovConfig, gmres, lu_factorize, write_iteration_log


def random_system(n, seed, shift=None):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    a += (shift if shift is not None else 2 * np.sqrt(n)) * np.eye(n)
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return a, b


def test_identity():
    b = np.array([1 + 2j, -3, 0.5j])
    np.testing.assert_array_equal(lu_factorize(sp.identity(3, format="csc")).solve(b), b)


def test_diagonal():
    a = sp.csc_matrix(np.diag([2.0, -1j]))
    np.testing.assert_allclose(lu_factorize(a).solve(np.array([2.0, -1j])), [1.0, 1.0], rtol=1e-15)


def test_random_dense_oracle():
    a, b = random_system(50, 1)
    x = lu_factorize(sp.csc_matrix(a)).solve(b)
    assert np.linalg.norm(a @ x - b) <= 1e-10 * (np.linalg.norm(a, "fro") * np.linalg.norm(x) + np.linalg.norm(b))
    np.testing.assert_allclose(x, np.linalg.solve(a, b), rtol=1e-10)


def test_singular():
    a = sp.csc_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularMatrixError):
        lu_factorize(a)


def test_solve_is_bit_reproducible():
    a, b = random_system(40, 2)
    fac = lu_factorize(sp.csc_matrix(a))
    assert np.array_equal(fac.solve(b), fac.solve(b))
    other = lu_factorize(sp.csc_matrix(a))
    assert np.array_equal(fac.solve(b), other.solve(b))
    assert fac.fingerprint == other.fingerprint


def test_iterative_refinement_tightens_residual():
    a, b = random_system(60, 3, shift=0.5)
    fac = lu_factorize(sp.csc_matrix(a))
    x = fac.solve(b, refine_tol=1e-15)
    assert np.linalg.norm(fac.residual(x, b)) <= 1e-13 * np.linalg.norm(b) * 10


def test_gmres_identity_one_iteration():
    b = np.arange(5, dtype=complex) + 1j
    res = gmres(lambda x: x, b, KrylovConfig())
    np.testing.assert_allclose(res.x, b)
    assert res.iterations == 1


def test_gmres_zero_rhs():
    res = gmres(lambda x: 2 * x, np.zeros(4, dtype=complex), KrylovConfig())
    assert res.iterations == 0
    assert not np.any(res.x)


def test_gmres_matches_lu():
    a, b = random_system(30, 4)
    res = gmres(lambda x: a @ x, b, KrylovConfig(tol=1e-12))
    x = lu_factorize(sp.csc_matrix(a)).solve(b)
    assert np.linalg.norm(res.x - x) <= 1e-8 * np.linalg.norm(x)
    assert np.linalg.norm(a @ res.x - b) <= 1e-12 * np.linalg.norm(b) * 1.01


def test_gmres_restart_history_non_increasing():
    a, b = random_system(80, 5)
    res = gmres(lambda x: a @ x, b, KrylovConfig(tol=1e-10, restart=5, max_iter=2000))
    r = np.array(res.restart_residuals)
    assert len(r) > 2
    assert np.all(np.diff(r) <= 1e-14 * r[0])


def test_gmres_convergence_failure_carries_history():
    a, b = random_system(60, 6, shift=0.0)
    with pytest.raises(ConvergenceFailure) as info:
        gmres(lambda x: a @ x, b, KrylovConfig(tol=1e-14, restart=3, max_iter=6))
    assert info.value.iterations == 6
    assert len(info.value.residual_history) >= 6


def test_gmres_breakdown_on_nan():
    with pytest.raises(NumericalBreakdownError):
        gmres(lambda x: np.full_like(x, np.nan), np.ones(3, dtype=complex), KrylovConfig())


@pytest.mark.parametrize("kw", [{"tol": 0.0}, {"max_iter": 0}, {"restart": 0}])
def test_krylov_config_validation(kw):
    with pytest.raises(InvalidArgumentError):
        KrylovConfig(**kw)


def test_iteration_log(tmp_path):
    path = tmp_path / "log.csv"
    write_iteration_log(path, [1.0, 0.1, 1e-3])
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,residual"
    assert lines[2] == "1,0.10000000000000001"


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 25), seed=st.integers(0, 10_000), restart=st.integers(2, 30))
def test_gmres_solves_well_conditioned_property(n, seed, restart):
    a, b = random_system(n, seed)
    res = gmres(lambda x: a @ x, b, KrylovConfig(tol=1e-10, restart=restart, max_iter=5000))
    assert np.linalg.norm(a @ res.x - b) <= 1.01e-10 * np.linalg.norm(b)
