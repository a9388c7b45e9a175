from math import factorial

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from vlshelm.errors import InvalidArgumentError, UnsupportedOperationError
from vlshelm.fem import (
    QUAD_DEG2,
    QUAD_DEG4,
    CoefficientField,
    FunctionSpace,
    MollifiedPointSource,
    Wavefield,
    assemble_boundary_load,
    assemble_boundary_mass,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    interpolate,
    norms,
)
from vlshelm.mesh import Mesh, generate_rect_mesh


@pytest.fixture(scope="module")
def square():
    return generate_rect_mesh(6, 6)


def unit_triangle():
    return Mesh.from_triangles(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


def symmetric_error(a):
    a = sp.csr_matrix(a)
    d = abs(a - a.T)
    return d.max() / max(abs(a).max(), 1e-300) if d.nnz else 0.0


def test_p1_element_stiffness_on_reference_triangle():
    s = assemble_stiffness(FunctionSpace(unit_triangle(), 1)).toarray()
    expected = np.array([[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]])
    np.testing.assert_allclose(s, expected, atol=1e-14)


@pytest.mark.parametrize("order", [1, 2])
def test_stiffness_annihilates_constants(square, order):
    space = FunctionSpace(square, order)
    s = assemble_stiffness(space)
    assert np.max(np.abs(s @ np.full(space.dof_count, 3.0))) <= 1e-10
    assert symmetric_error(s) <= 1e-12


@pytest.mark.parametrize("order", [1, 2])
def test_stiffness_energy_of_linear_function(square, order):
    space = FunctionSpace(square, order)
    x = interpolate(space, lambda p: p[:, 0]).dofs
    assert np.real(x @ (assemble_stiffness(space) @ x)) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("order", [1, 2])
def test_dof_counts(square, order):
    space = FunctionSpace(square, order)
    expected = square.n_vertices + (len(square.edges) if order == 2 else 0)
    assert space.dof_count == expected
    assert space.dof_map.min() >= 0 and space.dof_map.max() < space.dof_count
    assert len(np.unique(space.dof_map)) == space.dof_count


def test_mass_of_one(square):
    space = FunctionSpace(square, 1)
    one = np.ones(space.dof_count)
    assert one @ assemble_mass(space) @ one == pytest.approx(1.0, rel=1e-12)
    assert assemble_mass(space, 0.0).count_nonzero() == 0


def test_mass_piecewise_left_half(square):
    space = FunctionSpace(square, 1)
    m = CoefficientField.indicator(square, (0.0, 0.5, -1.0, 2.0), 2.0)
    one = np.ones(space.dof_count)
    assert one @ assemble_mass(space, m) @ one == pytest.approx(1.0, rel=1e-12)


def test_mass_positive_definite_on_two_triangles():
    space = FunctionSpace(generate_rect_mesh(1, 1), 1)
    m = assemble_mass(space).toarray()
    assert np.linalg.eigvalsh(m).min() > 0
    np.testing.assert_allclose(m, m.T, atol=1e-15)


@pytest.mark.parametrize("order", [1, 2])
def test_boundary_mass(square, order):
    space = FunctionSpace(square, order)
    b = assemble_boundary_mass(space)
    one = np.ones(space.dof_count)
    assert one @ b @ one == pytest.approx(4.0, rel=1e-12)
    assert symmetric_error(b) <= 1e-12
    interior = np.setdiff1d(np.arange(space.dof_count), space.boundary_dofs)
    y = np.zeros(space.dof_count)
    y[interior] = np.linspace(1, 2, len(interior))
    assert np.max(np.abs(b @ y)) == 0.0
    assert np.linalg.eigvalsh(b.toarray()).min() >= -1e-14


def test_boundary_mass_against_1d_oracle(square):
    # int_boundary x^2 ds: independent Gauss-Legendre quadrature along each side
    t, w = np.polynomial.legendre.leggauss(5)
    s, w = 0.5 * (t + 1), 0.5 * w
    oracle = sum(np.sum(w * fx(s) ** 2) for fx in (lambda s: s, lambda s: 1 + 0 * s, lambda s: 1 - s, lambda s: 0 * s))
    space = FunctionSpace(square, 1)
    x = interpolate(space, lambda p: p[:, 0]).dofs
    assert np.real(x @ assemble_boundary_mass(space) @ x) == pytest.approx(oracle, rel=1e-12)


def test_complex_symmetry_of_all_matrices(square):
    space = FunctionSpace(square, 2)
    q = CoefficientField(func=lambda x: np.sin(3 * x[..., 0]) * x[..., 1])
    for a in (space.system.stiffness, assemble_mass(space, q), space.system.boundary_mass):
        assert symmetric_error(a) <= 1e-12


def test_mass_linear_in_coefficient(square):
    space = FunctionSpace(square, 2)
    m1 = CoefficientField(func=lambda x: 1 + x[..., 0] ** 2)
    m2 = CoefficientField.indicator(square, (0.2, 0.6, 0.1, 0.9), 3.0)
    combo = CoefficientField(func=lambda x: 2.0 * m1.func(x))
    lhs = assemble_mass(space, combo) - 0.5 * assemble_mass(space, m2)
    rhs_field = 2.0 * assemble_mass(space, m1) - 0.5 * assemble_mass(space, m2)
    assert abs(lhs - rhs_field).max() <= 1e-12 * abs(rhs_field).max()


@pytest.mark.parametrize("quad", [QUAD_DEG4, QUAD_DEG2])
def test_quadrature_exactness(quad):
    space = FunctionSpace(unit_triangle(), 1)
    for a in range(quad.degree + 1):
        for b in range(quad.degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            value = assemble_load(space, lambda x: x[..., 0] ** a * x[..., 1] ** b, quad).sum()
            assert value.real == pytest.approx(exact, rel=1e-13, abs=1e-15)


def test_load_vectors(square):
    space = FunctionSpace(square, 1)
    assert assemble_load(space, lambda x: np.ones(x.shape[:-1])).sum() == pytest.approx(1.0, rel=1e-12)
    assert not np.any(assemble_load(space, lambda x: np.zeros(x.shape[:-1])))
    assert not np.any(assemble_load(space, None))
    cells = np.full(square.n_triangles, 2.0)
    assert assemble_load(space, cells).sum() == pytest.approx(2.0, rel=1e-12)


def test_mollified_source_normalized(square):
    space = FunctionSpace(square, 1)
    src = MollifiedPointSource((0.5, 0.5), 2 * square.h)
    assert abs(assemble_load(space, src).sum() - 1.0) <= 1e-8
    # the analytic bump itself integrates to one
    fine = FunctionSpace(generate_rect_mesh(64, 64), 1)
    raw = assemble_load(fine, lambda x: src(x)).sum()
    assert raw.real == pytest.approx(1.0, rel=2e-3)


def test_boundary_load(square):
    space = FunctionSpace(square, 1)
    assert not np.any(assemble_boundary_load(space, lambda x, n: np.zeros(x.shape[:-1])))
    ones = assemble_boundary_load(space, lambda x, n: np.ones(x.shape[:-1]))
    assert ones.sum() == pytest.approx(4.0, rel=1e-12)


def test_boundary_load_plane_wave_rhs():
    # against an independent 1D quadrature of the impedance data of exp(i k x)
    k = 2.0
    space = FunctionSpace(generate_rect_mesh(4, 4), 1)

    def g(x, n):
        return 1j * k * (n[..., 0] - 1.0) * np.exp(1j * k * x[..., 0])

    b = assemble_boundary_load(space, g)
    # on the left side n = (-1, 0), x = 0: g = -2 i k; the right side contributes zero;
    # top and bottom: g = -i k exp(i k x)
    side = -1j * k * (np.exp(1j * k) - 1) / (1j * k)
    assert b.sum() == pytest.approx(-2j * k + 2 * side, rel=1e-10)


def test_norms(square):
    space = FunctionSpace(square, 1)
    one = interpolate(space, lambda p: np.ones(len(p)))
    nm = norms(one)
    assert nm.l2 == pytest.approx(1.0, rel=1e-12)
    assert nm.h1 == pytest.approx(1.0, rel=1e-12)
    x = interpolate(FunctionSpace(square, 2), lambda p: p[:, 0])
    assert norms(x).h1 ** 2 == pytest.approx(1 / 3 + 1, rel=1e-12)
    zero = norms(Wavefield(space, np.zeros(space.dof_count)))
    assert zero.l2 == zero.h1 == 0.0


def test_broken_h2_requires_p2(square):
    space = FunctionSpace(square, 1)
    with pytest.raises(UnsupportedOperationError):
        norms(interpolate(space, lambda p: p[:, 0]), broken_h2=True)


def test_broken_h2_of_quadratic(square):
    # u = x^2 + x y: Hessian [[2, 1], [1, 0]], Frobenius^2 = 6 on a unit-area domain
    u = interpolate(FunctionSpace(square, 2), lambda p: p[:, 0] ** 2 + p[:, 0] * p[:, 1])
    assert norms(u, broken_h2=True).broken_h2_semi == pytest.approx(np.sqrt(6.0), rel=1e-12)


def test_wavefield_validation(square):
    space = FunctionSpace(square, 1)
    with pytest.raises(InvalidArgumentError):
        Wavefield(space, np.zeros(3))
    bad = np.zeros(space.dof_count)
    bad[0] = np.nan
    with pytest.raises(InvalidArgumentError):
        Wavefield(space, bad)


def test_coefficient_admissibility(square):
    with pytest.raises(InvalidArgumentError):
        CoefficientField(np.full(square.n_triangles, -1.5), lower_bound_check=True)
    CoefficientField(np.full(square.n_triangles, -1.0), lower_bound_check=True)
    with pytest.raises(InvalidArgumentError):
        CoefficientField()


def test_degenerate_index_assembles(square):
    # q = -1 on a region (m = 0) is admissible and must assemble
    space = FunctionSpace(square, 1)
    q = CoefficientField.indicator(square, (0.0, 0.5, 0.0, 1.0), -1.0)
    a = space.system.combined(2.0, q)
    assert np.all(np.isfinite(a.data))


def test_factorization_cache_reuse(square):
    space = FunctionSpace(square, 1)
    q = CoefficientField.constant(0.1, square)
    f1 = space.system.factorization(2.0, q)
    assert space.system.factorization(2.0, q) is f1
    assert space.system.factorization(3.0, q) is not f1


@settings(max_examples=20, deadline=None)
@given(
    alpha=st.floats(-3, 3),
    beta=st.floats(-3, 3),
    seed=st.integers(0, 10_000),
)
def test_mass_linearity_property(alpha, beta, seed):
    mesh = generate_rect_mesh(3, 3)
    space = FunctionSpace(mesh, 1)
    rng = np.random.default_rng(seed)
    v1, v2 = rng.uniform(-1, 2, (2, mesh.n_triangles))
    lhs = assemble_mass(space, CoefficientField(alpha * v1 + beta * v2))
    rhs = alpha * assemble_mass(space, CoefficientField(v1)) + beta * assemble_mass(space, CoefficientField(v2))
    scale = max(abs(rhs).max(), 1e-300)
    assert abs(lhs - rhs).max() <= 1e-12 * scale + 1e-15
