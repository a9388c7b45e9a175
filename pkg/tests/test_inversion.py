import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vlshelm.errors import InvalidArgumentError, ObjectiveEvaluationError, SingularMatrixError
from vlshelm.fem import FunctionSpace
from vlshelm.inversion import (
    InversionOptions,
    ObjectiveConfig,
    ParamGrid,
    gradient_adjoint_fwi,
    gradient_fd,
    lp_norm,
    minimize,
    misfit,
    phi_fwi,
    phi_rom,
    project_admissible,
)
from vlshelm.mesh import generate_rect_mesh
from vlshelm.rom import SourceSet, WavenumberGrid, _gram_blocks, extract_data, generate_snapshots

BOX = (0.25, 0.75, 0.25, 0.75)


@pytest.fixture(scope="module")
def twin():
    mesh = generate_rect_mesh(16, 16)
    space = FunctionSpace(mesh, 1)
    pgrid = ParamGrid(mesh, 4, 4)
    grid = WavenumberGrid((1.0, 2.0))
    sources = SourceSet(space, [(0.3, 0.5), (0.7, 0.5)])
    q_true = pgrid.indicator(BOX, 0.2)
    snaps = generate_snapshots(space, pgrid.to_field(q_true), grid, sources)
    responses = extract_data(snaps).responses
    stiffness = _gram_blocks(snaps.u, space.system.stiffness)
    return space, pgrid, grid, sources, q_true, responses, stiffness


def config(twin, kind, **kw):
    space, pgrid, grid, sources, _, responses, stiffness = twin
    return ObjectiveConfig(kind, space, grid, sources, pgrid, responses if kind == "fwi" else stiffness, **kw)


def test_param_grid_partition(twin):
    space, pgrid, *_ = twin
    assert pgrid.size == 16
    assert len(pgrid.cell_of_triangle) == space.mesh.n_triangles
    assert pgrid.cell_areas.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(pgrid.cell_areas, 1 / 16)
    assert pgrid.indicator(BOX, 0.2).sum() == pytest.approx(0.8)


def test_config_validation(twin):
    with pytest.raises(InvalidArgumentError):
        config(twin, "fwi", a=-1.0)
    with pytest.raises(InvalidArgumentError):
        config(twin, "fwi", p=2.0)
    with pytest.raises(InvalidArgumentError):
        config(twin, "fwi", p=np.inf)
    with pytest.raises(InvalidArgumentError):
        config(twin, "rom", gradient="adjoint")
    assert config(twin, "rom").gradient == "fd"
    assert config(twin, "fwi").gradient == "adjoint"


@pytest.mark.parametrize("kind,phi", [("fwi", phi_fwi), ("rom", phi_rom)])
def test_exact_fit_at_truth(twin, kind, phi):
    cfg = config(twin, kind)
    q_true = twin[4]
    ref = np.sum(np.abs(cfg.reference) ** 2)
    value = phi(q_true, cfg)
    assert value <= 1e-12 * ref
    assert phi(np.zeros_like(q_true), cfg) > value
    assert phi(q_true, cfg) == value


def test_wrong_functional_rejected(twin):
    with pytest.raises(InvalidArgumentError):
        phi_rom(twin[4], config(twin, "fwi"))


def test_penalty_monotone_in_weight(twin):
    q = np.full(16, 0.1)
    values = [phi_fwi(q, config(twin, "fwi", a=a)) for a in (0.0, 1e-4, 1e-2)]
    assert values[0] < values[1] < values[2]


def test_lp_norm_weights():
    w = np.array([0.5, 0.5])
    assert lp_norm([1.0, 1.0], w, 4) == pytest.approx(1.0)
    assert lp_norm([2.0, 0.0], w, np.inf) == 2.0


def test_fd_gradient_oracles():
    assert not np.any(gradient_fd(lambda x: 3.0, np.ones(4)))
    q0 = np.array([0.3, -0.2, 1.0])
    q = np.array([1.0, 2.0, -1.0])
    g = gradient_fd(lambda x: float(np.sum((x - q0) ** 2)), q, 1e-4)
    np.testing.assert_allclose(g, 2 * (q - q0), atol=1e-8)


def test_adjoint_vanishes_at_truth(twin):
    g = gradient_adjoint_fwi(twin[4], config(twin, "fwi"))
    assert np.max(np.abs(g)) <= 1e-10


def test_adjoint_against_directional_differences(twin):
    cfg = config(twin, "fwi", a=1e-3)
    q = np.linspace(-0.1, 0.3, 16)
    g = gradient_adjoint_fwi(q, cfg)
    rng = np.random.default_rng(7)
    for _ in range(3):
        d = rng.standard_normal(16)
        h = 1e-5
        fd = (phi_fwi(q + h * d, cfg) - phi_fwi(q - h * d, cfg)) / (2 * h)
        assert abs(g @ d - fd) <= 1e-4 * abs(fd)


def test_adjoint_single_cell():
    mesh = generate_rect_mesh(8, 8)
    space = FunctionSpace(mesh, 1)
    pgrid = ParamGrid(mesh, 1, 1)
    grid = WavenumberGrid((1.5,))
    sources = SourceSet(space, [(0.5, 0.5)])
    snaps = generate_snapshots(space, pgrid.to_field([0.3]), grid, sources)
    cfg = ObjectiveConfig("fwi", space, grid, sources, pgrid, extract_data(snaps).responses)
    q = np.array([0.05])
    fd = gradient_fd(lambda x: phi_fwi(x, cfg), q, 1e-6)
    assert gradient_adjoint_fwi(q, cfg)[0] == pytest.approx(fd[0], rel=1e-6)


def test_forward_failure_wrapped(twin, monkeypatch):
    cfg = config(twin, "fwi")

    def broken(self):
        raise SingularMatrixError("pivot breakdown")

    monkeypatch.setattr("vlshelm.forward.HelmholtzProblem.factorization", broken)
    with pytest.raises(ObjectiveEvaluationError, match="k=1"):
        misfit(twin[4], cfg)


def test_projection_examples():
    np.testing.assert_array_equal(project_admissible([-2.0, 0.5]), [-1.0, 0.5])
    q = np.array([0.1, -0.7, 3.0])
    np.testing.assert_array_equal(project_admissible(q), q)
    np.testing.assert_array_equal(project_admissible([-2.0], floor=0.1), [-0.9])


@settings(max_examples=50, deadline=None)
@given(
    q=arrays(np.float64, st.integers(1, 20), elements=st.floats(-10, 10)),
    floor=st.floats(0, 0.5),
)
def test_projection_idempotent_and_admissible(q, floor):
    p = project_admissible(q, floor)
    assert np.all(p >= -1.0 + floor)
    np.testing.assert_array_equal(project_admissible(p, floor), p)


def test_minimize_at_truth_stops_immediately(twin):
    result = minimize(config(twin, "fwi"), twin[4], InversionOptions(max_iter=5))
    assert result.termination_reason == "converged"
    assert result.iterations == 0


def test_minimize_rejects_inadmissible_start(twin):
    with pytest.raises(InvalidArgumentError):
        minimize(config(twin, "fwi"), np.full(16, -2.0))


def test_penalty_dominates_with_zero_data(twin):
    space, pgrid, grid, sources, *_ = twin
    snaps = generate_snapshots(space, None, grid, sources)
    cfg = ObjectiveConfig("fwi", space, grid, sources, pgrid, extract_data(snaps).responses, a=1e-2)
    result = minimize(cfg, np.full(16, 0.2), InversionOptions(max_iter=200, grad_tol=1e-8))
    assert np.max(np.abs(result.q_est)) <= 1e-2
    assert np.all(np.diff(result.objective_history) <= 0)


@pytest.mark.parametrize("kind,iters", [("fwi", 25), ("rom", 8)])
def test_small_twin_inversion(twin, kind, iters, tmp_path):
    cfg = config(twin, kind, a=1e-6)
    result = minimize(cfg, np.zeros(16), InversionOptions(max_iter=iters))
    m = result.misfit_history
    assert m[-1] <= 0.1 * m[0]
    assert np.all(np.diff(result.objective_history) <= 0)
    assert np.all(result.q_est >= -1)
    result.write_csv(tmp_path / "hist.csv")
    lines = (tmp_path / "hist.csv").read_text().splitlines()
    assert lines[0] == "iteration,objective,misfit,grad_norm,step"
    assert len(lines) == len(result.objective_history) + 1


def test_box_mode(twin):
    cfg = config(twin, "fwi", p=np.inf, bound=0.1, a=1.0)
    result = minimize(cfg, np.zeros(16), InversionOptions(max_iter=10))
    assert np.all(np.abs(result.q_est) <= 0.1 + 1e-15)
    assert np.all(np.diff(result.objective_history) <= 0)
