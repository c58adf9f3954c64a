import numpy as np
import pytest

from hnfcavity.fem import enumerate_dofs
from hnfcavity.mesh import GeometrySpec, Shape, build_mesh
from hnfcavity.properties import CLEAR_FLUID, hybrid_ratios
from hnfcavity.solver import solve_stationary
from hnfcavity.system import (CoupledProblem, DimensionError, SolutionFields, assemble_newton_system)


def _random_state(problem, rng, scale=1.0):
    x = scale * rng.normal(size=problem.dofs.size)
    return problem.apply_dirichlet(x)


@pytest.mark.parametrize("shape", [Shape.SQUARE, Shape.LSHAPE])
def test_jacobian_matches_central_differences(shape, rng):
    mesh = build_mesh(GeometrySpec(shape), 4)
    dofs = enumerate_dofs(mesh)
    problem = CoupledProblem(mesh, dofs, hybrid_ratios(0.01), pr=0.71, ra=1e3)
    x = _random_state(problem, rng)
    jac = problem.jacobian(x)
    free = problem.free
    eps = 1e-6
    for _ in range(3):
        d = rng.normal(size=len(free))
        xp, xm = x.copy(), x.copy()
        xp[free] += eps * d
        xm[free] -= eps * d
        fd = (problem.residual(xp) - problem.residual(xm)) / (2 * eps)
        jv = jac @ d
        assert np.linalg.norm(jv - fd) <= 1e-6 * np.linalg.norm(jv)


def test_picard_matrix_drops_gradient_blocks(rng):
    mesh = build_mesh(GeometrySpec(Shape.SQUARE), 4)
    dofs = enumerate_dofs(mesh)
    problem = CoupledProblem(mesh, dofs, CLEAR_FLUID, 1.0, 100.0)
    x = _random_state(problem, rng)
    jn, jp = problem.jacobian(x, newton=True), problem.jacobian(x, newton=False)
    assert jn.shape == jp.shape
    assert np.abs((jn - jp).toarray()).max() > 1e-3
    # the Picard matrix is the Newton matrix at the same velocity with zero gradient terms,
    # so it differs only in velocity-velocity and temperature-velocity coupling blocks
    diff = (jn - jp).tocoo()
    s = dofs.slices()
    cols = problem.free[diff.col[np.abs(diff.data) > 1e-14]]
    velocity_cols = np.r_[np.arange(*s["u"].indices(dofs.size)[:2]), np.arange(*s["v"].indices(dofs.size)[:2])]
    assert np.isin(cols, velocity_cols).all()


def test_dimensions_include_multiplier(square4):
    mesh, dofs = square4
    problem = CoupledProblem(mesh, dofs, CLEAR_FLUID, 1.0, 0.0)
    n_fixed = len(dofs.fixed_indices())
    assert problem.jacobian(problem.initial_state()).shape == (dofs.size - n_fixed,) * 2
    assert dofs.size == 3 * dofs.n_p2 + dofs.n_p1 + 1


def test_ra_zero_decouples(square4):
    mesh, dofs = square4
    problem = CoupledProblem(mesh, dofs, hybrid_ratios(0.0033), 1.0, 0.0)
    x = problem.initial_state()
    r = problem.full_residual(x)
    s = dofs.slices()
    assert np.abs(r[s["u"]]).max() == 0
    assert np.abs(r[s["v"]]).max() == 0
    # without flow the energy rows reduce to a stiffness product, whose rows sum to zero
    t = x[s["t"]]
    assert np.allclose(r[s["t"]].sum(), 0.0, atol=1e-12)
    assert t[dofs.dirichlet_temperature].tolist() == dofs.temperature_values.tolist()


def test_state_dimension_mismatch(square4):
    mesh, dofs = square4
    bad = SolutionFields(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(2))
    with pytest.raises(DimensionError):
        assemble_newton_system(bad, mesh, dofs, CLEAR_FLUID, 1.0, 0.0)
    with pytest.raises(DimensionError):
        SolutionFields.unpack(np.zeros(5), dofs)


def test_converged_state_has_small_residual(square4):
    mesh, dofs = square4
    sol, rep = solve_stationary(mesh, dofs, CLEAR_FLUID, 0.71, 1e3)
    system = assemble_newton_system(sol, mesh, dofs, CLEAR_FLUID, 0.71, 1e3)
    assert np.linalg.norm(system.residual) <= rep.tolerance
    assert set(system.block_norms()) == {"u", "v", "t", "p", "multiplier"}


def test_pack_unpack_roundtrip(square4, rng):
    _, dofs = square4
    x = rng.normal(size=dofs.size)
    assert np.array_equal(SolutionFields.unpack(x, dofs).pack(), x)


def test_invalid_parameters(square4):
    mesh, dofs = square4
    with pytest.raises(ValueError):
        CoupledProblem(mesh, dofs, CLEAR_FLUID, 0.0, 1.0)
    with pytest.raises(ValueError):
        CoupledProblem(mesh, dofs, CLEAR_FLUID, 1.0, -1.0)
