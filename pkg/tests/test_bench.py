import dataclasses
import math

import numpy as np
import pytest

from oseen_vem.bench import (
    BUILTIN,
    ConvergenceTable,
    ErrorReport,
    ExactSolution,
    ProblemSpec,
    boundary_flux,
    boundary_layer,
    builtin_problem,
    channel,
    compute_errors,
    convergence_study,
    interior_deviation,
    observed_rate,
    pressure_robust,
    solve_problem,
    strong_residual,
    trig_convergence,
)
from oseen_vem.errors import MissingExactSolution, UnknownProblem
from oseen_vem.forms import AdvectionField, CipParameters, PhysicalParameters
from oseen_vem.mesh import generate_square_grid
from oseen_vem.polyquad import cell_quadrature
from oseen_vem.system import interpolate_global

from conftest import voronoi_mesh
from helpers import SYMBOLIC, symbolic_forcing

def random_points(n=1000, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (n, 2))


# -- problem definitions ---------------------------------------------------


def test_pressure_robust_forcing():
    x = random_points(50)
    f = pressure_robust().params.f(x)
    np.testing.assert_allclose(f, np.column_stack([3 * np.sin(x[:, 0]), -3 * np.sin(x[:, 1])]), rtol=1e-14)


def test_trig_solution_is_solenoidal():
    x = random_points()
    assert np.abs(trig_convergence().exact.div(x)).max() <= 1e-12


def test_boundary_layer_end_values():
    ex = boundary_layer().exact
    y = np.linspace(0, 1, 11)
    for x0 in (0.0, 1.0):
        pts = np.column_stack([np.full_like(y, x0), y])
        assert not ex.u(pts).any()
    # the layer sits at x = 1; away from it u_2 = x
    mid = np.array([[0.5, 0.3]])
    assert ex.u(mid)[0, 1] == pytest.approx(0.5, rel=1e-15)


@pytest.mark.parametrize("name", sorted(SYMBOLIC))
@pytest.mark.parametrize("nu", [0.05, 0.3])
def test_forcing_matches_sympy_derivation(name, nu):
    prob = builtin_problem(name, nu=nu)
    x = random_points(200, 3)
    ref = symbolic_forcing(name, prob.params.nu, prob.params.sigma, x)
    np.testing.assert_allclose(prob.params.f(x), ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


def test_strong_residual_helper_is_consistent():
    for name in sorted(SYMBOLIC):
        x = random_points(100, 11)
        prob = builtin_problem(name)
        assert np.abs(strong_residual(prob, x)).max() <= 1e-10 * np.abs(prob.params.f(x)).max()


def test_builtin_registry():
    assert set(BUILTIN) == {"boundary_layer", "trig_convergence", "pressure_robust", "channel"}
    with pytest.raises(UnknownProblem) as info:
        builtin_problem("cavity")
    assert "trig_convergence" in str(info.value)
    assert channel().exact is None
    with pytest.raises(MissingExactSolution):
        strong_residual(channel(), random_points(3))


def test_beta_fields_have_consistent_derivatives():
    for beta in (boundary_layer().params.beta, trig_convergence().params.beta):
        x = random_points(20, 5)
        step = 1e-6
        for d in range(2):
            dx = np.zeros(2)
            dx[d] = step
            fd = (beta.value(x + dx) - beta.value(x - dx)) / (2 * step)
            np.testing.assert_allclose(beta.jacobian(x)[:, :, d], fd, atol=1e-7)
            fdj = (beta.jacobian(x + dx) - beta.jacobian(x - dx)) / (2 * step)
            np.testing.assert_allclose(beta.hessian(x)[:, :, :, d], fdj, atol=1e-6)


# -- error computation -----------------------------------------------------


def polynomial_problem():
    """Solenoidal quadratic velocity (exact for every k >= 2) with a smooth non-polynomial pressure."""

    def u(x):
        return np.column_stack([x[:, 0] ** 2 - 2 * x[:, 0] * x[:, 1], -(2 * x[:, 0] * x[:, 1] - x[:, 1] ** 2 + x[:, 0] ** 2)])

    def grad_u(x):
        G = np.empty((len(x), 2, 2))
        G[:, 0, 0] = 2 * x[:, 0] - 2 * x[:, 1]
        G[:, 0, 1] = -2 * x[:, 0]
        G[:, 1, 0] = -2 * x[:, 1] - 2 * x[:, 0]
        G[:, 1, 1] = -2 * x[:, 0] + 2 * x[:, 1]
        return G

    def p(x):
        return np.cos(3 * x[:, 0]) * x[:, 1]

    params = PhysicalParameters(1.0, 1.0, AdvectionField.constant((0.0, 0.0)))
    return ProblemSpec("poly", params, CipParameters(), lambda m: None, ExactSolution(u, grad_u, p))


def with_fields(sol, u=None, p=None):
    return dataclasses.replace(sol, u=sol.u if u is None else u, p=sol.p if p is None else p)


@pytest.fixture(scope="module")
def trig_solution():
    prob = trig_convergence()
    return prob, solve_problem(prob, voronoi_mesh(64), 2)


def test_errors_vanish_for_interpolated_polynomials(trig_solution):
    _, sol = trig_solution
    prob = polynomial_problem()
    sysm = sol.system
    u = interpolate_global(sysm.mesh, sysm.ops, sysm.dofmap, prob.exact.u, prob.exact.div)
    rep = compute_errors(with_fields(sol, u=u), prob)
    assert rep.e_H1 <= 1e-10 and rep.e_L2 <= 1e-10


def test_pressure_error_is_projection_error(trig_solution):
    _, sol = trig_solution
    prob = polynomial_problem()
    k = sol.system.k
    p_h = np.zeros_like(sol.p)
    oracle = 0.0
    for c, o in enumerate(sol.system.ops):
        q = cell_quadrature(o.geometry.vertices, 16, o.center)
        V = o.basis_of(k - 1).eval(q.points)
        coeffs = np.linalg.solve((V * q.weights[:, None]).T @ V, V.T @ (q.weights * prob.exact.p(q.points)))
        p_h[sol.system.dofmap.cell_pdofs[c]] = coeffs
        oracle += q.weights @ (prob.exact.p(q.points) - V @ coeffs) ** 2
    rep = compute_errors(with_fields(sol, p=p_h), prob)
    assert rep.e_p == pytest.approx(math.sqrt(oracle), rel=1e-8)


def test_zero_solution_errors_are_exact_norms(trig_solution):
    prob, sol = trig_solution
    rep = compute_errors(with_fields(sol, u=np.zeros_like(sol.u), p=np.zeros_like(sol.p)), prob)
    # ||u||^2 = 2 * (1/64) * (3/2) * (1/2) and ||grad u||^2 = pi^2 / 8
    assert rep.e_L2 == pytest.approx(math.sqrt(3 / 128), rel=1e-10)
    assert rep.e_H1 == pytest.approx(math.pi / math.sqrt(8), rel=1e-10)
    # ||p||^2 = (1/16) (1/2 + 1/2): the cross term vanishes because each factor has zero mean
    assert rep.e_p == pytest.approx(0.25, rel=1e-10)


def test_compute_errors_requires_exact(trig_solution):
    _, sol = trig_solution
    with pytest.raises(MissingExactSolution):
        compute_errors(sol, channel())


def test_compute_errors_reports_metadata(trig_solution):
    prob, sol = trig_solution
    rep = compute_errors(sol, prob)
    assert rep.n_cells == 64 and rep.h == sol.mesh.h
    assert 0 < rep.h_mean <= rep.h
    assert min(rep.e_H1, rep.e_L2, rep.e_p) > 0
    assert rep.div_norm <= 1e-8


# -- rates and studies -----------------------------------------------------


def test_rate_formula():
    assert observed_rate(0.1, 0.025, 0.2, 0.1) == pytest.approx(2.0, rel=1e-14)
    reps = [ErrorReport(h, 1, 1, e, e**1.5, e, h_mean=h / 2) for h, e in ((0.4, 0.16), (0.2, 0.04), (0.1, 0.01))]
    table = ConvergenceTable(2, reps)
    np.testing.assert_allclose(table.rates("e_H1"), [2.0, 2.0], rtol=1e-12)
    np.testing.assert_allclose(table.last_rates(), (2.0, 3.0, 2.0), rtol=1e-12)
    rows = list(table.rows())
    assert len(rows) == 3 and math.isnan(rows[0][-1]) and rows[1][-3] == pytest.approx(2.0)


def test_convergence_study_needs_three_meshes():
    with pytest.raises(ValueError):
        convergence_study(trig_convergence(), 2, [generate_square_grid(2), generate_square_grid(4)])


def test_convergence_study_sorts_and_writes_csv(tmp_path):
    meshes = [generate_square_grid(n) for n in (8, 2, 4)]
    table = convergence_study(trig_convergence(nu=1.0), 2, meshes)
    hs = [r.h for r in table.reports]
    assert hs == sorted(hs, reverse=True)
    table.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == ",".join(ConvergenceTable.HEADER) and len(lines) == 4


def test_interior_deviation_of_exact_interpolant():
    mesh = generate_square_grid(8)
    prob = boundary_layer()
    sol = solve_problem(prob.with_cip(CipParameters(0.1, 0.01, 0.01)), mesh, 2)
    u = interpolate_global(mesh, sol.system.ops, sol.system.dofmap, lambda x: np.column_stack([0 * x[:, 0], x[:, 0]]), lambda x: 0 * x[:, 0])
    dev, peak = interior_deviation(with_fields(sol, u=u))
    # quadrature points stop short of x = 1, where u_2 = x peaks
    assert dev <= 1e-12 and 0.99 < peak <= 1.0


def test_boundary_flux_of_constant_field():
    mesh = generate_square_grid(3)
    prob = trig_convergence(nu=1.0)
    sol = solve_problem(prob, mesh, 2)
    u = interpolate_global(mesh, sol.system.ops, sol.system.dofmap, lambda x: np.tile([2.0, 0.0], (len(x), 1)), lambda x: 0 * x[:, 0])
    const = with_fields(sol, u=u)
    assert boundary_flux(const, "left") == pytest.approx(-2.0, rel=1e-13)
    assert boundary_flux(const, "right") == pytest.approx(2.0, rel=1e-13)
    assert abs(boundary_flux(const, "top")) <= 1e-14
