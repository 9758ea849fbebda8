import math

import numpy as np
import pytest
import sympy as sp

from oseen_vem.bench import beta_boundary_layer, beta_trig
from oseen_vem.element import ElementOperators
from oseen_vem.forms import (
    AdvectionField,
    CipParameters,
    PhysicalParameters,
    b_velocity_pressure,
    cip_edge_blocks,
    cip_element_stab,
    cip_quantities,
    jump,
    local_A,
    local_c_skew,
    local_rhs,
)
from oseen_vem.polyquad import dim_p, monomial_exponents

from conftest import voronoi_mesh
from helpers import PolyField, poly_field_for, random_convex_polygon

UNIT = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
RIGHT = UNIT + [1.0, 0.0]
FULL = CipParameters(0.1, 0.01, 0.01)


def interp(ops, fx, fy, div):
    return ops.interpolate(lambda x: np.column_stack([fx(x), fy(x)]), div)


def zeros(x):
    return np.zeros(len(x))


# -- parameters ------------------------------------------------------------


def test_parameter_validation():
    with pytest.raises(ValueError):
        PhysicalParameters(0.0, 1.0)
    with pytest.raises(ValueError):
        PhysicalParameters(1.0, -1.0)
    with pytest.raises(ValueError):
        CipParameters(0.1, -0.01, 0.0)
    assert CipParameters(0.1, 0.3, 0.2).delta == 0.3
    pts = np.random.default_rng(0).uniform(0, 1, (50, 2))
    assert PhysicalParameters(1.0, 1.0, beta_trig()).check_beta_divergence_free(pts)
    assert PhysicalParameters(1.0, 1.0, beta_boundary_layer()).check_beta_divergence_free(pts)
    radial = AdvectionField(lambda x: x, lambda x: np.broadcast_to(np.eye(2), (len(x), 2, 2)), None)
    assert not PhysicalParameters(1.0, 1.0, radial).check_beta_divergence_free(pts)


# -- A_h -------------------------------------------------------------------


@pytest.mark.parametrize("k", [2, 3])
def test_local_A_constant_field(k):
    ops = ElementOperators(random_convex_polygon(np.random.default_rng(k), 6), k)
    v = interp(ops, lambda x: 0 * x[:, 0] + 0.3, lambda x: 0 * x[:, 0] - 1.2, zeros)
    for nu in (1e-6, 1.0, 7.0):
        A = local_A(ops, nu, 1.0)
        assert v @ A @ v == pytest.approx(ops.area * (0.3**2 + 1.2**2), rel=1e-11)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_stabilization_vanishes_on_polynomials(k, rng):
    ops = ElementOperators(random_convex_polygon(rng, 5), k)
    f = poly_field_for(ops, rng)
    v = ops.interpolate(f, f.div)
    S = ops.stabilization
    assert abs(v @ S @ v) <= 1e-12 * np.abs(S).max() * (v @ v)
    # the full form then equals its polynomial part: nu ||P eps||^2 + sigma ||P0 v||^2
    nu, sigma = 0.7, 1.3
    A = local_A(ops, nu, sigma)
    q = ops.quad
    G = f.grad(q.points)
    eps = 0.5 * (G + G.transpose(0, 2, 1))
    exact = nu * q.integrate((eps**2).sum((1, 2))) + sigma * q.integrate((f(q.points) ** 2).sum(1))
    assert v @ A @ v == pytest.approx(exact, rel=1e-9)


def test_local_A_psd_on_voronoi_cells():
    mesh = voronoi_mesh(64)
    for c in range(0, mesh.n_cells, 7):
        for k in (2, 3):
            A = local_A(ElementOperators(mesh.cell_vertices(c), k), 1e-3, 1.0)
            assert np.array_equal(A, A.T)
            assert np.linalg.eigvalsh(A).min() >= -1e-12 * np.abs(A).max()


# -- convection ------------------------------------------------------------


def test_c_skew_antisymmetric(rng):
    ops = ElementOperators(voronoi_mesh(64).cell_vertices(3), 3)
    M = local_c_skew(ops, beta_trig())
    assert np.array_equal(M, -M.T)
    for _ in range(10):
        v = rng.normal(size=ops.layout.size)
        assert abs(v @ M @ v) <= 1e-14 * np.abs(M).max() * (v @ v)


def test_c_skew_unit_square_hand_integral():
    ops = ElementOperators(UNIT, 2)
    beta = AdvectionField.constant((1.0, 0.0))
    u = interp(ops, lambda x: x[:, 0], zeros, lambda x: np.ones(len(x)))
    v = interp(ops, lambda x: 0 * x[:, 0] + 1.0, zeros, zeros)
    # c(u, v) = int ((grad u) beta) . v = 1, c(v, u) = 0
    assert v @ local_c_skew(ops, beta) @ u == pytest.approx(0.5, rel=1e-12)
    assert u @ local_c_skew(ops, beta) @ v == pytest.approx(-0.5, rel=1e-12)


def test_c_skew_zero_beta():
    ops = ElementOperators(UNIT, 3)
    assert not local_c_skew(ops, AdvectionField.constant((0.0, 0.0))).any()


# -- b and rhs -------------------------------------------------------------


def test_b_examples(rng):
    ops = ElementOperators(random_convex_polygon(rng, 7), 3)
    v = interp(ops, lambda x: x[:, 0], lambda x: x[:, 1], lambda x: 2 + 0 * x[:, 0])
    B = b_velocity_pressure(ops)
    assert (B @ v)[0] == pytest.approx(2 * ops.area, rel=1e-12)
    # quadrature oracle on random DoFs
    w = rng.normal(size=ops.layout.size)
    q = ops.quad
    basis = ops.basis_of(ops.k - 1)
    div_vals = basis.eval(q.points) @ (ops.div_coeffs @ w)
    oracle = (basis.eval(q.points) * (q.weights * div_vals)[:, None]).sum(0)
    np.testing.assert_allclose(B @ w, oracle, atol=1e-12 * np.abs(oracle).max())


def test_b_vanishes_for_divergence_free_dofs():
    ops = ElementOperators(UNIT, 2)
    # rigid rotation about the centre: div = 0 and zero net flux
    v = interp(ops, lambda x: -(x[:, 1] - 0.5), lambda x: x[:, 0] - 0.5, zeros)
    np.testing.assert_allclose(b_velocity_pressure(ops) @ v, 0, atol=1e-14)


def test_rhs_examples(rng):
    ops = ElementOperators(random_convex_polygon(rng, 5), 2)
    assert not local_rhs(ops, None).any()
    assert not local_rhs(ops, lambda x: np.zeros((len(x), 2))).any()
    F = local_rhs(ops, lambda x: np.column_stack([np.ones(len(x)), np.zeros(len(x))]))
    e1 = interp(ops, lambda x: 0 * x[:, 0] + 1.0, zeros, zeros)
    assert F @ e1 == pytest.approx(ops.area, rel=1e-12)


def test_rhs_matches_high_order_quadrature(rng):
    from oseen_vem.bench import trig_convergence
    from oseen_vem.polyquad import cell_quadrature

    prob = trig_convergence()
    ops = ElementOperators(random_convex_polygon(rng, 6), 2)
    f = poly_field_for(ops, rng)
    v = ops.interpolate(f, f.div)
    fine = cell_quadrature(ops.geometry.vertices, 24, ops.center)
    oracle = fine.integrate((prob.params.f(fine.points) * f(fine.points)).sum(1))
    got = local_rhs(ops, prob.params.f, fine) @ v
    assert got == pytest.approx(oracle, rel=1e-10, abs=1e-14)


# -- CIP -------------------------------------------------------------------


def two_squares(k):
    return ElementOperators(UNIT, k), ElementOperators(RIGHT, k)


def test_cip_zero_parameters():
    L, R = two_squares(2)
    blk = cip_edge_blocks((1, 0), (1, 1), L, R, beta_trig(), CipParameters())
    assert blk.shape == (L.layout.size + R.layout.size,) * 2 and not blk.any()
    assert not cip_element_stab(L, CipParameters()).any()


@pytest.mark.parametrize("k", [2, 3, 4])
@pytest.mark.parametrize("beta", [AdvectionField.constant((0.7, -0.4)), beta_trig()], ids=["const", "trig"])
def test_cip_vanishes_on_global_polynomials(k, beta, rng):
    L, R = two_squares(k)
    f = PolyField(rng.normal(size=(2, dim_p(k))), k, (1.0, 0.5), 1.0)
    w = np.concatenate([L.interpolate(f, f.div), R.interpolate(f, f.div)])
    blk = cip_edge_blocks((1, 0), (1, 1), L, R, beta, FULL)
    assert abs(w @ blk @ w) <= 1e-12 * np.abs(blk).max() * (w @ w)


def test_cip_two_square_hand_computation():
    """u = (0, x^2) on the left, (0, x) on the right, beta = (1, 0), edge x = 1.

    (grad u) beta = d_x u: (0, 2x) and (0, 1); tangent (0, 1).
    Level 1 jump 2 - 1 = 1, level 2 jump curl = 2 - 0, level 3 jump 0.
    Weights with h = sqrt 2: h^2 = 2, h^4 = 4.
    """
    L, R = two_squares(2)
    beta = AdvectionField.constant((1.0, 0.0))
    uL = interp(L, zeros, lambda x: x[:, 0] ** 2, zeros)
    uR = interp(R, zeros, lambda x: x[:, 0], zeros)
    w = np.concatenate([uL, uR])

    def J(triple):
        return w @ cip_edge_blocks((1, 0), (1, 1), L, R, beta, CipParameters(*triple)) @ w

    assert J((0.3, 0, 0)) == pytest.approx(0.3 * 2 * 1**2, rel=1e-12)
    assert J((0, 0.3, 0)) == pytest.approx(0.3 * 4 * 2**2, rel=1e-12)
    assert abs(J((0, 0, 0.3))) <= 1e-20
    # orientation of the edge does not matter
    flipped = w @ cip_edge_blocks((1, 1), (1, 0), L, R, beta, CipParameters(0.3, 0.3, 0.3)) @ w
    assert flipped == pytest.approx(J((0.3, 0.3, 0.3)), rel=1e-12)


def test_cip_quantities_sympy_oracle():
    x, y = sp.symbols("x y")
    k = 3
    verts = np.array([[0.1, 0.2], [0.5, 0.15], [0.6, 0.5], [0.3, 0.7], [0.05, 0.5]])
    ops = ElementOperators(verts, k)
    coeffs = np.random.default_rng(1).normal(size=(2, dim_p(k)))
    U = [sum(coeffs[a, i] * x**e0 * y**e1 for i, (e0, e1) in enumerate(monomial_exponents(k))) for a in range(2)]
    b = [sp.sin(2 * sp.pi * x) * sp.sin(2 * sp.pi * y), sp.cos(2 * sp.pi * x) * sp.cos(2 * sp.pi * y)]
    g = [U[a].diff(x) * b[0] + U[a].diff(y) * b[1] for a in range(2)]
    curl = g[1].diff(x) - g[0].diff(y)
    t = np.array([0.6, 0.8])
    f = PolyField(coeffs, k)
    dofs = ops.interpolate(f, f.div)
    pts = np.array([[0.3, 0.4], [0.2, 0.3], [0.45, 0.55]])
    l1, l2, l3 = cip_quantities(ops, pts, t, beta_trig())

    def ev(expr):
        fn = sp.lambdify((x, y), expr, "numpy")
        return np.array([float(fn(px, py)) for px, py in pts])

    scale = np.abs(coeffs).max()
    np.testing.assert_allclose(l1 @ dofs, ev(g[0] * t[0] + g[1] * t[1]), atol=1e-9 * scale)
    np.testing.assert_allclose(l2 @ dofs, ev(curl), atol=1e-8 * scale)
    for d, var in enumerate((x, y)):
        np.testing.assert_allclose(l3[:, d] @ dofs, ev(curl.diff(var)), atol=1e-7 * scale)


def test_cip_linear_in_delta_and_psd(rng):
    mesh = voronoi_mesh(64)
    e = int(mesh.internal_edges[5])
    left, right = mesh.edge_cells[e]
    a, b = mesh.vertices[mesh.edges[e]]
    L = ElementOperators(mesh.cell_vertices(left), 3)
    R = ElementOperators(mesh.cell_vertices(right), 3)
    blk = cip_edge_blocks(a, b, L, R, beta_trig(), FULL)
    blk2 = cip_edge_blocks(a, b, L, R, beta_trig(), FULL.scaled(2.0))
    np.testing.assert_allclose(blk2, 2 * blk, rtol=1e-13, atol=1e-16)
    assert np.array_equal(blk, blk.T)
    assert np.linalg.eigvalsh(blk).min() >= -1e-12 * np.abs(blk).max()


def test_cip_element_stab(rng):
    ops = ElementOperators(random_convex_polygon(rng, 6), 3)
    S = cip_element_stab(ops, FULL)
    np.testing.assert_allclose(S, 0.1 * ops.h * ops.stabilization)
    np.testing.assert_allclose(cip_element_stab(ops, CipParameters(0.2, 0.01, 0.01)), 2 * S, rtol=1e-15)
    f = poly_field_for(ops, rng)
    v = ops.interpolate(f, f.div)
    assert abs(v @ S @ v) <= 1e-12 * np.abs(S).max() * (v @ v)
    assert np.linalg.eigvalsh(S).min() >= -1e-12 * np.abs(S).max()


def test_jump_utility():
    np.testing.assert_array_equal(jump(np.array([3.0, 1.0]), np.array([1.0, 1.0])), [2.0, 0.0])
    np.testing.assert_array_equal(jump(np.array([3.0])), [3.0])
    assert math.isclose(float(jump(np.array(2.0), np.array(-1.0))), 3.0)
