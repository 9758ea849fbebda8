"""Shared test utilities: random polygons and polynomial vector fields."""

from __future__ import annotations

import numpy as np
import sympy as sp

from oseen_vem.element import ElementOperators
from oseen_vem.forms import (
    b_velocity_pressure,
    cip_edge_blocks,
    cip_element_stab,
    local_A,
    local_c_skew,
    local_rhs,
)
from oseen_vem.mesh import build_mesh
from oseen_vem.polyquad import dim_p, monomial_exponents


def random_convex_polygon(rng: np.random.Generator, n: int) -> np.ndarray:
    """Convex polygon with ``n`` vertices on a random ellipse, counter-clockwise."""
    while True:
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))
        if gaps.min() > 0.25 * 2 * np.pi / n:
            break
    a, b = rng.uniform(0.5, 1.5, 2)
    centre = rng.uniform(-2, 2, 2)
    scale = 10.0 ** rng.uniform(-2, 0)
    return centre + scale * np.column_stack([a * np.cos(angles), b * np.sin(angles)])


class PolyField:
    """Vector polynomial sum_a c_a ((x - centre)/scale)^a with analytic gradient."""

    def __init__(self, coeffs, degree: int, centre=(0.0, 0.0), scale: float = 1.0):
        self.coeffs = np.asarray(coeffs, dtype=float).reshape(2, dim_p(degree))
        self.exps = monomial_exponents(degree)
        self.centre = np.asarray(centre, dtype=float)
        self.scale = float(scale)

    def _xi(self, x):
        return (np.atleast_2d(x) - self.centre) / self.scale

    @staticmethod
    def _mono(xi, i, j):
        if i < 0 or j < 0:
            return np.zeros(len(xi))
        return xi[:, 0] ** i * xi[:, 1] ** j

    def __call__(self, x):
        xi = self._xi(x)
        return np.column_stack(
            [sum(c * self._mono(xi, i, j) for c, (i, j) in zip(self.coeffs[a], self.exps)) for a in range(2)]
        )

    def grad(self, x):
        xi = self._xi(x)
        G = np.zeros((len(xi), 2, 2))
        for a in range(2):
            for c, (i, j) in zip(self.coeffs[a], self.exps):
                G[:, a, 0] += c * i * self._mono(xi, i - 1, j)
                G[:, a, 1] += c * j * self._mono(xi, i, j - 1)
        return G / self.scale

    def div(self, x):
        G = self.grad(x)
        return G[:, 0, 0] + G[:, 1, 1]


def random_poly_field(rng, degree: int, centre=(0.0, 0.0), scale: float = 1.0) -> PolyField:
    return PolyField(rng.normal(size=(2, dim_p(degree))), degree, centre, scale)


def poly_field_for(ops, rng, degree: int | None = None) -> PolyField:
    """Random degree-k field written in the element's own scaled monomials."""
    return random_poly_field(rng, ops.k if degree is None else degree, ops.center, ops.h)


def two_square_mesh():
    """Unit squares [0,1]^2 and [1,2]x[0,1] sharing the edge x = 1."""
    verts = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (2, 1)]
    return build_mesh(verts, [(0, 1, 4, 3), (1, 2, 5, 4)])


def scatter_oracle(mesh, k, params, cip, f):
    """Global K, B, F rebuilt from local blocks with hand-written index maps."""
    ops = [ElementOperators(mesh.cell_vertices(c), k) for c in range(mesh.n_cells)]
    nv, ne = mesh.n_vertices, mesh.n_edges
    n_int = dim_p(k - 3) + dim_p(k - 1) - 1
    n_u = 2 * nv + 2 * (k - 1) * ne + n_int * mesh.n_cells
    idx = []
    for c, loop in enumerate(mesh.cells):
        rows = [d for v in loop for d in (2 * v, 2 * v + 1)]
        for j, (e, sign) in enumerate(mesh.cell_edges[c]):
            nodes = range(k - 1) if sign > 0 else reversed(range(k - 1))
            rows += [2 * nv + 2 * ((k - 1) * e + m) + comp for m in nodes for comp in (0, 1)]
        rows += [2 * nv + 2 * (k - 1) * ne + n_int * c + i for i in range(n_int)]
        idx.append(np.array(rows))
    K = np.zeros((n_u, n_u))
    n_p = dim_p(k - 1) * mesh.n_cells
    B = np.zeros((n_p, n_u))
    F = np.zeros(n_u)
    for c, o in enumerate(ops):
        blk = local_A(o, params.nu, params.sigma) + local_c_skew(o, params.beta) + cip_element_stab(o, cip)
        K[np.ix_(idx[c], idx[c])] += blk
        B[np.ix_(dim_p(k - 1) * c + np.arange(dim_p(k - 1)), idx[c])] += b_velocity_pressure(o)
        F[idx[c]] += local_rhs(o, f)
    for e in mesh.internal_edges:
        left, right = mesh.edge_cells[e]
        a, b = mesh.vertices[mesh.edges[e]]
        both = np.concatenate([idx[left], idx[right]])
        # shared DoFs repeat in ``both``, so accumulate instead of assigning
        np.add.at(K, np.ix_(both, both), cip_edge_blocks(a, b, ops[left], ops[right], params.beta, cip))
    return K, B, F


# -- symbolic manufactured solutions ---------------------------------------

X, Y = sp.symbols("x y")
# nu stays symbolic until evaluation, so exp((x - 1) / nu) is never split into inf * 0
NU = sp.Symbol("nu", positive=True)


def _boundary_layer():
    e = sp.exp(-1 / NU)
    u = [sp.Integer(0), X - (sp.exp((X - 1) / NU) - e) / (1 - e)]
    return u, sp.Rational(1, 2) - Y, [Y**2, X**2]


def _trig():
    u = [
        -sp.sin(sp.pi * X) ** 2 * sp.cos(sp.pi * Y) * sp.sin(sp.pi * Y) / 2,
        sp.sin(sp.pi * Y) ** 2 * sp.cos(sp.pi * X) * sp.sin(sp.pi * X) / 2,
    ]
    p = (sp.cos(4 * sp.pi * X) - sp.sin(4 * sp.pi * Y)) / 4
    beta = [sp.sin(2 * sp.pi * X) * sp.sin(2 * sp.pi * Y), sp.cos(2 * sp.pi * X) * sp.cos(2 * sp.pi * Y)]
    return u, p, beta


def _pressure_robust():
    return [sp.Integer(0), sp.Integer(0)], 3 * sp.cos(X) - 3 * sp.cos(Y), [Y**2, X**2]


SYMBOLIC = {"boundary_layer": _boundary_layer, "trig_convergence": _trig, "pressure_robust": _pressure_robust}


def symbolic_forcing(name: str, nu: float, sigma: float, x: np.ndarray) -> np.ndarray:
    """f = -nu div eps(u) + (grad u) beta + sigma u - grad p, derived symbolically and evaluated at x."""
    u, p, beta = SYMBOLIC[name]()
    grad = [[sp.diff(u[a], v) for v in (X, Y)] for a in range(2)]
    eps = [[(grad[a][b] + grad[b][a]) / 2 for b in range(2)] for a in range(2)]
    div_eps = [sp.diff(eps[a][0], X) + sp.diff(eps[a][1], Y) for a in range(2)]
    gp = [sp.diff(p, X), sp.diff(p, Y)]
    f = [-NU * div_eps[a] + grad[a][0] * beta[0] + grad[a][1] * beta[1] + sigma * u[a] - gp[a] for a in range(2)]
    fn = sp.lambdify((X, Y, NU), f, "numpy")
    with np.errstate(under="ignore"):
        vals = fn(x[:, 0], x[:, 1], nu)
    return np.column_stack([np.broadcast_to(np.asarray(c, dtype=float), len(x)) for c in vals])
