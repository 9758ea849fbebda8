"""Local divergence-free virtual element: DoF layout and projector matrices.

Local DoF ordering for an element with N_v vertices and degree k:

(a) vertex values, interleaved ``(v_x, v_y)`` per vertex, loop order;
(b) values at the k-1 interior Gauss-Lobatto nodes of each local edge
    (edge j runs from vertex j to vertex j+1), interleaved per node;
(c) (1/|E|) int_E v . m_perp m_a,       |a| <= k-3;
(d) (h_E/|E|) int_E div(v) m_a,         0 < |a| <= k-1.

Vector polynomials are stored as ``(c_x, c_y)`` blocks over the scaled
monomial basis; tensor polynomials as four blocks ordered (0,0), (0,1),
(1,0), (1,1), where entry (a, b) of a gradient is d v_a / d x_b.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import SingularLocalSystem, UnsupportedOrder
from .mesh import ElementGeometry, element_geometry
from .polyquad import (
    Poly2,
    Quadrature,
    ScaledMonomialBasis,
    _derivative_matrix,
    cell_quadrature,
    dim_p,
    edge_gauss,
    gauss_lobatto_reference,
    monomial_exponents,
    monomial_mass_matrix,
    xperp_coefficients,
)

log = logging.getLogger(__name__)

COND_WARN = 1e12


@dataclass(frozen=True)
class DofLayout:
    k: int
    n_vertices: int

    @property
    def n_vertex(self) -> int:
        return 2 * self.n_vertices

    @property
    def n_edge(self) -> int:
        return 2 * self.n_vertices * (self.k - 1)

    @property
    def n_perp(self) -> int:
        return dim_p(self.k - 3)

    @property
    def n_div(self) -> int:
        return dim_p(self.k - 1) - 1

    @property
    def n_boundary(self) -> int:
        return self.n_vertex + self.n_edge

    @property
    def size(self) -> int:
        return self.n_boundary + self.n_perp + self.n_div

    @property
    def perp_slice(self) -> slice:
        return slice(self.n_boundary, self.n_boundary + self.n_perp)

    @property
    def div_slice(self) -> slice:
        return slice(self.n_boundary + self.n_perp, self.size)

    def vertex_dof(self, i: int, comp: int) -> int:
        return 2 * (i % self.n_vertices) + comp

    def edge_dof(self, j: int, m: int, comp: int) -> int:
        """DoF of interior node m (0-based, from vertex j) on local edge j."""
        return self.n_vertex + 2 * ((self.k - 1) * j + m) + comp

    def node_dof(self, j: int, m: int, comp: int) -> int:
        """DoF of Gauss-Lobatto node m in 0..k on local edge j (0 and k are vertices)."""
        if m == 0:
            return self.vertex_dof(j, comp)
        if m == self.k:
            return self.vertex_dof(j + 1, comp)
        return self.edge_dof(j, m - 1, comp)


def dof_layout(n_vertices: int, k: int) -> DofLayout:
    if k < 2:
        raise UnsupportedOrder("the divergence-free pair needs k >= 2")
    if n_vertices < 3:
        raise ValueError("a polygon needs at least 3 vertices")
    return DofLayout(k, n_vertices)


def _solve(A: np.ndarray, B: np.ndarray, what: str) -> np.ndarray:
    """Dense LU solve with symmetric diagonal equilibration.

    Scaled monomials on elongated cells give mass matrices whose diagonal
    spans several orders of magnitude; scaling rows and columns by
    1/sqrt|A_ii| removes most of that before factorization.
    """
    diag = np.abs(np.diag(A))
    d = np.where(diag > 0, 1.0 / np.sqrt(np.where(diag > 0, diag, 1.0)), 1.0)
    As = A * d[:, None] * d[None, :]
    try:
        lu, piv = sla.lu_factor(As, check_finite=True)
    except (ValueError, sla.LinAlgError) as exc:
        raise SingularLocalSystem(f"{what}: {exc}") from exc
    if np.any(np.abs(np.diag(lu)) <= 1e-14 * np.abs(lu).max()):
        raise SingularLocalSystem(f"{what}: matrix is singular")
    cond = np.linalg.cond(As)
    if cond > COND_WARN:
        warnings.warn(f"{what}: condition number {cond:.2e}", RuntimeWarning, stacklevel=3)
    rhs = B * d[:, None] if B.ndim == 2 else B * d
    x = sla.lu_solve((lu, piv), rhs)
    return x * d[:, None] if x.ndim == 2 else x * d


@lru_cache(maxsize=None)
def helmholtz_decomposition(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Split every vector monomial of degree <= n as grad(s) + m_perp p.

    Works in reference coordinates xi = (x - x_E)/h_E.  Returns ``(S, P)`` with
    ``S`` of shape (2*dim_p(n), dim_p(n+1)) holding coefficients of s (the
    constant coefficient is zero) and ``P`` of shape (2*dim_p(n), dim_p(n-1))
    holding those of p, such that e_c m_a = grad_xi(s) + m_perp p.
    """
    dn, ds, dq = dim_p(n), dim_p(n + 1), dim_p(n - 1)
    cols = []
    Dx = _derivative_matrix(n + 1, 0)[:dn]
    Dy = _derivative_matrix(n + 1, 1)[:dn]
    for b in range(1, ds):
        cols.append(np.concatenate([Dx[:, b], Dy[:, b]]))
    if dq:
        perp = xperp_coefficients(n - 1)
        for g in range(dq):
            cols.append(np.concatenate([perp[g, 0, :dn], perp[g, 1, :dn]]))
    M = np.array(cols).T
    if M.shape[0] != M.shape[1]:
        raise SingularLocalSystem("gradient/x-perp spanning set has the wrong size")
    coef, _, rank, _ = np.linalg.lstsq(M, np.eye(2 * dn), rcond=None)
    if rank < M.shape[0]:
        raise SingularLocalSystem("gradient/x-perp spanning set is rank deficient")
    S = np.zeros((2 * dn, ds))
    S[:, 1:] = coef[: ds - 1].T
    P = coef[ds - 1 :].T.copy()
    S.setflags(write=False)
    P.setflags(write=False)
    return S, P


class ElementOperators:
    """Projector matrices of one element, computed from its DoFs.

    All matrices act on the local DoF vector (length ``layout.size``):

    ``div_coeffs``   (dim P_{k-1}, N)  exact div(v) coefficients
    ``div_moments``  (dim P_{k-1}, N)  int_E div(v) m_a  (the local b block)
    ``pi_nabla``     (2 dim P_k, N)
    ``pi0``          (2 dim P_k, N)
    ``pi0_grad(d)``  (4 dim P_d, N),  d in {k-1, k}
    ``dofs_of_polys`` D, (N, 2 dim P_k): DoFs of each vector monomial
    """

    def __init__(self, verts, k: int, quad_order: int | None = None):
        self.geometry: ElementGeometry = element_geometry(verts)
        self.k = k
        self.layout = dof_layout(self.geometry.n_vertices, k)
        g = self.geometry
        self.center = g.centroid
        self.h = g.diameter
        self.area = g.area
        self.quad_order = quad_order if quad_order is not None else 2 * k + 2
        self.basis = ScaledMonomialBasis(tuple(self.center), self.h, k)
        self.quad: Quadrature = cell_quadrature(g.vertices, max(self.quad_order, 2 * k + 2), self.center)
        self._boundary_setup()
        self._build()

    # -- geometry helpers -------------------------------------------------

    def basis_of(self, degree: int) -> ScaledMonomialBasis:
        return ScaledMonomialBasis(tuple(self.center), self.h, degree)

    def node_points(self) -> np.ndarray:
        """Coordinates of every boundary point DoF location, ordered like DoFs/2."""
        g, k = self.geometry, self.k
        ref, _ = gauss_lobatto_reference(k + 1)
        t = 0.5 * (ref + 1.0)
        pts = [g.vertices]
        for j in range(g.n_vertices):
            a, b = g.vertices[j], g.vertices[(j + 1) % g.n_vertices]
            pts.append(a + t[1:-1, None] * (b - a))
        return np.vstack(pts)

    def _boundary_setup(self) -> None:
        """Trace operator: v at boundary Gauss points as a linear map of the DoFs."""
        g, k, L = self.geometry, self.k, self.layout
        nq = k + 2
        ref_gl, _ = gauss_lobatto_reference(k + 1)
        pts, wts, nrm, rows = [], [], [], []
        for j in range(g.n_vertices):
            a, b = g.vertices[j], g.vertices[(j + 1) % g.n_vertices]
            q = edge_gauss(a, b, nq)
            s = 2.0 * np.linalg.norm(q.points - a, axis=1) / g.lengths[j] - 1.0
            lag = _lagrange_matrix(ref_gl, s)  # (nq, k+1)
            T = np.zeros((2, nq, L.size))
            for m in range(k + 1):
                for comp in range(2):
                    T[comp, :, L.node_dof(j, m, comp)] += lag[:, m]
            pts.append(q.points)
            wts.append(q.weights)
            nrm.append(np.repeat(g.normals[j][None, :], nq, axis=0))
            rows.append(T)
        self.bpoints = np.vstack(pts)
        self.bweights = np.concatenate(wts)
        self.bnormals = np.vstack(nrm)
        self.trace = np.concatenate(rows, axis=1)  # (2, nb, N)
        # (v . n)(x_q) as rows
        self.flux_rows = self.bnormals[:, 0:1] * self.trace[0] + self.bnormals[:, 1:2] * self.trace[1]

    # -- core construction ------------------------------------------------

    def _build(self) -> None:
        k, L, h = self.k, self.layout, self.h
        N = L.size
        dk, dk1 = dim_p(k), dim_p(k - 1)
        big = self.basis_of(k + 1)
        Vq = big.eval(self.quad.points)
        self.mass_big = monomial_mass_matrix(big, self.quad)  # P_{k+1} x P_{k+1}
        self.H = {n: self.mass_big[: dim_p(n), : dim_p(n)] for n in range(-1, k + 2)}

        # divergence: moments then coefficients
        Mb = big.eval(self.bpoints)
        bnd_s = (Mb * self.bweights[:, None]).T @ self.flux_rows  # int_dE m_b v.n, b in P_{k+1}
        div_mom = np.zeros((dk1, N))
        div_mom[0] = bnd_s[0]
        if dk1 > 1:
            div_mom[1:, L.div_slice] = (self.area / h) * np.eye(dk1 - 1)
        self.div_moments = div_mom
        self.div_coeffs = _solve(self.H[k - 1], div_mom, "divergence mass matrix")

        # int_E v . grad(m_b) for b in P_{k+1}
        grad_mom = -self.mass_big[:, :dk1] @ self.div_coeffs + bnd_s
        grad_mom[0] = 0.0
        self._grad_mom = grad_mom

        # int_E v . m_perp m_g for |g| <= k-3 straight from DoFs
        perp_low = np.zeros((dim_p(k - 3), N))
        if L.n_perp:
            perp_low[:, L.perp_slice] = self.area * np.eye(L.n_perp)
        self._perp_low = perp_low

        moments_low = self._vector_moments(k - 2, perp_low)
        self.pi_nabla = self._compute_pi_nabla(moments_low)

        # enhancement: higher x-perp moments through pi_nabla
        perp_all = np.zeros((dk1, N))
        perp_all[: dim_p(k - 3)] = perp_low
        if dk1 > dim_p(k - 3):
            pc = xperp_coefficients(k - 1)  # (dk1, 2, dk) coefficient vectors
            Hk = self.H[k]
            for gi in range(dim_p(k - 3), dk1):
                w = np.concatenate([Hk @ pc[gi, 0], Hk @ pc[gi, 1]])
                perp_all[gi] = w @ self.pi_nabla
        self.moments = self._vector_moments(k, perp_all)  # int_E v_c m_a, (2 dk, N)
        Hvec = sla.block_diag(self.H[k], self.H[k])
        self.pi0 = _solve(Hvec, self.moments, "L2 projector mass matrix")
        self._pi0_grad = {}

    def _vector_moments(self, n: int, perp: np.ndarray) -> np.ndarray:
        """Rows int_E v_c m_a for |a| <= n, c in {x, y}; shape (2 dim_p(n), N)."""
        S, P = helmholtz_decomposition(n)
        ds, dq = dim_p(n + 1), dim_p(n - 1)
        out = self.h * (S @ self._grad_mom[:ds])
        if dq:
            out = out + P @ perp[:dq]
        return out

    def _compute_pi_nabla(self, moments_low: np.ndarray) -> np.ndarray:
        k, h, L = self.k, self.h, self.layout
        dk = dim_p(k)
        Dx = _derivative_matrix(k, 0) / h
        Dy = _derivative_matrix(k, 1) / h
        Hk = self.H[k]
        Ks = Dx.T @ Hk @ Dx + Dy.T @ Hk @ Dy  # int grad m_a . grad m_b
        G = sla.block_diag(Ks, Ks)
        lap = (Dx @ Dx + Dy @ Dy)[: dim_p(k - 2)]  # Laplacian coefficients in P_{k-2}
        basis = self.basis_of(k)
        gx = basis.eval(self.bpoints, 1, 0)
        gy = basis.eval(self.bpoints, 0, 1)
        dn = (gx * self.bnormals[:, 0:1] + gy * self.bnormals[:, 1:2]) * self.bweights[:, None]
        dkm2 = dim_p(k - 2)
        B = np.zeros((2 * dk, L.size))
        for c in range(2):
            blk = slice(c * dk, (c + 1) * dk)
            B[blk] = dn.T @ self.trace[c]
            B[blk] -= lap.T @ moments_low[c * dkm2 : (c + 1) * dkm2]
        # P_0 anchor: vertex average
        V = basis.eval(self.geometry.vertices)
        nv = self.geometry.n_vertices
        for c in range(2):
            r = c * dk
            G[r] = 0.0
            G[r, c * dk : (c + 1) * dk] = V.mean(axis=0)
            B[r] = 0.0
            B[r, [L.vertex_dof(i, c) for i in range(nv)]] = 1.0 / nv
        return _solve(G, B, "H1 projector")

    def pi0_grad(self, degree: int) -> np.ndarray:
        """L2 projection of grad(v) onto tensor P_degree, shape (4 dim_p(degree), N)."""
        if degree in self._pi0_grad:
            return self._pi0_grad[degree]
        if degree > self.k or degree < 0:
            raise ValueError("gradient projection degree must be in [0, k]")
        k, h = self.k, self.h
        dd, dk = dim_p(degree), dim_p(k)
        basis = self.basis_of(degree)
        Mb = basis.eval(self.bpoints) * self.bweights[:, None]
        Dx = _derivative_matrix(degree, 0) / h
        Dy = _derivative_matrix(degree, 1) / h
        N = self.layout.size
        rhs = np.zeros((4 * dd, N))
        for a in range(2):
            mom_a = self.moments[a * dk : a * dk + dd]  # int v_a m_b, |b| <= degree
            for b, D in enumerate((Dx, Dy)):
                blk = slice((2 * a + b) * dd, (2 * a + b + 1) * dd)
                rhs[blk] = -D.T @ mom_a + (Mb * self.bnormals[:, b : b + 1]).T @ self.trace[a]
        Hd = self.H[degree]
        out = _solve(sla.block_diag(Hd, Hd, Hd, Hd), rhs, "gradient projector")
        self._pi0_grad[degree] = out
        return out

    def sym_grad(self, degree: int) -> np.ndarray:
        G = self.pi0_grad(degree)
        d = dim_p(degree)
        b = [G[i * d : (i + 1) * d] for i in range(4)]
        off = 0.5 * (b[1] + b[2])
        return np.vstack([b[0], off, off, b[3]])

    # -- DoF maps ---------------------------------------------------------

    @cached_property
    def dofs_of_polys(self) -> np.ndarray:
        """DoFs of the vector monomials e_c m_a, |a| <= k; shape (N, 2 dim_p(k))."""
        k = self.k
        dk = dim_p(k)
        cols = np.zeros((self.layout.size, 2 * dk))
        for c in range(2):
            for a in range(dk):
                coeffs = np.zeros((2, dk))
                coeffs[c, a] = 1.0
                cols[:, c * dk + a] = self.dofs_of_poly(coeffs)
        return cols

    def dofs_of_poly(self, coeffs: np.ndarray) -> np.ndarray:
        """DoFs of a vector polynomial given as (2, dim_p(k)) coefficients in this basis."""
        basis = self.basis_of(self.k)
        poly = Poly2(basis, np.asarray(coeffs, dtype=float))

        def value(x):
            return poly(x)

        def div(x):
            return basis.eval(x, 1, 0) @ poly.coeffs[0] + basis.eval(x, 0, 1) @ poly.coeffs[1]

        return self.interpolate(value, div)

    def interpolate(
        self,
        value: Callable[[np.ndarray], np.ndarray],
        div: Callable[[np.ndarray], np.ndarray],
        quad: Quadrature | None = None,
    ) -> np.ndarray:
        """DoFs of a smooth field from point values and its divergence."""
        L, k = self.layout, self.k
        dofs = np.zeros(L.size)
        pts = self.node_points()
        vals = np.asarray(value(pts), dtype=float).reshape(-1, 2)
        dofs[: L.n_boundary] = vals.ravel()
        if L.n_perp or L.n_div:
            quad = quad or self.quad
            xi = self.basis.scaled(quad.points)
            if L.n_perp:
                v = np.asarray(value(quad.points), dtype=float).reshape(-1, 2)
                vp = v[:, 0] * xi[:, 1] - v[:, 1] * xi[:, 0]  # v . m_perp
                mk = self.basis_of(k - 3).eval(quad.points)
                dofs[L.perp_slice] = (mk * (quad.weights * vp)[:, None]).sum(0) / self.area
            if L.n_div:
                d = np.asarray(div(quad.points), dtype=float).ravel()
                mk = self.basis_of(k - 1).eval(quad.points)[:, 1:]
                dofs[L.div_slice] = (mk * (quad.weights * d)[:, None]).sum(0) * self.h / self.area
        return dofs

    @cached_property
    def stabilization(self) -> np.ndarray:
        """dofi-dofi form on the complement of pi0: (I - D pi0)^T (I - D pi0)."""
        R = np.eye(self.layout.size) - self.dofs_of_polys @ self.pi0
        S = R.T @ R
        return 0.5 * (S + S.T)

    # -- convenience ------------------------------------------------------

    def as_poly(self, coeffs_row_stack: np.ndarray, degree: int | None = None) -> Poly2:
        degree = self.k if degree is None else degree
        d = dim_p(degree)
        comps = len(coeffs_row_stack) // d
        return Poly2(self.basis_of(degree), np.asarray(coeffs_row_stack).reshape(comps, d))


def _lagrange_matrix(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Values of the Lagrange basis on ``nodes`` at ``x``, shape (len(x), len(nodes))."""
    n = len(nodes)
    out = np.ones((len(x), n))
    for i in range(n):
        for j in range(n):
            if i != j:
                out[:, i] *= (x - nodes[j]) / (nodes[i] - nodes[j])
    return out


def element_operators(verts, k: int) -> ElementOperators:
    return ElementOperators(verts, k)


def compute_div_coeffs(ops: ElementOperators) -> np.ndarray:
    return ops.div_coeffs


def compute_pi_nabla(ops: ElementOperators) -> np.ndarray:
    return ops.pi_nabla


def compute_pi0(ops: ElementOperators) -> np.ndarray:
    return ops.pi0


def compute_pi0_grad(ops: ElementOperators, degree: int) -> np.ndarray:
    return ops.pi0_grad(degree)


def exponents(n: int) -> np.ndarray:
    return monomial_exponents(n)
