"""Scaled monomial bases, polynomial calculus and quadrature on polygons/edges.

Monomials are ordered graded-lexicographically::

    (0,0), (1,0), (0,1), (2,0), (1,1), (0,2), (3,0), ...

and m_a(x) = ((x - x_E) / h_E) ** a.  Every projector matrix in the package
depends on this ordering, so it must not change.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

from .errors import TriangulationFailure, UnsupportedOrder

MAX_EDGE_POINTS = 20


def dim_p(n: int) -> int:
    """Dimension of P_n in two variables (0 for n < 0)."""
    if n < 0:
        return 0
    return (n + 1) * (n + 2) // 2


@lru_cache(maxsize=None)
def monomial_exponents(n: int) -> np.ndarray:
    """Exponent table of shape (dim_p(n), 2) in graded-lex order."""
    exps = [(d - j, j) for d in range(n + 1) for j in range(d + 1)]
    out = np.array(exps, dtype=int).reshape(-1, 2)
    out.setflags(write=False)
    return out


def monomial_index(a: int, b: int) -> int:
    d = a + b
    return dim_p(d - 1) + b


@dataclass(frozen=True)
class ScaledMonomialBasis:
    center: tuple[float, float]
    diameter: float
    degree: int

    @property
    def size(self) -> int:
        return dim_p(self.degree)

    def scaled(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        return (points - np.asarray(self.center)) / self.diameter

    def eval(self, points: np.ndarray, dx: int = 0, dy: int = 0) -> np.ndarray:
        """Values of d^(dx+dy) m_a / dx^dx dy^dy, shape (npts, size)."""
        xi = self.scaled(points)
        exps = monomial_exponents(self.degree)
        out = np.zeros((xi.shape[0], exps.shape[0]))
        scale = self.diameter ** -(dx + dy)
        for j, (a, b) in enumerate(exps):
            if a < dx or b < dy:
                continue
            c = factorial(a) // factorial(a - dx) * factorial(b) // factorial(b - dy)
            out[:, j] = c * scale * xi[:, 0] ** (a - dx) * xi[:, 1] ** (b - dy)
        return out


def basis_eval(basis: ScaledMonomialBasis, points: np.ndarray, derivative_order: int = 0):
    """Table {(dx, dy): values} for all partial derivatives up to the given order."""
    if derivative_order < 0:
        raise ValueError("derivative_order must be non-negative")
    return {
        (dx, order - dx): basis.eval(points, dx, order - dx)
        for order in range(derivative_order + 1)
        for dx in range(order, -1, -1)
    }


# -- coefficient calculus --------------------------------------------------


@lru_cache(maxsize=None)
def _derivative_matrix(n: int, direction: int) -> np.ndarray:
    """Map coefficients of p in P_n (reference variable xi) to those of d p / d xi_dir.

    Output lives in P_n as well (top degree rows are zero) so products can be
    chained without reindexing.
    """
    exps = monomial_exponents(n)
    out = np.zeros((exps.shape[0], exps.shape[0]))
    for j, (a, b) in enumerate(exps):
        if direction == 0 and a > 0:
            out[monomial_index(a - 1, b), j] = a
        elif direction == 1 and b > 0:
            out[monomial_index(a, b - 1), j] = b
    out.setflags(write=False)
    return out


def derivative_matrix(n: int, direction: int, diameter: float = 1.0) -> np.ndarray:
    """Physical-coordinate derivative on P_n coefficients (square, P_n -> P_n)."""
    return _derivative_matrix(n, direction) / diameter


@lru_cache(maxsize=None)
def _xi_multiply_matrix(n: int, direction: int) -> np.ndarray:
    """Coefficient map P_n -> P_{n+1} of multiplication by xi_dir."""
    src = monomial_exponents(n)
    out = np.zeros((dim_p(n + 1), src.shape[0]))
    for j, (a, b) in enumerate(src):
        if direction == 0:
            out[monomial_index(a + 1, b), j] = 1.0
        else:
            out[monomial_index(a, b + 1), j] = 1.0
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Poly2:
    """Polynomial with 1 (scalar), 2 (vector) or 4 (2x2 tensor) components.

    ``coeffs`` has shape (components, basis.size).  Tensor components are
    ordered (0,0), (0,1), (1,0), (1,1) with entry (a, b) = d v_a / d x_b for
    gradients.
    """

    basis: ScaledMonomialBasis
    coeffs: np.ndarray

    @property
    def components(self) -> int:
        return self.coeffs.shape[0]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        vals = self.basis.eval(points) @ self.coeffs.T
        return vals[:, 0] if self.components == 1 else vals

    def with_degree(self, degree: int) -> "Poly2":
        basis = ScaledMonomialBasis(self.basis.center, self.basis.diameter, degree)
        n = min(degree, self.basis.degree)
        c = np.zeros((self.components, basis.size))
        c[:, : dim_p(n)] = self.coeffs[:, : dim_p(n)]
        return Poly2(basis, c)

    def is_zero(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.coeffs) <= tol))


def _d(p: Poly2, direction: int) -> np.ndarray:
    D = derivative_matrix(p.basis.degree, direction, p.basis.diameter)
    return p.coeffs @ D.T


def poly_grad(p: Poly2) -> Poly2:
    """Gradient of a scalar polynomial (vector, same nominal degree)."""
    if p.components != 1:
        raise ValueError("poly_grad expects a scalar polynomial")
    return Poly2(p.basis, np.vstack([_d(p, 0), _d(p, 1)]))


def poly_div(v: Poly2) -> Poly2:
    if v.components != 2:
        raise ValueError("poly_div expects a vector polynomial")
    dx, dy = _d(v, 0), _d(v, 1)
    return Poly2(v.basis, (dx[0] + dy[1])[None, :])


def poly_curl_scalar(v: Poly2) -> Poly2:
    """curl v = d v_2 / dx - d v_1 / dy."""
    if v.components != 2:
        raise ValueError("poly_curl_scalar expects a vector polynomial")
    dx, dy = _d(v, 0), _d(v, 1)
    return Poly2(v.basis, (dx[1] - dy[0])[None, :])


def xperp_coefficients(n: int) -> np.ndarray:
    """Coefficients of m_perp * m_a, |a| <= n, as vectors in [P_{n+1}]^2.

    Shape (dim_p(n), 2, dim_p(n+1)); m_perp = (xi_2, -xi_1).
    """
    out = np.zeros((dim_p(n), 2, dim_p(n + 1)))
    mx = _xi_multiply_matrix(n, 0)
    my = _xi_multiply_matrix(n, 1)
    for j in range(dim_p(n)):
        out[j, 0] = my[:, j]
        out[j, 1] = -mx[:, j]
    return out


def xperp_basis(center, diameter: float, n: int) -> list[Poly2]:
    """The fields m_perp m_a, |a| <= n, in the vector scaled basis of degree n+1."""
    basis = ScaledMonomialBasis(tuple(center), float(diameter), n + 1)
    return [Poly2(basis, c) for c in xperp_coefficients(n)]


# -- quadrature ------------------------------------------------------------


@dataclass(frozen=True)
class Quadrature:
    points: np.ndarray
    weights: np.ndarray

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))


CellQuadrature = Quadrature
EdgeQuadrature = Quadrature


@lru_cache(maxsize=None)
def _triangle_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the reference triangle (0,0),(1,0),(0,1)."""
    n = max(1, -(-(order + 2) // 2))
    g, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (g + 1.0)
    wt = 0.5 * w
    u, v = np.meshgrid(t, t, indexing="ij")
    wu, wv = np.meshgrid(wt, wt, indexing="ij")
    # Duffy map (u, v) -> (u, v (1 - u)), Jacobian (1 - u)
    x = u.ravel()
    y = (v * (1.0 - u)).ravel()
    weights = (wu * wv * (1.0 - u)).ravel()
    return np.column_stack([x, y]), weights


def triangle_quadrature(tri: np.ndarray, order: int) -> Quadrature:
    ref_pts, ref_w = _triangle_rule(order)
    a, b, c = np.asarray(tri, dtype=float)
    J = np.column_stack([b - a, c - a])
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    pts = a + ref_pts @ J.T
    return Quadrature(pts, ref_w * abs(det))


def polygon_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_centroid(verts: np.ndarray) -> np.ndarray:
    x, y = verts[:, 0], verts[:, 1]
    cross = x * np.roll(y, -1) - np.roll(x, -1) * y
    area = 0.5 * cross.sum()
    cx = np.sum((x + np.roll(x, -1)) * cross) / (6.0 * area)
    cy = np.sum((y + np.roll(y, -1)) * cross) / (6.0 * area)
    return np.array([cx, cy])


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def ear_clip(verts: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple CCW polygon by ear clipping."""
    idx = list(range(len(verts)))
    tris: list[tuple[int, int, int]] = []
    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10 * len(verts) ** 2:
            raise TriangulationFailure("ear clipping did not terminate")
        m = len(idx)
        for i in range(m):
            i0, i1, i2 = idx[i - 1], idx[i], idx[(i + 1) % m]
            a, b, c = verts[i0], verts[i1], verts[i2]
            if _cross(a, b, c) <= 0.0:
                continue
            inside = False
            for j in idx:
                if j in (i0, i1, i2):
                    continue
                p = verts[j]
                if _cross(a, b, p) >= 0 and _cross(b, c, p) >= 0 and _cross(c, a, p) >= 0:
                    inside = True
                    break
            if not inside:
                tris.append((i0, i1, i2))
                del idx[i]
                break
        else:
            raise TriangulationFailure("no ear found; polygon is not simple")
    tris.append((idx[0], idx[1], idx[2]))
    return tris


def polygon_triangles(verts: np.ndarray, center: np.ndarray | None = None) -> list[np.ndarray]:
    """Fan triangulation from ``center`` when valid, ear clipping otherwise."""
    verts = np.asarray(verts, dtype=float)
    if center is None:
        center = polygon_centroid(verts)
    n = len(verts)
    tris = [np.array([center, verts[i], verts[(i + 1) % n]]) for i in range(n)]
    scale = max(np.ptp(verts[:, 0]), np.ptp(verts[:, 1])) ** 2
    if all(_cross(*t) > 1e-12 * scale for t in tris):
        return tris
    return [verts[list(t)] for t in ear_clip(verts)]


def cell_quadrature(verts: np.ndarray, order: int, center: np.ndarray | None = None) -> Quadrature:
    """Quadrature on a polygon exact for polynomials of degree ``order``."""
    parts = [triangle_quadrature(t, order) for t in polygon_triangles(verts, center)]
    return Quadrature(
        np.vstack([q.points for q in parts]), np.concatenate([q.weights for q in parts])
    )


@lru_cache(maxsize=None)
def _gauss_reference(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 1 or n > MAX_EDGE_POINTS:
        raise UnsupportedOrder(f"Gauss rule with {n} points is not supported")
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=None)
def gauss_lobatto_reference(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Lobatto nodes/weights on [-1, 1] with ``n`` points (endpoints included)."""
    if n < 2 or n > MAX_EDGE_POINTS:
        raise UnsupportedOrder(f"Gauss-Lobatto rule with {n} points is not supported")
    leg = np.polynomial.legendre
    cn = np.zeros(n)
    cn[-1] = 1.0  # P_{n-1}
    dcn = leg.legder(cn)
    interior = np.sort(leg.legroots(dcn).real) if n > 2 else np.array([])
    # polish interior roots of P'_{n-1} with Newton steps
    d2cn = leg.legder(dcn)
    for _ in range(3):
        if interior.size:
            interior = interior - leg.legval(interior, dcn) / leg.legval(interior, d2cn)
    nodes = np.concatenate([[-1.0], interior, [1.0]])
    nodes = 0.5 * (nodes - nodes[::-1])  # exact symmetry
    weights = 2.0 / (n * (n - 1) * leg.legval(nodes, cn) ** 2)
    return nodes, weights


def _map_to_edge(a, b, ref_nodes, ref_weights) -> Quadrature:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = 0.5 * (ref_nodes + 1.0)
    length = float(np.hypot(*(b - a)))
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    return Quadrature(pts, 0.5 * length * ref_weights)


def edge_gauss(a, b, n_points: int) -> Quadrature:
    g, w = _gauss_reference(n_points)
    return _map_to_edge(a, b, g, w)


def edge_gauss_lobatto(a, b, n_points: int) -> Quadrature:
    g, w = gauss_lobatto_reference(n_points)
    return _map_to_edge(a, b, g, w)


def monomial_mass_matrix(basis: ScaledMonomialBasis, quad: Quadrature) -> np.ndarray:
    """H_ab = int_E m_a m_b, symmetrized."""
    V = basis.eval(quad.points)
    H = (V * quad.weights[:, None]).T @ V
    return 0.5 * (H + H.T)

