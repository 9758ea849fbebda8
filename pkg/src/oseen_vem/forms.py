"""Element and edge local forms: A_h, c_h^skew, b, F_h and the three-level CIP form."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .element import ElementOperators
from .polyquad import Quadrature, dim_p, edge_gauss

Evaluator = Callable[[np.ndarray], np.ndarray]


class AdvectionField:
    """Advective field with analytic first and second derivatives.

    ``jacobian(x)[:, b, c] = d beta_b / d x_c`` and
    ``hessian(x)[:, b, c, d] = d^2 beta_b / d x_c d x_d``.
    """

    def __init__(self, value: Evaluator, jacobian: Evaluator, hessian: Evaluator):
        self.value = value
        self.jacobian = jacobian
        self.hessian = hessian

    def __call__(self, x):
        return self.value(x)

    @classmethod
    def constant(cls, b) -> "AdvectionField":
        b = np.asarray(b, dtype=float)
        return cls(
            lambda x: np.broadcast_to(b, (len(x), 2)).copy(),
            lambda x: np.zeros((len(x), 2, 2)),
            lambda x: np.zeros((len(x), 2, 2, 2)),
        )


@dataclass(frozen=True)
class PhysicalParameters:
    nu: float
    sigma: float
    beta: AdvectionField = field(default_factory=lambda: AdvectionField.constant((0.0, 0.0)))
    f: Evaluator | None = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def check_beta_divergence_free(self, points: np.ndarray, tol: float = 1e-10) -> bool:
        J = self.beta.jacobian(points)
        return bool(np.all(np.abs(J[:, 0, 0] + J[:, 1, 1]) <= tol))


@dataclass(frozen=True)
class CipParameters:
    delta1: float = 0.0
    delta2: float = 0.0
    delta3: float = 0.0

    def __post_init__(self):
        if min(self.delta1, self.delta2, self.delta3) < 0:
            raise ValueError("CIP parameters must be nonnegative")

    @property
    def delta(self) -> float:
        return max(self.delta1, self.delta2, self.delta3)

    @property
    def triple(self) -> tuple[float, float, float]:
        return (self.delta1, self.delta2, self.delta3)

    def scaled(self, factor: float) -> "CipParameters":
        return CipParameters(*(factor * d for d in self.triple))


def _tensor_blocks(M: np.ndarray, d: int) -> list[np.ndarray]:
    return [M[i * d : (i + 1) * d] for i in range(M.shape[0] // d)]


def local_A(ops: ElementOperators, nu: float, sigma: float) -> np.ndarray:
    """nu (P eps u, P eps v) + sigma (P0 u, P0 v) + (nu + sigma h^2) S."""
    k = ops.k
    dkm1, dk = dim_p(k - 1), dim_p(k)
    eps = _tensor_blocks(ops.sym_grad(k - 1), dkm1)
    Hm = ops.H[k - 1]
    A = nu * sum(e.T @ Hm @ e for e in eps)
    P = _tensor_blocks(ops.pi0, dk)
    Hk = ops.H[k]
    A = A + sigma * sum(p.T @ Hk @ p for p in P)
    A = A + (nu + sigma * ops.h**2) * ops.stabilization
    return 0.5 * (A + A.T)


def convection_matrix(ops: ElementOperators, beta: AdvectionField, quad: Quadrature | None = None) -> np.ndarray:
    """C[i, j] = c_h(phi_j, phi_i) = int ((P0 grad phi_j) beta) . P0 phi_i."""
    quad = quad or ops.quad
    k = ops.k
    dk = dim_p(k)
    V = ops.basis_of(k).eval(quad.points)  # (nq, dk)
    G = _tensor_blocks(ops.pi0_grad(k), dk)  # 4 x (dk, N)
    P = _tensor_blocks(ops.pi0, dk)  # 2 x (dk, N)
    b = beta.value(quad.points)
    w = quad.weights
    C = np.zeros((ops.layout.size, ops.layout.size))
    for a in range(2):
        grad_a = sum((V @ G[2 * a + c]) * b[:, c : c + 1] for c in range(2))  # ((grad u) beta)_a
        val_a = V @ P[a]
        C += (val_a * w[:, None]).T @ grad_a
    return C


def local_c_skew(ops: ElementOperators, beta: AdvectionField, quad: Quadrature | None = None) -> np.ndarray:
    C = convection_matrix(ops, beta, quad)
    return 0.5 * (C - C.T)


def b_velocity_pressure(ops: ElementOperators) -> np.ndarray:
    """B[a, j] = int_E m_a div(phi_j), exact."""
    return ops.div_moments


def local_rhs(ops: ElementOperators, f: Evaluator | None, quad: Quadrature | None = None) -> np.ndarray:
    """F[i] = int_E f . P0 phi_i."""
    if f is None:
        return np.zeros(ops.layout.size)
    quad = quad or ops.quad
    dk = dim_p(ops.k)
    V = ops.basis_of(ops.k).eval(quad.points)
    fv = np.asarray(f(quad.points), dtype=float).reshape(-1, 2)
    mom = np.concatenate([V.T @ (quad.weights * fv[:, 0]), V.T @ (quad.weights * fv[:, 1])])
    return ops.pi0.T @ mom


def cip_element_stab(ops: ElementOperators, cip: CipParameters) -> np.ndarray:
    return cip.delta * ops.h * ops.stabilization


# -- CIP edge terms --------------------------------------------------------


def _derivs(ops: ElementOperators, points: np.ndarray) -> dict[tuple[int, int], np.ndarray]:
    basis = ops.basis_of(ops.k)
    return {
        (i, j): basis.eval(points, i, j) for n in range(4) for i in range(n + 1) for j in range(n + 1) if i + j == n
    }


def _dd(tab, *dirs) -> np.ndarray:
    """Mixed derivative table for a sequence of directions (0 = x, 1 = y)."""
    return tab[(dirs.count(0), dirs.count(1))]


def cip_quantities(ops: ElementOperators, points: np.ndarray, tangent: np.ndarray, beta: AdvectionField):
    """Linear maps DoFs -> jump quantities of P0 v at ``points``.

    Returns (level1, level2, level3) with shapes (n, N), (n, N), (n, 2, N):
    (grad p) beta . t, curl((grad p) beta), grad curl((grad p) beta).
    """
    tab = _derivs(ops, points)
    bv = beta.value(points)
    J = beta.jacobian(points)  # [:, b, c] = d_c beta_b
    Hb = beta.hessian(points)  # [:, b, c, d]
    n = len(points)

    def g(dirs_extra):
        """Row map for d^{extra} (sum_b beta_b d_b p) acting on a scalar component."""
        m = len(dirs_extra)
        out = 0.0
        if m == 0:
            return sum(bv[:, b : b + 1] * _dd(tab, b) for b in range(2))
        if m == 1:
            (c,) = dirs_extra
            return sum(bv[:, b : b + 1] * _dd(tab, c, b) + J[:, b, c][:, None] * _dd(tab, b) for b in range(2))
        c, d = dirs_extra
        for b in range(2):
            out = out + bv[:, b : b + 1] * _dd(tab, d, c, b)
            out = out + J[:, b, d][:, None] * _dd(tab, c, b)
            out = out + J[:, b, c][:, None] * _dd(tab, d, b)
            out = out + Hb[:, b, c, d][:, None] * _dd(tab, b)
        return out

    dk = dim_p(ops.k)
    P = _tensor_blocks(ops.pi0, dk)

    def vec(row_x, row_y):
        return row_x @ P[0] + row_y @ P[1]

    g0 = g(())
    lvl1 = vec(tangent[0] * g0, tangent[1] * g0)
    # curl g = d_x g_2 - d_y g_1
    lvl2 = vec(-g((1,)), g((0,)))
    lvl3 = np.empty((n, 2, ops.layout.size))
    for d in range(2):
        lvl3[:, d] = vec(-g((1, d)), g((0, d)))
    return lvl1, lvl2, lvl3


def cip_edge_blocks(
    a: np.ndarray,
    b: np.ndarray,
    ops_left: ElementOperators,
    ops_right: ElementOperators,
    beta: AdvectionField,
    cip: CipParameters,
    n_points: int | None = None,
) -> np.ndarray:
    """CIP block on an internal edge a->b over [left DoFs, right DoFs]."""
    NL, NR = ops_left.layout.size, ops_right.layout.size
    out = np.zeros((NL + NR, NL + NR))
    if cip.delta == 0.0:
        return out
    k = ops_left.k
    quad = edge_gauss(a, b, n_points or k + 3)
    t = (np.asarray(b, float) - np.asarray(a, float)) / np.linalg.norm(np.asarray(b, float) - np.asarray(a, float))
    qL = cip_quantities(ops_left, quad.points, t, beta)
    qR = cip_quantities(ops_right, quad.points, t, beta)
    hL, hR = ops_left.h, ops_right.h
    weights = (
        cip.delta1 * 0.5 * (hL**2 + hR**2),
        cip.delta2 * 0.5 * (hL**4 + hR**4),
        cip.delta3 * 0.5 * (hL**6 + hR**6),
    )
    w = quad.weights
    for level, wt in enumerate(weights):
        if wt == 0.0:
            continue
        jl, jr = qL[level], qR[level]
        if level < 2:
            Jmp = np.concatenate([jl, -jr], axis=1)
            out += wt * (Jmp * w[:, None]).T @ Jmp
        else:
            for d in range(2):
                Jmp = np.concatenate([jl[:, d], -jr[:, d]], axis=1)
                out += wt * (Jmp * w[:, None]).T @ Jmp
    return 0.5 * (out + out.T)


def jump(values_left: np.ndarray, values_right: np.ndarray | None = None) -> np.ndarray:
    """Jump across an edge; on boundary edges the trace itself."""
    if values_right is None:
        return np.asarray(values_left)
    return np.asarray(values_left) - np.asarray(values_right)
