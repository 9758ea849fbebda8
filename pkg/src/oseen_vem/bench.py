"""Built-in Oseen test problems, error norms and the numerical experiments.

Forcings follow the strong form

    -nu div(eps(u)) + (grad u) beta + sigma u - grad p = f,

so that the discrete problem K_h(u_h, v_h) + b(v_h, p_h) = F_h(v_h) with
b(v, q) = int q div(v) is consistent with it.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import MissingExactSolution, UnknownProblem
from .export import write_csv, write_vtk
from .forms import AdvectionField, CipParameters, PhysicalParameters
from .mesh import PolygonalMesh, generate_square_grid, generate_voronoi, regular_polygon
from .polyquad import cell_quadrature, dim_p
from .system import BoundaryConditions, DiscreteSolution, assemble, divergence_norm, solve

log = logging.getLogger(__name__)

PI = math.pi
EXP_FLOOR = -500.0

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ExactSolution:
    u: Evaluator
    grad_u: Evaluator  # (n, 2, 2), [:, a, b] = d u_a / d x_b
    p: Evaluator

    def div(self, x: np.ndarray) -> np.ndarray:
        g = self.grad_u(x)
        return g[:, 0, 0] + g[:, 1, 1]


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    params: PhysicalParameters
    cip: CipParameters
    bc: Callable[[PolygonalMesh], BoundaryConditions]
    exact: ExactSolution | None = None
    description: str = ""
    # Laplacian of u, used only by the strong-form residual check
    lap_u: Evaluator | None = None
    grad_p: Evaluator | None = None

    def with_cip(self, cip: CipParameters) -> "ProblemSpec":
        return replace(self, cip=cip)

    def with_params(self, **kw) -> "ProblemSpec":
        return replace(self, params=replace(self.params, **kw))


def _all_dirichlet(g: Evaluator) -> Callable[[PolygonalMesh], BoundaryConditions]:
    return lambda mesh: BoundaryConditions.all_dirichlet(mesh.labels(), g)


def _stack(*cols) -> np.ndarray:
    return np.column_stack(cols)


# -- advective fields ------------------------------------------------------


def beta_boundary_layer() -> AdvectionField:
    def value(x):
        return _stack(x[:, 1] ** 2, x[:, 0] ** 2)

    def jac(x):
        J = np.zeros((len(x), 2, 2))
        J[:, 0, 1] = 2 * x[:, 1]
        J[:, 1, 0] = 2 * x[:, 0]
        return J

    def hess(x):
        H = np.zeros((len(x), 2, 2, 2))
        H[:, 0, 1, 1] = 2.0
        H[:, 1, 0, 0] = 2.0
        return H

    return AdvectionField(value, jac, hess)


def beta_trig() -> AdvectionField:
    def parts(x):
        a, b = 2 * PI * x[:, 0], 2 * PI * x[:, 1]
        return np.sin(a), np.cos(a), np.sin(b), np.cos(b)

    def value(x):
        sx, cx, sy, cy = parts(x)
        return _stack(sx * sy, cx * cy)

    def jac(x):
        sx, cx, sy, cy = parts(x)
        w = 2 * PI
        J = np.empty((len(x), 2, 2))
        J[:, 0, 0] = w * cx * sy
        J[:, 0, 1] = w * sx * cy
        J[:, 1, 0] = -w * sx * cy
        J[:, 1, 1] = -w * cx * sy
        return J

    def hess(x):
        sx, cx, sy, cy = parts(x)
        w2 = (2 * PI) ** 2
        H = np.empty((len(x), 2, 2, 2))
        H[:, 0, 0, 0] = -w2 * sx * sy
        H[:, 0, 0, 1] = H[:, 0, 1, 0] = w2 * cx * cy
        H[:, 0, 1, 1] = -w2 * sx * sy
        H[:, 1, 0, 0] = -w2 * cx * cy
        H[:, 1, 0, 1] = H[:, 1, 1, 0] = w2 * sx * sy
        H[:, 1, 1, 1] = -w2 * cx * cy
        return H

    return AdvectionField(value, jac, hess)


def _apply_beta(grad: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("nab,nb->na", grad, b)


# -- problems --------------------------------------------------------------


def _layer_terms(x: np.ndarray, nu: float):
    """u_2, u_2', u_2'' of the boundary-layer profile with underflow clamping."""
    arg = (x - 1.0) / nu
    E = np.where(arg < EXP_FLOOR, 0.0, np.exp(np.maximum(arg, EXP_FLOOR)))
    e1 = 0.0 if -1.0 / nu < EXP_FLOOR else math.exp(-1.0 / nu)
    den = 1.0 - e1
    return x - (E - e1) / den, 1.0 - E / (nu * den), -E / (nu**2 * den)


def boundary_layer(nu: float = 1e-9, sigma: float = 1.0, cip: CipParameters | None = None) -> ProblemSpec:
    beta = beta_boundary_layer()

    def u(x):
        u2, _, _ = _layer_terms(x[:, 0], nu)
        return _stack(np.zeros(len(x)), u2)

    def grad_u(x):
        _, d1, _ = _layer_terms(x[:, 0], nu)
        G = np.zeros((len(x), 2, 2))
        G[:, 1, 0] = d1
        return G

    def lap_u(x):
        _, _, d2 = _layer_terms(x[:, 0], nu)
        return _stack(np.zeros(len(x)), d2)

    def p(x):
        return 0.5 - x[:, 1]

    def grad_p(x):
        return _stack(np.zeros(len(x)), -np.ones(len(x)))

    def f(x):
        u2, d1, d2 = _layer_terms(x[:, 0], nu)
        f2 = -0.5 * nu * d2 + d1 * x[:, 1] ** 2 + sigma * u2 + 1.0
        return _stack(np.zeros(len(x)), f2)

    return ProblemSpec(
        "boundary_layer",
        PhysicalParameters(nu, sigma, beta, f),
        cip or CipParameters(0.1, 0.01, 0.01),
        _all_dirichlet(u),
        ExactSolution(u, grad_u, p),
        "boundary layer at x = 1, beta = (y^2, x^2)",
        lap_u,
        grad_p,
    )


def _trig_parts(x):
    a, b = 2 * PI * x[:, 0], 2 * PI * x[:, 1]
    return np.sin(a), np.cos(a), np.sin(b), np.cos(b)


def trig_convergence(nu: float = 1e-5, sigma: float = 1.0, cip: CipParameters | None = None) -> ProblemSpec:
    beta = beta_trig()

    # u = (-1/2 sin^2(pi x) cos(pi y) sin(pi y), 1/2 sin^2(pi y) cos(pi x) sin(pi x))
    #   = (-(1 - cos 2pi x) sin 2pi y / 8, (1 - cos 2pi y) sin 2pi x / 8)
    def u(x):
        sx, cx, sy, cy = _trig_parts(x)
        return _stack(-(1 - cx) * sy / 8, (1 - cy) * sx / 8)

    def grad_u(x):
        sx, cx, sy, cy = _trig_parts(x)
        G = np.empty((len(x), 2, 2))
        G[:, 0, 0] = -PI / 4 * sx * sy
        G[:, 0, 1] = -PI / 4 * (1 - cx) * cy
        G[:, 1, 0] = PI / 4 * (1 - cy) * cx
        G[:, 1, 1] = PI / 4 * sx * sy
        return G

    def lap_u(x):
        sx, cx, sy, cy = _trig_parts(x)
        return _stack(PI**2 / 2 * sy - PI**2 * cx * sy, -(PI**2) / 2 * sx + PI**2 * cy * sx)

    def p(x):
        return 0.25 * (np.cos(4 * PI * x[:, 0]) - np.sin(4 * PI * x[:, 1]))

    def grad_p(x):
        return _stack(-PI * np.sin(4 * PI * x[:, 0]), -PI * np.cos(4 * PI * x[:, 1]))

    def f(x):
        # div u = 0, hence div(eps(u)) = lap(u) / 2
        return -0.5 * nu * lap_u(x) + _apply_beta(grad_u(x), beta.value(x)) + sigma * u(x) - grad_p(x)

    return ProblemSpec(
        "trig_convergence",
        PhysicalParameters(nu, sigma, beta, f),
        cip or CipParameters(0.1, 0.01, 0.01),
        _all_dirichlet(u),
        ExactSolution(u, grad_u, p),
        "smooth divergence-free solution for convergence rates",
        lap_u,
        grad_p,
    )


def pressure_robust(nu: float = 1e-9, sigma: float = 1.0, cip: CipParameters | None = None) -> ProblemSpec:
    """u = 0, p = 3 cos x - 3 cos y; physical parameters of the boundary-layer test."""
    beta = beta_boundary_layer()

    def u(x):
        return np.zeros((len(x), 2))

    def grad_u(x):
        return np.zeros((len(x), 2, 2))

    def p(x):
        return 3 * np.cos(x[:, 0]) - 3 * np.cos(x[:, 1])

    def grad_p(x):
        return _stack(-3 * np.sin(x[:, 0]), 3 * np.sin(x[:, 1]))

    def f(x):
        return -grad_p(x)

    return ProblemSpec(
        "pressure_robust",
        PhysicalParameters(nu, sigma, beta, f),
        cip or CipParameters(0.1, 0.01, 0.01),
        _all_dirichlet(u),
        ExactSolution(u, grad_u, p),
        "zero velocity driven by a pure gradient force",
        u,
        grad_p,
    )


CHANNEL_DOMAIN = (0.0, 4.0, -0.5, 0.5)
PIPE_CENTERS = ((1.0, 0.0), (2.5, 0.0))
PIPE_RADIUS = 0.15
PIPE_SIDES = 16


def channel_inflow(x: np.ndarray) -> np.ndarray:
    y = x[:, 1]
    return _stack(-10.0 * (y - 0.5) * (y + 0.5), np.zeros(len(x)))


def channel(nu: float = 1e-5, sigma: float = 0.0, cip: CipParameters | None = None) -> ProblemSpec:
    def bc(mesh):
        dirichlet = {lab: channel_inflow if lab == "left" else _zero for lab in mesh.labels() if lab != "right"}
        return BoundaryConditions(dirichlet, frozenset({"right"}))

    return ProblemSpec(
        "channel",
        PhysicalParameters(nu, sigma, AdvectionField.constant((1.0, 0.0)), None),
        cip or CipParameters(0.1, 0.01, 0.01),
        bc,
        None,
        "channel with two pipes, parabolic inflow, do-nothing outflow",
    )


def _zero(x):
    return np.zeros((len(x), 2))


def channel_mesh(n_seeds: int = 400, lloyd_iterations: int = 40, rng_seed: int = 0) -> PolygonalMesh:
    holes = [regular_polygon(c, PIPE_RADIUS, PIPE_SIDES) for c in PIPE_CENTERS]
    return generate_voronoi(n_seeds, lloyd_iterations, rng_seed, CHANNEL_DOMAIN, holes, hole_label="pipe")


BUILTIN = {
    "boundary_layer": boundary_layer,
    "trig_convergence": trig_convergence,
    "pressure_robust": pressure_robust,
    "channel": channel,
}


def builtin_problem(name: str, **kw) -> ProblemSpec:
    try:
        factory = BUILTIN[name]
    except KeyError:
        raise UnknownProblem(f"unknown problem {name!r}; valid names: {', '.join(sorted(BUILTIN))}") from None
    return factory(**kw)


def strong_residual(problem: ProblemSpec, x: np.ndarray) -> np.ndarray:
    """Pointwise -nu/2 lap u + (grad u) beta + sigma u - grad p - f (needs div u = 0)."""
    ex = problem.exact
    if ex is None or problem.lap_u is None or problem.grad_p is None:
        raise MissingExactSolution(problem.name)
    par = problem.params
    lhs = (
        -0.5 * par.nu * problem.lap_u(x)
        + _apply_beta(ex.grad_u(x), par.beta.value(x))
        + par.sigma * ex.u(x)
        - problem.grad_p(x)
    )
    return lhs - par.f(x)


# -- solving and errors ----------------------------------------------------


def solve_problem(problem: ProblemSpec, mesh: PolygonalMesh, k: int, threads: int = 1, ops=None) -> DiscreteSolution:
    system = assemble(mesh, k, problem.params, problem.cip, problem.bc(mesh), ops=ops, threads=threads)
    return solve(system)


@dataclass
class ErrorReport:
    h: float
    n_cells: int
    n_dofs: int
    e_H1: float
    e_L2: float
    e_p: float
    h_mean: float = 0.0
    div_norm: float = 0.0
    runtime: float = 0.0


def velocity_polys(sol: DiscreteSolution, c: int):
    o = sol.system.ops[c]
    uc = sol.cell_velocity(c)
    dk = dim_p(o.k)
    return (o.pi_nabla @ uc).reshape(2, dk), (o.pi0 @ uc).reshape(2, dk)


def compute_errors(sol: DiscreteSolution, problem: ProblemSpec, quad_order: int | None = None) -> ErrorReport:
    ex = problem.exact
    if ex is None:
        raise MissingExactSolution(f"problem {problem.name!r} has no exact solution")
    system = sol.system
    k = system.k
    order = quad_order or 2 * k + 4
    eh1 = el2 = ep = 0.0
    for c, o in enumerate(system.ops):
        q = cell_quadrature(o.geometry.vertices, order, o.center)
        cn, c0 = velocity_polys(sol, c)
        Vk = o.basis_of(k).eval(q.points)
        Gx = o.basis_of(k).eval(q.points, 1, 0)
        Gy = o.basis_of(k).eval(q.points, 0, 1)
        grad_h = np.stack([np.column_stack([Gx @ cn[a], Gy @ cn[a]]) for a in range(2)], axis=1)
        eh1 += float(q.weights @ ((ex.grad_u(q.points) - grad_h) ** 2).sum(axis=(1, 2)))
        el2 += float(q.weights @ ((ex.u(q.points) - Vk @ c0.T) ** 2).sum(axis=1))
        ph = o.basis_of(k - 1).eval(q.points) @ sol.cell_pressure(c)
        ep += float(q.weights @ (ex.p(q.points) - ph) ** 2)
    return ErrorReport(
        h=sol.mesh.h,
        n_cells=sol.mesh.n_cells,
        n_dofs=system.dofmap.n_u + system.dofmap.n_p,
        h_mean=float(np.mean([g.diameter for g in sol.mesh.geometry])),
        e_H1=math.sqrt(eh1),
        e_L2=math.sqrt(el2),
        e_p=math.sqrt(ep),
        div_norm=divergence_norm(sol.u, system),
    )


# -- convergence studies ---------------------------------------------------


def observed_rate(e1: float, e2: float, h1: float, h2: float) -> float:
    return math.log(e1 / e2) / math.log(h1 / h2)


@dataclass
class ConvergenceTable:
    """Errors per mesh, coarsest first.

    Rates are measured against the mean cell diameter by default: on Voronoi
    families the maximum diameter is set by a single cell and jitters between
    levels, which pollutes the slopes.  Pass ``h_key="h"`` for max-diameter rates.
    """

    k: int
    reports: list[ErrorReport] = field(default_factory=list)
    h_key: str = "h_mean"

    def rates(self, key: str) -> list[float]:
        r, hk = self.reports, self.h_key
        return [
            observed_rate(getattr(r[i], key), getattr(r[i + 1], key), getattr(r[i], hk), getattr(r[i + 1], hk))
            for i in range(len(r) - 1)
        ]

    def last_rates(self) -> tuple[float, float, float]:
        return tuple(self.rates(key)[-1] for key in ("e_H1", "e_L2", "e_p"))

    HEADER = ("h", "h_mean", "n_cells", "n_dof", "e_H1", "e_L2", "e_p", "rate_H1", "rate_L2", "rate_p")

    def rows(self):
        rates = {key: [float("nan")] + self.rates(key) for key in ("e_H1", "e_L2", "e_p")}
        for i, r in enumerate(self.reports):
            yield (
                r.h,
                r.h_mean,
                r.n_cells,
                r.n_dofs,
                r.e_H1,
                r.e_L2,
                r.e_p,
                rates["e_H1"][i],
                rates["e_L2"][i],
                rates["e_p"][i],
            )

    def write_csv(self, path) -> None:
        write_csv(path, self.HEADER, self.rows())


def convergence_study(problem: ProblemSpec, k: int, meshes: Sequence[PolygonalMesh], threads: int = 1) -> ConvergenceTable:
    if len(meshes) < 3:
        raise ValueError("a convergence study needs at least three meshes")
    meshes = sorted(meshes, key=lambda m: -m.h)
    table = ConvergenceTable(k)
    for i, mesh in enumerate(meshes):
        t0 = time.perf_counter()
        try:
            sol = solve_problem(problem, mesh, k, threads)
        except Exception as exc:
            raise type(exc)(f"mesh {i}: {exc}") from exc
        rep = compute_errors(sol, problem)
        rep.runtime = time.perf_counter() - t0
        log.info("k=%d mesh %d: h=%.4g e_H1=%.3e e_L2=%.3e e_p=%.3e", k, i, rep.h, rep.e_H1, rep.e_L2, rep.e_p)
        table.reports.append(rep)
    return table


VORONOI_LEVELS = (16, 64, 256, 1024)


def voronoi_family(levels: Sequence[int] = VORONOI_LEVELS, lloyd_iterations: int = 100, rng_seed: int = 0):
    return [generate_voronoi(n, lloyd_iterations, rng_seed) for n in levels]


# -- CIP ablation ----------------------------------------------------------

ABLATION_TRIPLES = ((0.0, 0.0, 0.0), (0.1, 0.0, 0.0), (0.1, 0.01, 0.0), (0.1, 0.01, 0.01))


@dataclass
class AblationResult:
    triple: tuple[float, float, float]
    interior_deviation: float
    peak: float
    solution: DiscreteSolution


def _sample_velocity(sol: DiscreteSolution, order: int):
    """Points and P0_k velocity values of every element at quadrature points."""
    pts, vals = [], []
    for c, o in enumerate(sol.system.ops):
        q = cell_quadrature(o.geometry.vertices, order, o.center)
        _, c0 = velocity_polys(sol, c)
        pts.append(q.points)
        vals.append(o.basis_of(o.k).eval(q.points) @ c0.T)
    return np.vstack(pts), np.vstack(vals)


def interior_deviation(sol: DiscreteSolution, x_max: float = 0.9) -> tuple[float, float]:
    """(max_{x <= x_max} |u_2h - x|, max |u_2h|) over element quadrature points."""
    pts, vals = _sample_velocity(sol, 2 * sol.system.k + 2)
    inside = pts[:, 0] <= x_max
    dev = float(np.abs(vals[inside, 1] - pts[inside, 0]).max())
    return dev, float(np.abs(vals[:, 1]).max())


def delta_ablation(
    triples: Sequence[tuple[float, float, float]] = ABLATION_TRIPLES,
    k: int = 3,
    n: int = 16,
    out_dir: Path | None = None,
    threads: int = 1,
) -> list[AblationResult]:
    mesh = generate_square_grid(n)
    base = boundary_layer()
    results = []
    from .system import compute_operators

    ops = compute_operators(mesh, k, threads)
    for tr in triples:
        prob = base.with_cip(CipParameters(*tr))
        sol = solve_problem(prob, mesh, k, threads, ops=ops)
        dev, peak = interior_deviation(sol)
        results.append(AblationResult(tuple(tr), dev, peak, sol))
        if out_dir is not None:
            tag = "_".join(format(d, "g") for d in tr)
            export_solution(sol, Path(out_dir) / f"ablation_{tag}.vtk")
    return results


# -- pressure robustness ---------------------------------------------------


def pressure_robustness_check(k: int, meshes: Sequence[PolygonalMesh], threads: int = 1) -> ConvergenceTable:
    return convergence_study(pressure_robust(), k, meshes, threads)


# -- channel ---------------------------------------------------------------


def boundary_flux(sol: DiscreteSolution, label: str) -> float:
    """int u_h . n over the boundary edges with ``label`` (outward normal)."""
    mesh = sol.mesh
    total = 0.0
    for e, lab in mesh.boundary_labels.items():
        if lab != label:
            continue
        c = int(mesh.edge_cells[e, 0])
        o = sol.system.ops[c]
        j = next(j for j, (ee, _) in enumerate(mesh.cell_edges[c]) if ee == e)
        nq = o.k + 2
        rows = o.flux_rows[j * nq : (j + 1) * nq]
        total += float(o.bweights[j * nq : (j + 1) * nq] @ (rows @ sol.cell_velocity(c)))
    return total


def run_channel(mesh: PolygonalMesh | None = None, k: int = 2, out_dir: Path | None = None, threads: int = 1):
    mesh = mesh or channel_mesh()
    sol = solve_problem(channel(), mesh, k, threads)
    inflow = -boundary_flux(sol, "left")
    outflow = boundary_flux(sol, "right")
    if out_dir is not None:
        export_solution(sol, Path(out_dir) / "channel.vtk")
    return sol, inflow, outflow


# -- export ----------------------------------------------------------------


def solution_fields(sol: DiscreteSolution):
    mesh = sol.mesh
    cell_u = np.empty((mesh.n_cells, 2))
    cell_p = np.empty(mesh.n_cells)
    for c, o in enumerate(sol.system.ops):
        _, c0 = velocity_polys(sol, c)
        cell_u[c] = o.basis_of(o.k).eval(o.center[None, :]) @ c0.T
        cell_p[c] = (o.H[o.k - 1][0] @ sol.cell_pressure(c)) / o.area
    point_u = sol.u[: 2 * mesh.n_vertices].reshape(-1, 2)
    cell_data = {"velocity": cell_u, "speed": np.hypot(*cell_u.T), "pressure": cell_p}
    point_data = {"velocity": point_u, "speed": np.hypot(*point_u.T)}
    return cell_data, point_data


def export_solution(sol: DiscreteSolution, path) -> None:
    cell_data, point_data = solution_fields(sol)
    write_vtk(path, sol.mesh, cell_data, point_data)
