"""Global DoF numbering, saddle-point assembly, direct solve and global diagnostics."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .element import ElementOperators
from .errors import ResidualTooLarge, SingularSystem, UnlabeledBoundary, VemError
from .forms import (
    CipParameters,
    PhysicalParameters,
    b_velocity_pressure,
    cip_edge_blocks,
    cip_element_stab,
    local_A,
    local_c_skew,
    local_rhs,
)
from .mesh import BOUNDARY, PolygonalMesh
from .polyquad import dim_p, gauss_lobatto_reference

log = logging.getLogger(__name__)

Evaluator = Callable[[np.ndarray], np.ndarray]
RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class BoundaryConditions:
    """Dirichlet data per boundary label; labels in ``neumann`` are do-nothing."""

    dirichlet: Mapping[str, Evaluator] = field(default_factory=dict)
    neumann: frozenset[str] = frozenset()

    @classmethod
    def all_dirichlet(cls, labels, g: Evaluator | None = None) -> "BoundaryConditions":
        g = g or zero_field
        return cls({lab: g for lab in labels})

    def is_all_dirichlet(self, mesh: PolygonalMesh) -> bool:
        return all(lab in self.dirichlet for lab in mesh.labels())


def zero_field(x: np.ndarray) -> np.ndarray:
    return np.zeros((len(x), 2))


def compute_operators(mesh: PolygonalMesh, k: int, threads: int = 1) -> list[ElementOperators]:
    """Element operators for every cell; a threaded map returns the serial result."""

    def one(c):
        try:
            return ElementOperators(mesh.cell_vertices(c), k)
        except VemError as exc:
            raise type(exc)(f"element {c}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, range(mesh.n_cells)))
    return [one(c) for c in range(mesh.n_cells)]


@dataclass
class GlobalDofMap:
    k: int
    n_u: int
    n_p: int
    cell_dofs: list[np.ndarray]
    cell_pdofs: list[np.ndarray]
    dirichlet: np.ndarray  # global velocity DoF indices
    dirichlet_values: np.ndarray
    free: np.ndarray
    point_coords: np.ndarray  # coordinates of every boundary-type point DoF pair
    has_multiplier: bool

    @property
    def n_free(self) -> int:
        return len(self.free)


def _edge_nodes(k: int) -> np.ndarray:
    ref, _ = gauss_lobatto_reference(k + 1)
    return 0.5 * (ref[1:-1] + 1.0)


def build_dof_map(mesh: PolygonalMesh, k: int, bc: BoundaryConditions) -> GlobalDofMap:
    missing = sorted(lab for lab in mesh.labels() if lab not in bc.dirichlet and lab not in bc.neumann)
    if missing:
        raise UnlabeledBoundary(f"no boundary condition for labels {missing}")
    nv, ne = mesh.n_vertices, mesh.n_edges
    n_int = dim_p(k - 3) + dim_p(k - 1) - 1
    edge_base = 2 * nv
    cell_base = edge_base + 2 * (k - 1) * ne
    n_u = cell_base + n_int * mesh.n_cells
    dk1 = dim_p(k - 1)

    cell_dofs = []
    for c, loop in enumerate(mesh.cells):
        m = len(loop)
        idx = np.empty(2 * m * k + n_int, dtype=np.int64)
        for i, v in enumerate(loop):
            idx[2 * i] = 2 * v
            idx[2 * i + 1] = 2 * v + 1
        pos = 2 * m
        for j, (e, sign) in enumerate(mesh.cell_edges[c]):
            for node in range(k - 1):
                g = node if sign > 0 else k - 2 - node
                base = edge_base + 2 * ((k - 1) * e + g)
                idx[pos] = base
                idx[pos + 1] = base + 1
                pos += 2
        idx[pos:] = cell_base + n_int * c + np.arange(n_int)
        cell_dofs.append(idx)
    cell_pdofs = [dk1 * c + np.arange(dk1) for c in range(mesh.n_cells)]

    # coordinates of the point DoFs (vertices then edge nodes in edge orientation)
    t = _edge_nodes(k)
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    enodes = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    point_coords = np.vstack([mesh.vertices, enodes.reshape(-1, 2)])

    # Dirichlet mask, first label wins at shared vertices
    values: dict[int, np.ndarray] = {}
    for e in sorted(mesh.boundary_labels):
        lab = mesh.boundary_labels[e]
        if lab not in bc.dirichlet:
            continue
        g = bc.dirichlet[lab]
        pts_idx = [int(mesh.edges[e, 0]), int(mesh.edges[e, 1])]
        pts_idx += [nv + (k - 1) * e + m for m in range(k - 1)]
        pts_idx = [p for p in pts_idx if p not in values]
        if not pts_idx:
            continue
        vals = np.asarray(g(point_coords[pts_idx]), dtype=float).reshape(-1, 2)
        for p, v in zip(pts_idx, vals):
            values[p] = v
    points = np.array(sorted(values), dtype=np.int64)
    dirichlet = np.concatenate([2 * points, 2 * points + 1]) if len(points) else np.zeros(0, np.int64)
    dvals = np.concatenate([[values[p][0] for p in points], [values[p][1] for p in points]]) if len(points) else np.zeros(0)
    order = np.argsort(dirichlet)
    dirichlet, dvals = dirichlet[order], dvals[order]
    mask = np.ones(n_u, dtype=bool)
    mask[dirichlet] = False
    return GlobalDofMap(
        k=k,
        n_u=n_u,
        n_p=dk1 * mesh.n_cells,
        cell_dofs=cell_dofs,
        cell_pdofs=cell_pdofs,
        dirichlet=dirichlet,
        dirichlet_values=dvals,
        free=np.flatnonzero(mask),
        point_coords=point_coords,
        has_multiplier=bc.is_all_dirichlet(mesh),
    )


class _Scatter:
    def __init__(self):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []

    def add(self, rows, cols, block):
        R, C = np.meshgrid(rows, cols, indexing="ij")
        self.rows.append(R.ravel())
        self.cols.append(C.ravel())
        self.vals.append(np.asarray(block).ravel())

    def matrix(self, shape) -> sps.csr_matrix:
        if not self.rows:
            return sps.csr_matrix(shape)
        M = sps.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))), shape=shape
        ).tocsr()
        M.sum_duplicates()
        return M


@dataclass
class GlobalSystem:
    mesh: PolygonalMesh
    k: int
    ops: list[ElementOperators]
    dofmap: GlobalDofMap
    params: PhysicalParameters
    cip: CipParameters
    A: sps.csr_matrix  # A_h
    J: sps.csr_matrix  # J_h (edge jumps + delta h_E S)
    C: sps.csr_matrix  # c_h^skew
    B: sps.csr_matrix  # b(v, q): (n_p, n_u)
    F: np.ndarray
    mean_row: np.ndarray  # int_E m_a per pressure DoF
    matrix: sps.csc_matrix
    rhs: np.ndarray

    @property
    def K(self) -> sps.csr_matrix:
        return (self.A + self.J + self.C).tocsr()


@dataclass
class DiscreteSolution:
    u: np.ndarray
    p: np.ndarray
    multiplier: float
    residual: float
    system: GlobalSystem
    stats: dict = field(default_factory=dict)

    @property
    def mesh(self) -> PolygonalMesh:
        return self.system.mesh

    def cell_velocity(self, c: int) -> np.ndarray:
        return self.u[self.system.dofmap.cell_dofs[c]]

    def cell_pressure(self, c: int) -> np.ndarray:
        return self.p[self.system.dofmap.cell_pdofs[c]]


def assemble(
    mesh: PolygonalMesh,
    k: int,
    params: PhysicalParameters,
    cip: CipParameters,
    bc: BoundaryConditions,
    f: Evaluator | None = None,
    ops: list[ElementOperators] | None = None,
    threads: int = 1,
) -> GlobalSystem:
    """Assemble the saddle-point system with Dirichlet elimination and lift."""
    f = f if f is not None else params.f
    ops = ops if ops is not None else compute_operators(mesh, k, threads)
    dm = build_dof_map(mesh, k, bc)
    n_u, n_p = dm.n_u, dm.n_p
    sA, sJ, sC, sB = _Scatter(), _Scatter(), _Scatter(), _Scatter()
    F = np.zeros(n_u)
    mean_row = np.zeros(n_p)

    def local(c):
        o = ops[c]
        try:
            return (
                local_A(o, params.nu, params.sigma),
                cip_element_stab(o, cip),
                local_c_skew(o, params.beta),
                b_velocity_pressure(o),
                local_rhs(o, f),
            )
        except VemError as exc:
            raise type(exc)(f"element {c}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            blocks = list(pool.map(local, range(mesh.n_cells)))
    else:
        blocks = [local(c) for c in range(mesh.n_cells)]
    for c, (Ae, Se, Ce, Be, Fe) in enumerate(blocks):
        idx = dm.cell_dofs[c]
        pidx = dm.cell_pdofs[c]
        sA.add(idx, idx, Ae)
        if cip.delta > 0:
            sJ.add(idx, idx, Se)
        sC.add(idx, idx, Ce)
        sB.add(pidx, idx, Be)
        np.add.at(F, idx, Fe)
        mean_row[pidx] = ops[c].H[k - 1][0]

    if cip.delta > 0:
        for e in mesh.internal_edges:
            left, right = mesh.edge_cells[e]
            a, b = mesh.vertices[mesh.edges[e]]
            blk = cip_edge_blocks(a, b, ops[left], ops[right], params.beta, cip)
            idx = np.concatenate([dm.cell_dofs[left], dm.cell_dofs[right]])
            sJ.add(idx, idx, blk)

    # duplicate entries are summed in different orders at (i, j) and (j, i);
    # re-symmetrizing makes the symmetry properties exact in floating point
    A = sA.matrix((n_u, n_u))
    A = (0.5 * (A + A.T)).tocsr()
    J = sJ.matrix((n_u, n_u))
    J = (0.5 * (J + J.T)).tocsr()
    C = sC.matrix((n_u, n_u))
    C = (0.5 * (C - C.T)).tocsr()
    B = sB.matrix((n_p, n_u))
    matrix, rhs = _saddle(A + J + C, B, F, mean_row, dm)
    return GlobalSystem(mesh, k, ops, dm, params, cip, A, J, C, B, F, mean_row, matrix, rhs)


def _saddle(K, B, F, mean_row, dm: GlobalDofMap):
    fr, dr = dm.free, dm.dirichlet
    g = dm.dirichlet_values
    K = K.tocsr()
    Kff = K[fr][:, fr]
    Bf = B.tocsr()[:, fr]
    rhs_u = F[fr] - K[fr][:, dr] @ g
    rhs_p = -(B.tocsr()[:, dr] @ g)
    blocks = [[Kff, Bf.T], [Bf, None]]
    rhs = [rhs_u, rhs_p]
    if dm.has_multiplier:
        L = sps.csr_matrix(mean_row[None, :])
        blocks = [[Kff, Bf.T, None], [Bf, None, L.T], [None, L, None]]
        rhs.append(np.zeros(1))
    M = sps.bmat(blocks, format="csc")
    return M, np.concatenate(rhs)


def solve(system: GlobalSystem, check: bool = True) -> DiscreteSolution:
    """Sparse LU solve (COLAMD ordering, partial pivoting)."""
    M, rhs = system.matrix, system.rhs
    dm = system.dofmap
    nf = dm.n_free
    if not np.any(rhs):
        x = np.zeros(M.shape[0])
        fill = 0
    else:
        try:
            lu = spla.splu(M.tocsc(), permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularSystem(f"sparse factorization failed: {exc}") from exc
        x = lu.solve(rhs)
        fill = lu.L.nnz + lu.U.nnz
        if not np.all(np.isfinite(x)):
            raise SingularSystem("factorization produced non-finite values")
    bnorm = np.linalg.norm(rhs)
    res = float(np.linalg.norm(M @ x - rhs) / bnorm) if bnorm > 0 else float(np.linalg.norm(M @ x))
    if check and res > RESIDUAL_TOL:
        raise ResidualTooLarge(f"relative residual {res:.3e} exceeds {RESIDUAL_TOL:g}")
    u = np.zeros(dm.n_u)
    u[dm.free] = x[:nf]
    u[dm.dirichlet] = dm.dirichlet_values
    p = x[nf : nf + dm.n_p]
    lam = float(x[-1]) if dm.has_multiplier else 0.0
    stats = {"residual": res, "fill": fill, "n_unknowns": M.shape[0]}
    log.info("solved %d unknowns, residual %.2e", M.shape[0], res)
    return DiscreteSolution(u, p, lam, res, system, stats)


# -- diagnostics -----------------------------------------------------------


def divergence_norm(u: np.ndarray, system: GlobalSystem) -> float:
    """||div u_h||_{0, Omega} from the exact per-element divergence coefficients."""
    k = system.k
    total = 0.0
    for c, o in enumerate(system.ops):
        d = o.div_coeffs @ u[system.dofmap.cell_dofs[c]]
        total += float(d @ o.H[k - 1] @ d)
    return float(np.sqrt(max(total, 0.0)))


def energy_norm_diagnostic(v: np.ndarray, system: GlobalSystem) -> float:
    """Computable surrogate sqrt(v^T (A_h + J_h) v) of the K-norm."""
    S = system.A + system.J
    return float(np.sqrt(max(float(v @ (S @ v)), 0.0)))


def kernel_residual(u: np.ndarray, system: GlobalSystem) -> np.ndarray:
    """b(u_h, q) for every pressure basis function."""
    return system.B @ u


def pressure_mean(sol: DiscreteSolution) -> float:
    return float(sol.system.mean_row @ sol.p)


def interpolate_global(
    mesh: PolygonalMesh,
    ops: list[ElementOperators],
    dofmap: GlobalDofMap,
    value: Evaluator,
    div: Evaluator,
) -> np.ndarray:
    """Global DoF vector of a smooth field; shared boundary DoFs agree between cells."""
    u = np.zeros(dofmap.n_u)
    for c, o in enumerate(ops):
        u[dofmap.cell_dofs[c]] = o.interpolate(value, div)
    return u
