"""Polygonal meshes: construction, generators, quality diagnostics and text I/O."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateCell,
    DegenerateSeedConfiguration,
    DuplicateVertexInLoop,
    InconsistentCounts,
    MeshError,
    NonManifoldEdge,
    ParseError,
)
from .polyquad import polygon_area, polygon_centroid

log = logging.getLogger(__name__)

BOUNDARY = -1

Rect = tuple[float, float, float, float]  # (xmin, xmax, ymin, ymax)
UNIT_SQUARE: Rect = (0.0, 1.0, 0.0, 1.0)

BoundaryTagger = Callable[[np.ndarray, np.ndarray, np.ndarray], str]


@dataclass(frozen=True)
class ElementGeometry:
    vertices: np.ndarray  # (nv, 2), CCW
    area: float
    centroid: np.ndarray
    diameter: float
    lengths: np.ndarray  # edge j runs from vertex j to vertex j+1
    normals: np.ndarray  # outward unit normals, (nv, 2)
    tangents: np.ndarray  # unit tangents along the CCW loop, (nv, 2)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)


def element_geometry(verts: np.ndarray) -> ElementGeometry:
    verts = np.asarray(verts, dtype=float)
    d = np.roll(verts, -1, axis=0) - verts
    lengths = np.hypot(d[:, 0], d[:, 1])
    tangents = d / lengths[:, None]
    normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
    diff = verts[:, None, :] - verts[None, :, :]
    diameter = float(np.sqrt((diff**2).sum(-1)).max())
    return ElementGeometry(
        vertices=verts,
        area=polygon_area(verts),
        centroid=polygon_centroid(verts),
        diameter=diameter,
        lengths=lengths,
        normals=normals,
        tangents=tangents,
    )


@dataclass(frozen=True, eq=False)
class PolygonalMesh:
    """Immutable polygonal mesh.

    ``edges[e] = (v0, v1)`` is oriented so that ``edge_cells[e, 0]`` (the left
    cell) traverses it as v0 -> v1; ``edge_cells[e, 1]`` is the right cell or
    ``BOUNDARY``.  ``cell_edges[c]`` lists ``(edge, sign)`` per local edge with
    sign +1 when the local direction matches the edge orientation.
    """

    vertices: np.ndarray
    cells: tuple[tuple[int, ...], ...]
    edges: np.ndarray
    edge_cells: np.ndarray
    cell_edges: tuple[tuple[tuple[int, int], ...], ...]
    boundary_labels: dict[int, str] = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def internal_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] != BOUNDARY)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] == BOUNDARY)

    def cell_vertices(self, c: int) -> np.ndarray:
        return self.vertices[list(self.cells[c])]

    @cached_property
    def geometry(self) -> tuple[ElementGeometry, ...]:
        return tuple(element_geometry(self.cell_vertices(c)) for c in range(self.n_cells))

    @property
    def h(self) -> float:
        return max(g.diameter for g in self.geometry)

    @property
    def area(self) -> float:
        return sum(g.area for g in self.geometry)

    def edge_midpoint(self, e: int) -> np.ndarray:
        v0, v1 = self.edges[e]
        return 0.5 * (self.vertices[v0] + self.vertices[v1])

    def labels(self) -> set[str]:
        return set(self.boundary_labels.values())

    def same_as(self, other: "PolygonalMesh") -> bool:
        return (
            np.array_equal(self.vertices, other.vertices)
            and self.cells == other.cells
            and self.boundary_labels == other.boundary_labels
        )


def _normalize_loop(loop: Sequence[int], verts: np.ndarray, n_vertices: int) -> tuple[int, ...]:
    loop = [int(i) for i in loop]
    if len(loop) < 3:
        raise DegenerateCell(f"cell loop {loop} has fewer than 3 vertices")
    if any(i < 0 or i >= n_vertices for i in loop):
        raise MeshError(f"cell loop {loop} references a vertex out of range")
    if len(set(loop)) != len(loop):
        raise DuplicateVertexInLoop(f"cell loop {loop} repeats a vertex")
    area = polygon_area(verts[loop])
    if area < 0:
        loop = loop[::-1]
        area = -area
    if not area > 0:
        raise DegenerateCell(f"cell loop {loop} has non-positive area")
    start = loop.index(min(loop))
    return tuple(loop[start:] + loop[:start])


def rectangle_tagger(domain: Rect = UNIT_SQUARE, other: str = "hole") -> BoundaryTagger:
    """Label boundary edges by the side of ``domain`` they lie on."""
    x0, x1, y0, y1 = domain
    tol = 1e-9 * max(x1 - x0, y1 - y0)

    def tag(mid, a, b) -> str:
        if abs(a[0] - x0) <= tol and abs(b[0] - x0) <= tol:
            return "left"
        if abs(a[0] - x1) <= tol and abs(b[0] - x1) <= tol:
            return "right"
        if abs(a[1] - y0) <= tol and abs(b[1] - y0) <= tol:
            return "bottom"
        if abs(a[1] - y1) <= tol and abs(b[1] - y1) <= tol:
            return "top"
        return other

    return tag


def build_mesh(
    vertices,
    cells: Iterable[Sequence[int]],
    boundary_tagger: BoundaryTagger | None = None,
    boundary_labels: dict[tuple[int, int], str] | None = None,
) -> PolygonalMesh:
    """Build a mesh from vertex coordinates and cell loops.

    Clockwise loops are silently reversed.  Boundary edges are labelled by
    ``boundary_labels`` (keyed by the unordered vertex pair) when present,
    otherwise by ``boundary_tagger(midpoint, a, b)``, otherwise "boundary".
    """
    verts = np.asarray(vertices, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(verts)):
        raise MeshError("vertex coordinates must be finite")
    loops = tuple(_normalize_loop(c, verts, len(verts)) for c in cells)

    edge_id: dict[tuple[int, int], int] = {}
    edges: list[tuple[int, int]] = []
    edge_cells: list[list[int]] = []
    cell_edges = []
    for c, loop in enumerate(loops):
        local = []
        m = len(loop)
        for j in range(m):
            a, b = loop[j], loop[(j + 1) % m]
            key = (min(a, b), max(a, b))
            e = edge_id.get(key)
            if e is None:
                e = len(edges)
                edge_id[key] = e
                edges.append((a, b))
                edge_cells.append([c, BOUNDARY])
                local.append((e, 1))
                continue
            if edge_cells[e][1] != BOUNDARY:
                raise NonManifoldEdge(f"edge {key} is shared by more than two cells")
            if edges[e] != (b, a):
                raise NonManifoldEdge(f"edge {key} is traversed twice in the same direction")
            edge_cells[e][1] = c
            local.append((e, -1))
        cell_edges.append(tuple(local))

    edges_arr = np.array(edges, dtype=int).reshape(-1, 2)
    ec = np.array(edge_cells, dtype=int).reshape(-1, 2)
    labels: dict[int, str] = {}
    for e in np.flatnonzero(ec[:, 1] == BOUNDARY):
        a, b = edges_arr[e]
        key = (min(a, b), max(a, b))
        if boundary_labels and key in boundary_labels:
            labels[int(e)] = boundary_labels[key]
        elif boundary_tagger is not None:
            labels[int(e)] = boundary_tagger(0.5 * (verts[a] + verts[b]), verts[a], verts[b])
        else:
            labels[int(e)] = "boundary"
    verts.setflags(write=False)
    edges_arr.setflags(write=False)
    ec.setflags(write=False)
    return PolygonalMesh(verts, loops, edges_arr, ec, tuple(cell_edges), labels)


# -- generators ------------------------------------------------------------


def generate_square_grid(n: int, domain: Rect = UNIT_SQUARE) -> PolygonalMesh:
    """n x n congruent rectangles on ``domain`` with side labels."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x0, x1, y0, y1 = domain
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    cells = []
    for j in range(n):
        for i in range(n):
            v = j * (n + 1) + i
            cells.append((v, v + 1, v + n + 2, v + n + 1))
    return build_mesh(verts, cells, rectangle_tagger(domain))


def _clip_halfplane(poly: list[tuple[float, float]], nx, ny, c, eps):
    """Keep the part of ``poly`` where nx*x + ny*y - c <= 0."""
    out: list[tuple[float, float]] = []
    m = len(poly)
    if m == 0:
        return out
    dist = [nx * p[0] + ny * p[1] - c for p in poly]
    for i in range(m):
        p, q = poly[i - 1], poly[i]
        dp, dq = dist[i - 1], dist[i]
        p_in, q_in = dp <= eps, dq <= eps
        if q_in:
            if not p_in and dq < -eps:
                t = dp / (dp - dq)
                out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
            out.append(q)
        elif p_in and dp < -eps:
            t = dp / (dp - dq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    # drop consecutive near-duplicates
    clean: list[tuple[float, float]] = []
    for p in out:
        if not clean or abs(p[0] - clean[-1][0]) > eps or abs(p[1] - clean[-1][1]) > eps:
            clean.append(p)
    while len(clean) > 1 and abs(clean[0][0] - clean[-1][0]) <= eps and abs(clean[0][1] - clean[-1][1]) <= eps:
        clean.pop()
    return clean


def voronoi_cells(seeds: np.ndarray, domain: Rect) -> list[list[tuple[float, float]]]:
    """Voronoi cells of ``seeds`` clipped to ``domain`` by half-plane intersection."""
    x0, x1, y0, y1 = domain
    scale = max(x1 - x0, y1 - y0)
    eps = 1e-12 * scale
    n = len(seeds)
    d2 = ((seeds[:, None, :] - seeds[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    if n > 1 and d2.min() <= (1e-10 * scale) ** 2:
        raise DegenerateSeedConfiguration("coincident Voronoi seeds")
    order = np.argsort(d2, axis=1, kind="stable")
    rect = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    cells = []
    for i in range(n):
        sx, sy = float(seeds[i, 0]), float(seeds[i, 1])
        poly = list(rect)
        r2 = max((p[0] - sx) ** 2 + (p[1] - sy) ** 2 for p in poly)
        for j in order[i, : n - 1]:
            if d2[i, j] > 4.0 * r2 * (1 + 1e-12):
                break
            tx, ty = float(seeds[j, 0]), float(seeds[j, 1])
            nx, ny = tx - sx, ty - sy
            c = 0.5 * (nx * (sx + tx) + ny * (sy + ty))
            poly = _clip_halfplane(poly, nx, ny, c, eps * math.hypot(nx, ny))
            r2 = max((p[0] - sx) ** 2 + (p[1] - sy) ** 2 for p in poly)
        cells.append(poly)
    return cells


def _subtract_holes(poly, holes):
    """Remove the hole polygons from ``poly``; returns a list of vertex loops."""
    if not holes:
        return [poly]
    from shapely.geometry import Polygon

    shape = Polygon(poly)
    for hole in holes:
        shape = shape.difference(Polygon(hole))
    parts = [shape] if shape.geom_type == "Polygon" else list(getattr(shape, "geoms", []))
    out = []
    for part in parts:
        if part.is_empty or part.area <= 0:
            continue
        if part.geom_type != "Polygon":
            continue
        if len(part.interiors):
            raise DegenerateSeedConfiguration(
                "a hole lies strictly inside one Voronoi cell; increase n_seeds"
            )
        coords = list(part.exterior.coords)[:-1]
        out.append([(float(x), float(y)) for x, y in coords])
    return out


def _cell_centroid(parts) -> np.ndarray:
    area = cx = cy = 0.0
    for poly in parts:
        m = len(poly)
        for i in range(m):
            x0, y0 = poly[i - 1]
            x1, y1 = poly[i]
            cr = x0 * y1 - x1 * y0
            area += cr
            cx += (x0 + x1) * cr
            cy += (y0 + y1) * cr
    return np.array([cx / (3.0 * area), cy / (3.0 * area)])


def _inside_any(points: np.ndarray, holes) -> np.ndarray:
    if not holes:
        return np.zeros(len(points), dtype=bool)
    mask = np.zeros(len(points), dtype=bool)
    for hole in holes:
        mask |= _points_in_polygon(points, np.asarray(hole))
    return mask


def _points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        cond = (ay > y) != (by > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = ax + (y - ay) * (bx - ax) / (by - ay)
        inside ^= cond & (x < xint)
    return inside


def _assemble_from_loops(
    loops: list[list[tuple[float, float]]],
    domain: Rect,
    tagger: BoundaryTagger,
) -> PolygonalMesh:
    """Merge duplicated vertices of independently computed cells and build a mesh."""
    from scipy.spatial import cKDTree

    x0, x1, y0, y1 = domain
    scale = max(x1 - x0, y1 - y0)
    tol = 1e-9 * scale
    pts = np.array([p for loop in loops for p in loop], dtype=float)
    # snap to the outer rectangle so labels and areas are exact
    for col, lo, hi in ((0, x0, x1), (1, y0, y1)):
        pts[np.abs(pts[:, col] - lo) <= tol, col] = lo
        pts[np.abs(pts[:, col] - hi) <= tol, col] = hi
    tree = cKDTree(pts)
    parent = np.arange(len(pts))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(tree.query_pairs(tol)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(len(pts))])
    uniq, new_index = np.unique(roots, return_inverse=True)
    verts = pts[uniq]

    cells: list[list[int]] = []
    pos = 0
    for loop in loops:
        idx = [int(new_index[pos + t]) for t in range(len(loop))]
        pos += len(loop)
        clean: list[int] = []
        for i in idx:
            if not clean or clean[-1] != i:
                clean.append(i)
        while len(clean) > 1 and clean[0] == clean[-1]:
            clean.pop()
        if len(clean) >= 3:
            cells.append(clean)
    cells = _repair_hanging_vertices(verts, cells, tol)
    # drop vertices no longer referenced, keep deterministic order
    used = sorted({i for c in cells for i in c})
    remap = {old: new for new, old in enumerate(used)}
    verts = verts[used]
    cells = [[remap[i] for i in c] for c in cells]
    return build_mesh(verts, cells, tagger)


def _repair_hanging_vertices(verts: np.ndarray, cells: list[list[int]], tol: float):
    """Insert vertices that lie in the interior of another cell's edge into that edge."""
    use: dict[tuple[int, int], int] = {}
    for loop in cells:
        m = len(loop)
        for j in range(m):
            a, b = loop[j], loop[(j + 1) % m]
            key = (min(a, b), max(a, b))
            use[key] = use.get(key, 0) + 1
    single = [k for k, v in use.items() if v == 1]
    if not single:
        return cells
    single_vertices = np.unique(np.array(single).ravel())
    inserts: dict[tuple[int, int], list[int]] = {}
    for a, b in single:
        pa, pb = verts[a], verts[b]
        d = pb - pa
        L2 = float(d @ d)
        cand = single_vertices[(single_vertices != a) & (single_vertices != b)]
        w = verts[cand] - pa
        t = (w @ d) / L2
        dist = np.abs(w[:, 0] * d[1] - w[:, 1] * d[0]) / math.sqrt(L2)
        on = (t > 1e-9) & (t < 1 - 1e-9) & (dist <= tol)
        if np.any(on):
            hits = cand[on][np.argsort(t[on])]
            inserts[(a, b)] = [int(h) for h in hits]
    if not inserts:
        return cells
    out = []
    for loop in cells:
        new = []
        m = len(loop)
        for j in range(m):
            a, b = loop[j], loop[(j + 1) % m]
            new.append(a)
            if (a, b) in inserts:
                new.extend(inserts[(a, b)])
            elif (b, a) in inserts:
                new.extend(inserts[(b, a)][::-1])
        out.append(new)
    return out


def generate_voronoi(
    n_seeds: int,
    lloyd_iterations: int = 0,
    rng_seed: int = 0,
    domain: Rect = UNIT_SQUARE,
    holes: Sequence[Sequence[tuple[float, float]]] | None = None,
    seeds: np.ndarray | None = None,
    hole_label: str = "hole",
) -> PolygonalMesh:
    """Lloyd-relaxed Voronoi mesh clipped to a rectangle minus optional polygonal holes.

    ``seeds`` overrides random sampling (``n_seeds`` is then ignored).
    """
    holes = [list(map(tuple, h)) for h in holes] if holes else []
    x0, x1, y0, y1 = domain
    if seeds is None:
        if n_seeds < 2:
            raise ValueError("n_seeds must be >= 2")
        rng = np.random.default_rng(rng_seed)
        pts = []
        while len(pts) < n_seeds:
            batch = rng.random((n_seeds, 2)) * [x1 - x0, y1 - y0] + [x0, y0]
            batch = batch[~_inside_any(batch, holes)]
            pts.extend(batch.tolist())
        seeds = np.array(pts[:n_seeds])
    else:
        seeds = np.asarray(seeds, dtype=float)
    for it in range(lloyd_iterations):
        cells = voronoi_cells(seeds, domain)
        new = np.empty_like(seeds)
        for i, cell in enumerate(cells):
            parts = _subtract_holes(cell, holes)
            new[i] = _cell_centroid(parts) if parts else seeds[i]
        seeds = new
    cells = voronoi_cells(seeds, domain)
    loops = []
    for cell in cells:
        loops.extend(_subtract_holes(cell, holes))
    tagger = rectangle_tagger(domain, other=hole_label)
    return _assemble_from_loops(loops, domain, tagger)


def regular_polygon(center, radius: float, n_sides: int) -> list[tuple[float, float]]:
    cx, cy = center
    ang = 2 * np.pi * np.arange(n_sides) / n_sides
    return [(cx + radius * math.cos(a), cy + radius * math.sin(a)) for a in ang]


# -- quality ---------------------------------------------------------------


@dataclass(frozen=True)
class MeshQualityReport:
    h: float
    min_edge_ratio: np.ndarray
    star_shape_ok: np.ndarray
    quasi_uniformity_ratio: float

    def summary(self) -> dict[str, float]:
        return {
            "h": self.h,
            "min_edge_ratio": float(self.min_edge_ratio.min()),
            "star_shape_ok": bool(self.star_shape_ok.all()),
            "quasi_uniformity_ratio": self.quasi_uniformity_ratio,
        }


def is_convex(verts: np.ndarray) -> bool:
    d = np.roll(verts, -1, axis=0) - verts
    cross = d[:, 0] * np.roll(d[:, 1], -1) - d[:, 1] * np.roll(d[:, 0], -1)
    scale = float((d**2).sum(1).max())
    return bool(np.all(cross >= -1e-12 * scale))


def polygon_kernel_nonempty(verts: np.ndarray) -> bool:
    """Whether the intersection of the inner half-planes of all edges has positive area."""
    verts = np.asarray(verts, dtype=float)
    lo, hi = verts.min(0), verts.max(0)
    poly = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]
    n = len(verts)
    scale = float(max(hi - lo))
    for i in range(n):
        a, b = verts[i], verts[(i + 1) % n]
        t = b - a
        nx, ny = t[1], -t[0]  # outward for CCW
        poly = _clip_halfplane(poly, nx, ny, nx * a[0] + ny * a[1], 0.0)
        if len(poly) < 3:
            return False
    return abs(polygon_area(np.array(poly))) > 1e-14 * scale**2


def quality_report(mesh: PolygonalMesh) -> MeshQualityReport:
    ratios = np.empty(mesh.n_cells)
    star = np.empty(mesh.n_cells, dtype=bool)
    diam = np.empty(mesh.n_cells)
    for c, g in enumerate(mesh.geometry):
        ratios[c] = g.lengths.min() / g.diameter
        diam[c] = g.diameter
        star[c] = is_convex(g.vertices) or polygon_kernel_nonempty(g.vertices)
    h = float(diam.max())
    return MeshQualityReport(h, ratios, star, h / float(diam.min()))


# -- text format -----------------------------------------------------------

MAGIC = "vem-mesh 1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_mesh(mesh: PolygonalMesh, path) -> None:
    lines = [MAGIC, f"{mesh.n_vertices} {mesh.n_cells}"]
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in mesh.vertices]
    lines += [" ".join(str(i) for i in (len(c), *c)) for c in mesh.cells]
    for e in sorted(mesh.boundary_labels):
        a, b = mesh.edges[e]
        lines.append(f"boundary {a} {b} {mesh.boundary_labels[e]}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> PolygonalMesh:
    text = Path(path).read_text().splitlines()
    rows = [(i + 1, ln.split()) for i, ln in enumerate(text) if ln.strip()]
    if not rows or " ".join(rows[0][1]) != MAGIC:
        raise ParseError(f"expected header '{MAGIC}'", rows[0][0] if rows else 1)
    try:
        nv, nc = (int(t) for t in rows[1][1])
    except (IndexError, ValueError):
        raise ParseError("expected '<n_vertices> <n_cells>'", rows[1][0] if len(rows) > 1 else 2)
    body = rows[2:]
    if len(body) < nv + nc:
        raise InconsistentCounts(
            f"declared {nv} vertices and {nc} cells but file has {len(body)} data lines",
            body[-1][0] if body else 2,
        )
    verts = np.empty((nv, 2))
    for i in range(nv):
        line, tok = body[i]
        try:
            if len(tok) != 2:
                raise ValueError
            verts[i] = float(tok[0]), float(tok[1])
        except ValueError:
            raise ParseError("expected 'x y'", line)
    cells = []
    for line, tok in body[nv : nv + nc]:
        try:
            m = int(tok[0])
            idx = [int(t) for t in tok[1:]]
        except (IndexError, ValueError):
            raise ParseError("expected '<m> i1 ... im'", line)
        if len(idx) != m:
            raise InconsistentCounts(f"cell declares {m} vertices but lists {len(idx)}", line)
        if any(i < 0 or i >= nv for i in idx):
            raise ParseError("cell references a missing vertex", line)
        cells.append(idx)
    labels: dict[tuple[int, int], str] = {}
    for line, tok in body[nv + nc :]:
        if tok[0] != "boundary" or len(tok) != 4:
            raise ParseError("expected 'boundary <v0> <v1> <label>'", line)
        try:
            a, b = int(tok[1]), int(tok[2])
        except ValueError:
            raise ParseError("boundary vertex indices must be integers", line)
        labels[(min(a, b), max(a, b))] = tok[3]
    try:
        return build_mesh(verts, cells, boundary_labels=labels)
    except MeshError as exc:
        raise ParseError(str(exc)) from exc
