"""Field export: legacy ASCII VTK polygon files and CSV dumps."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .mesh import PolygonalMesh


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def write_vtk(
    path,
    mesh: PolygonalMesh,
    cell_data: Mapping[str, np.ndarray] | None = None,
    point_data: Mapping[str, np.ndarray] | None = None,
    title: str = "oseen_vem field export",
) -> None:
    """Write a POLYDATA file; 2-component arrays are padded to 3D vectors."""
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA"]
    lines.append(f"POINTS {mesh.n_vertices} double")
    lines += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.vertices]
    size = sum(len(c) + 1 for c in mesh.cells)
    lines.append(f"POLYGONS {mesh.n_cells} {size}")
    lines += [" ".join(str(i) for i in (len(c), *c)) for c in mesh.cells]
    for header, data, n in (("CELL_DATA", cell_data, mesh.n_cells), ("POINT_DATA", point_data, mesh.n_vertices)):
        if not data:
            continue
        lines.append(f"{header} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines += [_fmt(v) for v in arr]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{_fmt(a)} {_fmt(b)} 0" for a, b in arr[:, :2]]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk_arrays(path) -> dict[str, np.ndarray]:
    """Parse the data arrays written by :func:`write_vtk` (for regression checks)."""
    tokens = Path(path).read_text().splitlines()
    out: dict[str, np.ndarray] = {}
    i = 0
    n_current = 0
    while i < len(tokens):
        parts = tokens[i].split()
        if parts and parts[0] in ("CELL_DATA", "POINT_DATA"):
            n_current = int(parts[1])
        elif parts and parts[0] == "SCALARS":
            vals = [float(t) for t in tokens[i + 2 : i + 2 + n_current]]
            out[parts[1]] = np.array(vals)
            i += 1 + n_current
        elif parts and parts[0] == "VECTORS":
            rows = [list(map(float, t.split()[:2])) for t in tokens[i + 1 : i + 1 + n_current]]
            out[parts[1]] = np.array(rows)
            i += n_current
        i += 1
    return out


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])


def write_dof_csv(path, values: np.ndarray, name: str = "value") -> None:
    write_csv(path, ("index", name), ((i, float(v)) for i, v in enumerate(values)))
