"""Command-line front end.

Exit codes: 0 success, 2 invalid arguments or unknown problem, 3 I/O failure,
4 solver failure.  Summaries are printed as ``key=value`` pairs on stdout.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import bench
from .errors import ParseError, UnknownProblem, VemError
from .export import write_dof_csv
from .forms import CipParameters
from .mesh import PolygonalMesh, generate_square_grid, generate_voronoi, quality_report, read_mesh, write_mesh

log = logging.getLogger("oseen_vem")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_SOLVER = 0, 2, 3, 4
SUPPORTED_K = (2, 3, 4)
DEFAULT_DELTA = (0.1, 0.01, 0.01)


class UsageError(Exception):
    """Invalid combination of arguments or config values."""


# -- configuration ---------------------------------------------------------


@dataclass
class RunConfig:
    problem: str = "trig_convergence"
    k: int = 2
    meshes: list[str] = field(default_factory=lambda: ["voronoi:64"])
    delta: tuple[float, float, float] = DEFAULT_DELTA
    out: str = "out"
    threads: int = 1
    export_vtk: bool = True
    export_csv: bool = True

    def validate(self) -> "RunConfig":
        if self.k not in SUPPORTED_K:
            raise UsageError(f"k must be one of {SUPPORTED_K}, got {self.k}")
        if len(self.delta) != 3 or min(self.delta) < 0:
            raise UsageError("delta must be three nonnegative numbers")
        if self.threads < 1:
            raise UsageError("threads must be at least 1")
        if not self.meshes:
            raise UsageError("no mesh given")
        if self.problem not in bench.BUILTIN:
            raise UnknownProblem(f"unknown problem {self.problem!r}; valid names: {', '.join(sorted(bench.BUILTIN))}")
        return self

    def to_parser(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser()
        cp["run"] = {
            "problem": self.problem,
            "k": str(self.k),
            "mesh": " ".join(self.meshes),
            "delta": ",".join(repr(float(d)) for d in self.delta),
            "out": self.out,
            "threads": str(self.threads),
        }
        cp["export"] = {"vtk": str(self.export_vtk).lower(), "csv": str(self.export_csv).lower()}
        return cp

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            self.to_parser().write(fh)


def parse_delta(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(t) for t in text.split(","))
    except ValueError:
        raise UsageError(f"cannot parse delta {text!r}; expected three comma-separated numbers") from None
    if len(vals) != 3:
        raise UsageError(f"delta needs three values, got {len(vals)}")
    return vals  # type: ignore[return-value]


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise UsageError(f"{path}: {exc}") from None
    cfg = RunConfig()
    run = cp["run"] if cp.has_section("run") else {}
    try:
        cfg.problem = run.get("problem", cfg.problem)
        cfg.k = int(run.get("k", cfg.k))
        if "mesh" in run:
            cfg.meshes = run["mesh"].split()
        if "delta" in run:
            cfg.delta = parse_delta(run["delta"])
        cfg.out = run.get("out", cfg.out)
        cfg.threads = int(run.get("threads", cfg.threads))
        if cp.has_section("export"):
            cfg.export_vtk = cp["export"].getboolean("vtk", cfg.export_vtk)
            cfg.export_csv = cp["export"].getboolean("csv", cfg.export_csv)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    return cfg


def effective_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.problem is not None:
        cfg.problem = args.problem
    if args.k is not None:
        cfg.k = args.k
    if args.mesh:
        cfg.meshes = list(args.mesh)
    elif not args.config and cfg.problem == "channel":
        cfg.meshes = ["channel:400"]
    if args.delta is not None:
        cfg.delta = parse_delta(args.delta)
    if args.out is not None:
        cfg.out = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg.validate()


# -- mesh sources ----------------------------------------------------------


def load_mesh_source(spec: str) -> PolygonalMesh:
    """``grid:N``, ``voronoi:N[:lloyd[:seed]]``, ``channel:N`` or a mesh file path."""
    kind, _, rest = spec.partition(":")
    try:
        if kind == "grid" and rest:
            return generate_square_grid(int(rest))
        if kind == "voronoi" and rest:
            parts = [int(t) for t in rest.split(":")]
            n, lloyd, seed = (parts + [100, 0])[:3] if len(parts) == 1 else (parts + [0])[:3]
            return generate_voronoi(n, lloyd, seed)
        if kind == "channel" and rest:
            return bench.channel_mesh(int(rest))
    except ValueError:
        raise UsageError(f"bad mesh source {spec!r}") from None
    return read_mesh(spec)


# -- commands --------------------------------------------------------------


def _kv(**items) -> str:
    def fmt(v):
        return format(v, ".6e") if isinstance(v, float) else str(v)

    return " ".join(f"{k}={fmt(v)}" for k, v in items.items())


def cmd_mesh(args) -> int:
    if args.mesh_cmd == "gen":
        if (args.grid is None) == (args.voronoi is None):
            raise UsageError("give exactly one of --grid or --voronoi")
        if args.grid is not None:
            mesh = generate_square_grid(args.grid)
        else:
            mesh = generate_voronoi(args.voronoi, args.lloyd, args.seed)
        write_mesh(mesh, args.output)
        print(_kv(file=args.output, n_cells=mesh.n_cells, n_vertices=mesh.n_vertices, h=mesh.h))
        return EXIT_OK
    mesh = read_mesh(args.file)
    summary = quality_report(mesh).summary()
    print(_kv(n_cells=mesh.n_cells, n_vertices=mesh.n_vertices, n_edges=mesh.n_edges, **summary))
    return EXIT_OK


def _problem(cfg: RunConfig) -> bench.ProblemSpec:
    return bench.builtin_problem(cfg.problem, cip=CipParameters(*cfg.delta))


def cmd_solve(args) -> int:
    cfg = effective_config(args)
    if len(cfg.meshes) != 1:
        raise UsageError("solve takes a single mesh")
    problem = _problem(cfg)
    mesh = load_mesh_source(cfg.meshes[0])
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    sol = bench.solve_problem(problem, mesh, cfg.k, cfg.threads)
    summary = {
        "problem": cfg.problem,
        "k": cfg.k,
        "n_cells": mesh.n_cells,
        "n_unknowns": sol.stats["n_unknowns"],
        "h": mesh.h,
        "residual": sol.residual,
        "div_norm": bench.divergence_norm(sol.u, sol.system),
    }
    if problem.exact is not None:
        rep = bench.compute_errors(sol, problem)
        summary.update(e_H1=rep.e_H1, e_L2=rep.e_L2, e_p=rep.e_p)
    if cfg.problem == "channel":
        inflow, outflow = -bench.boundary_flux(sol, "left"), bench.boundary_flux(sol, "right")
        summary.update(inflow=inflow, outflow=outflow, mass_balance=abs(inflow - outflow) / abs(inflow))
    if cfg.export_vtk:
        bench.export_solution(sol, out / "solution.vtk")
    if cfg.export_csv:
        write_dof_csv(out / "velocity_dofs.csv", sol.u, "u")
        write_dof_csv(out / "pressure_dofs.csv", sol.p, "p")
    cfg.dump(out / "config.ini")
    print(_kv(**summary))
    return EXIT_OK


def cmd_convergence(args) -> int:
    cfg = effective_config(args)
    if len(cfg.meshes) < 3:
        raise UsageError("a convergence study needs at least three meshes")
    problem = _problem(cfg)
    if problem.exact is None:
        raise UsageError(f"problem {cfg.problem!r} has no exact solution")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    meshes = [load_mesh_source(s) for s in cfg.meshes]
    table = bench.convergence_study(problem, cfg.k, meshes, cfg.threads)
    table.write_csv(out / "convergence.csv")
    cfg.dump(out / "config.ini")
    for rep in table.reports:
        print(_kv(h=rep.h, n_cells=rep.n_cells, e_H1=rep.e_H1, e_L2=rep.e_L2, e_p=rep.e_p))
    r1, r2, r3 = table.last_rates()
    print(_kv(rate_H1=r1, rate_L2=r2, rate_p=r3))
    return EXIT_OK


def cmd_ablation(args) -> int:
    k = args.k or 3
    if k not in SUPPORTED_K:
        raise UsageError(f"k must be one of {SUPPORTED_K}")
    out = Path(args.out or "ablation")
    out.mkdir(parents=True, exist_ok=True)
    results = bench.delta_ablation(k=k, n=args.grid, out_dir=out, threads=args.threads or 1)
    for r in results:
        print(_kv(delta=",".join(format(d, "g") for d in r.triple), M=r.interior_deviation, peak=r.peak))
    base = results[-1].interior_deviation
    if base > 0 and not math.isnan(base):
        print(_kv(ratio=results[0].interior_deviation / base))
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file with [run] and [export] sections")
    p.add_argument("--problem", help=f"one of {', '.join(sorted(bench.BUILTIN))}")
    p.add_argument("--k", type=int, help="polynomial degree (2, 3 or 4)")
    p.add_argument(
        "--mesh",
        action="append",
        help="grid:N, voronoi:N[:lloyd[:seed]], channel:N or a mesh file (repeat for studies)",
    )
    p.add_argument("--delta", help="CIP triple, e.g. 0.1,0.01,0.01")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads for element computations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oseen-vem", description="Divergence-free VEM solver for the Oseen problem")
    sub = parser.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="generate or inspect meshes")
    msub = mesh.add_subparsers(dest="mesh_cmd", required=True)
    gen = msub.add_parser("gen", help="write a structured or Voronoi mesh")
    gen.add_argument("--grid", type=int, help="n x n unit-square grid")
    gen.add_argument("--voronoi", type=int, help="number of Voronoi seeds")
    gen.add_argument("--lloyd", type=int, default=100, help="Lloyd iterations (default 100)")
    gen.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    gen.add_argument("-o", "--output", required=True, help="mesh file to write")
    info = msub.add_parser("info", help="print a quality report")
    info.add_argument("file")
    mesh.set_defaults(func=cmd_mesh)

    solve = sub.add_parser("solve", help="solve one problem on one mesh")
    _add_run_flags(solve)
    solve.set_defaults(func=cmd_solve)

    conv = sub.add_parser("convergence", help="convergence study over a mesh sequence")
    _add_run_flags(conv)
    conv.set_defaults(func=cmd_convergence)

    abl = sub.add_parser("ablation", help="CIP triple ablation on the boundary-layer problem")
    abl.add_argument("--k", type=int, default=3, help="polynomial degree (default 3)")
    abl.add_argument("--grid", type=int, default=16, help="n x n unit-square grid (default 16)")
    abl.add_argument("--out", help="directory for the per-triple VTK files (default ./ablation)")
    abl.add_argument("--threads", type=int, help="worker threads for element computations")
    abl.set_defaults(func=cmd_ablation)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("VEM_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, UnknownProblem) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except VemError as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
