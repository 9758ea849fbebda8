"""Pressure-robust divergence-free virtual elements for the 2D Oseen problem."""

from .mesh import PolygonalMesh, build_mesh, generate_square_grid, generate_voronoi

__version__ = "0.1.0"

__all__ = ["PolygonalMesh", "build_mesh", "generate_square_grid", "generate_voronoi"]
