import functools

import numpy as np
import pytest

from oseen_vem.mesh import generate_voronoi

ACCEPTANCE_LINES: list[str] = []


@functools.lru_cache(maxsize=None)
def voronoi_mesh(n_seeds: int, lloyd: int = 100, seed: int = 0):
    """Meshes are immutable, so one instance per parameter set serves the whole session."""
    return generate_voronoi(n_seeds, lloyd, seed)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
