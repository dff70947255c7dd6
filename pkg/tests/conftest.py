import numpy as np
import pytest

from ptconv.mesh import SurfaceSpec, generate_surface, icosphere


def flat_grid(n, extent=1.0):
    return generate_surface(SurfaceSpec("flat", {}, (n, n), extent))


def bump_grid(n, extent=1.0, height=0.3):
    return generate_surface(SurfaceSpec("gaussian_bump", {"height": height}, (n, n), extent))


def random_surface(seed, n=10, extent=1.0):
    """Small wavy graph surface (n x n vertices)."""
    rng = np.random.default_rng(seed)
    spec = SurfaceSpec(
        "wave",
        {"amplitude": float(rng.uniform(0.05, 0.2)), "freq_u": 1.0, "freq_v": float(rng.uniform(0.5, 1.5))},
        (n, n),
        extent,
    )
    return generate_surface(spec)


@pytest.fixture(scope="session")
def flat16():
    return flat_grid(16)


@pytest.fixture(scope="session")
def flat64():
    return flat_grid(64)


@pytest.fixture(scope="session")
def bump20():
    return bump_grid(20)


@pytest.fixture(scope="session")
def sphere3():
    return icosphere(3)


@pytest.fixture(scope="session")
def sphere5():
    return icosphere(5)


def dijkstra(mesh, sources):
    """Edge-graph shortest paths (an upper bound for surface geodesics)."""
    from scipy.sparse.csgraph import dijkstra as _dij

    return _dij(mesh.adjacency, directed=False, indices=np.atleast_1d(sources), min_only=True)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
