import numpy as np
import pytest

from eigopt.mesh import build_flat_torus_mesh, build_sphere_mesh

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def sphere3():
    return build_sphere_mesh(2, 3)


@pytest.fixture(scope="session")
def sphere2():
    return build_sphere_mesh(2, 2)


@pytest.fixture(scope="session")
def torus6():
    return build_flat_torus_mesh(2, 6)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
