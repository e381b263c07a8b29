import numpy as np
import pytest

from cso.mesh import EllipsoidSpec, TetMesh, generate_ellipsoid_mesh


@pytest.fixture
def ref_tet():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    return TetMesh(v, np.array([[0, 1, 2, 3]]))


@pytest.fixture
def two_tets():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
    return TetMesh(v, np.array([[0, 1, 2, 3], [1, 4, 2, 3]]))


@pytest.fixture(scope="session")
def ball1():
    return generate_ellipsoid_mesh(EllipsoidSpec(1.0, 1.0, 1))


@pytest.fixture(scope="session")
def ball2():
    return generate_ellipsoid_mesh(EllipsoidSpec(1.0, 1.0, 2))


@pytest.fixture(scope="session")
def ball3():
    return generate_ellipsoid_mesh(EllipsoidSpec(1.0, 1.0, 3))


def pyramid_points():
    z = np.array([0.0, 0.0, 1.0])
    ring = np.array([[1.0, 1, 0], [-1, 1, 0], [-1, -1, 0], [1, -1, 0]])
    return z, ring


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
