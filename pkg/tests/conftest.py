import numpy as np
import pytest

from fracrb import FractionalProblem, SincGrid, assemble, build_interval_mesh, build_square_mesh

# (criterion, passed, detail) collected by test_acceptance.py
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def sys8():
    return assemble(build_interval_mesh(2.0**-8))


@pytest.fixture(scope="session")
def sys6():
    return assemble(build_interval_mesh(2.0**-6))


@pytest.fixture(scope="session")
def sys_square():
    return assemble(build_square_mesh(0.25))


@pytest.fixture(scope="session")
def grid():
    return SincGrid.universal(0.1, 0.9, 0.5)


@pytest.fixture(scope="session")
def eig8(sys8):
    from fracrb import generalized_eigen

    return generalized_eigen(sys8)


@pytest.fixture
def prob8(sys8, grid):
    return FractionalProblem(sys8, grid, cache_factorizations=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20201017)
