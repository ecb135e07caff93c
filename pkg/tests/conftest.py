import numpy as np
import pytest

from mappro.graph import laplacian, path_graph, random_connected_graph
from mappro.problems import generate_benchmark_data, logistic_nonconvex, pl_quadratic

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def benchmark():
    """The 20-node logistic benchmark on a 26-edge random graph."""
    net = random_connected_graph(20, 26, 0)
    return logistic_nonconvex(generate_benchmark_data(seed=0)), laplacian(net)


@pytest.fixture(scope="session")
def pl_instance():
    net = random_connected_graph(10, 15, 0)
    return pl_quadratic(10, 4, 3, seed=0), laplacian(net)


@pytest.fixture
def p3():
    return laplacian(path_graph(3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
