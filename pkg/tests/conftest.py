import numpy as np
import pytest

from mpcontrast.graph import AugmentationGraph
from mpcontrast.oracle import random_graph


def swap_graph(mode="degree"):
    return AugmentationGraph(np.array([[0.0, 1.0], [1.0, 0.0]]), weight_mode=mode)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["degree", "uniform"])
def mode(request):
    return request.param


@pytest.fixture
def instance(rng, mode):
    g = random_graph(12, rng, weight_mode=mode)
    return g, rng.uniform(-1, 1, (12, 3))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
