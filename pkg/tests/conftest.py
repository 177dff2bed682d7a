import numpy as np
import pytest

from graphgda.graph import Graph


def random_graph(rng, n, d=3, p=0.4, weighted=False, marginal=None, labels=None):
    A = np.triu((rng.random((n, n)) < p).astype(float), 1)
    if weighted:
        A *= rng.random((n, n))
    A = A + A.T
    return Graph(A, rng.standard_normal((n, d)), marginal, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
