import numpy as np
import pytest

from herofilter.graph import Graph


def make_graph(n, edges, labels=None, d=2, seed=0, splits=None):
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=int) if labels is None else labels
    return Graph(n, np.asarray(edges, dtype=int).reshape(-1, 2), rng.standard_normal((n, d)), labels,
                 splits or {})


def random_graph(n, p_edge, seed, num_classes=2, d=3):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(iu.size) < p_edge
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    labels = rng.integers(0, num_classes, n)
    perm = rng.permutation(n)
    a, b = n // 2, (3 * n) // 4
    splits = {"train": perm[:a], "val": perm[a:b], "test": perm[b:]}
    return Graph(n, edges, rng.standard_normal((n, d)), labels, splits, num_classes)


@pytest.fixture
def triangle():
    return make_graph(3, [(0, 1), (1, 2), (0, 2)], labels=[0, 0, 1])


@pytest.fixture
def path3():
    return make_graph(3, [(0, 1), (1, 2)])


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
