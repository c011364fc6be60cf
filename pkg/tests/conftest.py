import numpy as np
import pytest

from trigfn.graphio import Graph

ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_graph(rng, n, d0, p=0.4, k=2):
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    edges = np.stack([iu[0][keep], iu[1][keep]], axis=1)
    return Graph(features=rng.normal(size=(n, d0)), edges=edges, n_clusters=k)


def two_node_graph(x=None):
    x = np.eye(2) if x is None else x
    return Graph(features=x, edges=np.array([[0, 1]]), n_clusters=2)


def smooth_gradient_check(make, attempts=50, margin=1e-3, **kw):
    """Gradient-check ``fn(params)`` from ``make(rng) -> (fn, params)`` at a point away from kinks."""
    from trigfn import numcore as nc

    for seed in range(attempts):
        fn, params = make(np.random.default_rng(seed))
        tape = nc.Tape()
        fn({k: tape.param(v) for k, v in params.items()})
        if nc.kink_distance(tape) > margin:
            return nc.check_function_gradients(fn, params, **kw)
    raise AssertionError("no smooth instance found")
