import numpy as np
import pytest

from patchsync.graph import SparseGraph

ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {c}: {detail}")


def two_cliques(size=10):
    src, dst = [], []
    for off in (0, size):
        for a in range(size):
            for b in range(a + 1, size):
                src.append(off + a)
                dst.append(off + b)
    src.append(size - 1)
    dst.append(size)
    return SparseGraph.from_edges(src, dst)


def cycle(n):
    return SparseGraph.from_edges(np.arange(n), (np.arange(n) + 1) % n)


def random_connected_edges(p, extra, rng):
    """Random spanning tree on ``p`` vertices plus ``extra`` random edges."""
    order = rng.permutation(p)
    edges = [(int(order[i]), int(order[rng.integers(i)])) for i in range(1, p)]
    for _ in range(extra):
        a, b = rng.choice(p, 2, replace=False)
        edges.append((int(a), int(b)))
    e = np.sort(np.asarray(edges), axis=1)
    return np.unique(e, axis=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
