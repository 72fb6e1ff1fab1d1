import numpy as np
import pytest

from advcali.graph import Graph


def fd_grad(f, x, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if np.size(a) else 0.0


def random_graph(n, p, seed):
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    return Graph.from_edges(n, iu[0][keep], iu[1][keep])


@pytest.fixture
def triangle():
    return Graph.from_edges(3, [0, 1, 2], [1, 2, 0])


@pytest.fixture
def star8():
    return Graph.from_edges(8, [0] * 7, list(range(1, 8)))
