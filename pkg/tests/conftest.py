import numpy as np
import pytest

from perseus.attacks import heterophily_attack, sbm_generate
from perseus.graph import Graph


def star(leaves=3, d_f=2):
    return Graph(leaves + 1, [(0, i) for i in range(1, leaves + 1)], np.ones((leaves + 1, d_f)))


def ring(n=6, d_f=2):
    return Graph(n, [(i, (i + 1) % n) for i in range(n)], np.ones((n, d_f)))


def random_graph(rng, n, p=0.2, d_f=8, density=0.4, classes=None):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    X = (rng.random((n, d_f)) < density).astype(float)
    y = rng.integers(0, classes, size=n) if classes else None
    return Graph(n, np.argwhere(upper), X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def attacked_sbm():
    g = sbm_generate(200, 2, 0.1, 0.01, 10, 0.05, seed=3)
    ga, record = heterophily_attack(g, 0.2, seed=3)
    return g, ga, record
