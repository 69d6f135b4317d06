import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "deterministic",
    derandomize=True,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
    deadline=None,
)
settings.load_profile("deterministic")


def random_graph(n: int, num_edges: int, seed: int):
    """Simple Erdos-Renyi-ish fixture graph with exactly min(num_edges, possible) edges."""
    from hopf import build_graph

    rng = np.random.default_rng(seed)
    edges = set()
    limit = n * (n - 1) // 2
    target = min(num_edges, limit)
    while len(edges) < target:
        u, v = rng.integers(n, size=2)
        if u != v:
            edges.add((min(u, v), max(u, v)))
    return build_graph(sorted(edges), n)


@pytest.fixture
def triangle():
    from hopf import build_graph

    return build_graph([(0, 1), (1, 2), (0, 2)], 3)


@pytest.fixture
def chain6():
    from hopf import build_graph

    return build_graph([(i, i + 1) for i in range(5)], 6)


@pytest.fixture
def star6():
    """Center 0, leaves 1..5."""
    from hopf import build_graph

    return build_graph([(0, i) for i in range(1, 6)], 6)
