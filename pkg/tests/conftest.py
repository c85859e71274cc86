import numpy as np
import pytest

from testalloc.model import Category, ExposureMatrix, Scenario, Strategy


def make_scenario(sizes, ps, d, pi, budget, menu, vs=None, max_group=None):
    k = len(sizes)
    vs = vs or [1.0] * k
    return Scenario(
        categories=tuple(
            Category(f"c{i}", sizes[i], ps[i], vs[i]) for i in range(k)
        ),
        exposure=ExposureMatrix(d=tuple(map(tuple, d)), pi=tuple(map(tuple, pi))),
        budget=budget,
        max_group=max_group or max(menu),
        group_menu=tuple(menu),
    )


def random_scenario(rng, k_max=3, t_max=8, n_max=40, integral_d=False):
    """Small random instance for property tests and oracle comparisons."""
    k = int(rng.integers(1, k_max + 1))
    sizes = [int(rng.integers(5, n_max)) for _ in range(k)]
    ps = [float(rng.uniform(0.01, 0.4)) for _ in range(k)]
    vs = [float(rng.uniform(0.2, 1.0)) for _ in range(k)]
    if integral_d:
        d = rng.integers(0, 4, size=(k, k)).astype(float)
    else:
        d = rng.uniform(0, 4, size=(k, k))
    pi = rng.uniform(0, 0.6, size=(k, k))
    menu = sorted(rng.choice([1, 2, 3, 5], size=int(rng.integers(1, 4)), replace=False).tolist())
    budget = int(rng.integers(1, t_max))
    return make_scenario(sizes, ps, d, pi, budget, menu, vs=vs)


def random_feasible_strategy(rng, scenario):
    """Draw a feasible strategy by rejection over random coverage splits."""
    k = scenario.k
    menu = list(scenario.group_menu)
    for _ in range(500):
        g = [int(rng.choice(menu)) for _ in range(k)]
        caps = [c.n // gi for c, gi in zip(scenario.categories, g)]
        if sum(caps) < scenario.budget:
            continue
        t = [0] * k
        remaining = scenario.budget
        order = rng.permutation(k)
        for idx in order[:-1]:
            t[idx] = int(rng.integers(0, min(caps[idx], remaining) + 1))
            remaining -= t[idx]
        last = int(order[-1])
        if remaining <= caps[last]:
            t[last] = remaining
            return Strategy.canonical(t, g)
    return None


@pytest.fixture
def simple_scenario():
    """The worked single-category example: n=100, p=0.1, d=2, pi=0.5."""
    return make_scenario(
        sizes=[100], ps=[0.1], d=[[2.0]], pi=[[0.5]], budget=10, menu=[1, 5]
    )


@pytest.fixture
def two_cat_scenario():
    return make_scenario(
        sizes=[60, 30],
        ps=[0.1, 0.05],
        d=[[2.0, 1.0], [2.0, 1.0]],
        pi=[[0.3, 0.2], [0.2, 0.1]],
        budget=6,
        menu=[1, 3, 5],
    )


@pytest.fixture
def pilot_scenario():
    """4-category campus instance sized so the feasible count sits in the
    low thousands; used by the pruning and bucketing acceptance checks."""
    return make_scenario(
        sizes=[11, 9, 9, 11],
        ps=[0.12, 0.06, 0.08, 0.10],
        d=[
            (1.5, 0.8, 6.0, 9.0),
            (1.2, 2.0, 1.0, 2.0),
            (1.3, 0.1, 8.0, 2.0),
            (1.1, 0.15, 1.2, 10.0),
        ],
        pi=np.full((4, 4), 0.05),
        budget=9,
        menu=[1, 3, 5, 10],
    )
