"""Independent oracles used by the test suite.

These deliberately avoid the closed forms in testalloc.model: testing is
simulated by drawing group compositions, contagion by drawing per-contact
infection counts, and frontiers by O(m^2) all-pairs filtering. Each oracle
returns (estimate, standard_error) where applicable so tests can assert
closed forms within 3 standard errors.
"""
from __future__ import annotations

import itertools

import numpy as np

from testalloc.model import Scenario, Strategy, is_feasible


def quarantine_mc(p: float, t: int, g: int, draws: int, rng) -> tuple[float, float]:
    """Expected unnecessary quarantines from t pooled tests of size g.

    Simulates single groups: members are i.i.d. infected with prob p, a
    positive pool quarantines its healthy members. Linearity gives the
    t-test total from the per-group mean.
    """
    infected = rng.binomial(g, p, size=draws)
    healthy_in_positive = np.where(infected > 0, g - infected, 0)
    mean = healthy_in_positive.mean()
    se = healthy_in_positive.std(ddof=1) / np.sqrt(draws)
    return t * float(mean), t * float(se)


def healthy_free_mc(n: int, p: float, t: int, g: int, draws: int, rng) -> tuple[float, float]:
    """Probability a random individual is healthy and not quarantined after
    testing: simulate whole populations and count."""
    q = 1.0 - p
    untested = n - t * g
    free_healthy = rng.binomial(untested, q, size=draws).astype(np.float64)
    if t > 0:
        group_infected = rng.binomial(g, p, size=(draws, t))
        free_healthy += g * (group_infected == 0).sum(axis=1)
    frac = free_healthy / n
    return float(frac.mean()), float(frac.std(ddof=1) / np.sqrt(draws))


def escape_mc(p: float, u: float, pi: float, d: int, draws: int, rng) -> tuple[float, float]:
    """Probability of avoiding infection from one source category: draw the
    number of infected untested contacts, then per-contact escapes."""
    if d == 0:
        return 1.0, 0.0
    ell = rng.binomial(d, p * u, size=draws)
    contact_escapes = rng.random((draws, d)) < (1.0 - pi)
    # the first ell columns are the infected contacts (exchangeable)
    mask = np.arange(d)[None, :] < ell[:, None]
    escaped = (contact_escapes | ~mask).all(axis=1)
    vals = escaped.astype(np.float64)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(draws))


def contagion_mc(
    scenario: Scenario,
    strategy: Strategy | None,
    trials: int,
    rng,
    chunk: int = 50_000,
) -> tuple[float, float]:
    """One-step contagion Monte Carlo for the expected number of critical
    infections. Requires integral d entries.

    Per trial and category: simulate the testing phase by drawing the
    healthy-untested count and per-group infected counts; each healthy free
    individual then draws its infected-contact counts per source category
    and per-contact transmission, turning critical with probability v_i.
    """
    k = scenario.k
    n = [c.n for c in scenario.categories]
    p = [c.p for c in scenario.categories]
    q = [c.q for c in scenario.categories]
    v = [c.v for c in scenario.categories]
    d = np.asarray(scenario.d_arr)
    if not np.all(d == np.round(d)):
        raise ValueError("contagion_mc needs integral d")
    d = d.astype(np.int64)
    pi = np.asarray(scenario.pi_arr)
    if strategy is None:
        t = [0] * k
        g = [1] * k
    else:
        t, g = list(strategy.t), list(strategy.g)
    u = [(n[j] - t[j] * g[j]) / n[j] for j in range(k)]

    # escape lookup tables: (1 - pi_ij)^ell for ell = 0..d_ij
    tables = [[np.power(1.0 - pi[i, j], np.arange(d[i, j] + 1)) for j in range(k)] for i in range(k)]

    totals = np.empty(trials, dtype=np.float64)
    done = 0
    while done < trials:
        b = min(chunk, trials - done)
        per_trial = np.zeros(b, dtype=np.float64)
        for i in range(k):
            untested = n[i] - t[i] * g[i]
            m = rng.binomial(untested, q[i], size=b)
            if t[i] > 0:
                gi = rng.binomial(g[i], p[i], size=(b, t[i]))
                m = m + g[i] * (gi == 0).sum(axis=1)
            total_free = int(m.sum())
            if total_free == 0:
                continue
            avoid = np.ones(total_free, dtype=np.float64)
            for j in range(k):
                if d[i, j] == 0:
                    continue
                ell = rng.binomial(d[i, j], p[j] * u[j], size=total_free)
                avoid *= tables[i][j][ell]
            crit = rng.random(total_free) < v[i] * (1.0 - avoid)
            offsets = np.concatenate(([0], np.cumsum(m)[:-1]))
            sums = np.add.reduceat(crit.astype(np.float64), np.minimum(offsets, total_free - 1))
            sums[m == 0] = 0.0
            per_trial += sums
        totals[done : done + b] = per_trial
        done += b
    return float(totals.mean()), float(totals.std(ddof=1) / np.sqrt(trials))


def brute_force_strategies(scenario: Scenario) -> set[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All feasible canonical strategies by exhaustive nested iteration over
    t in {0..T}^k and g in menu^k, filtered by is_feasible."""
    T, k = scenario.budget, scenario.k
    out = set()
    for g in itertools.product(scenario.group_menu, repeat=k):
        for t in itertools.product(range(T + 1), repeat=k):
            s = Strategy.canonical(t, g)
            if is_feasible(scenario, s):
                out.add((s.t, s.g))
    return out


def brute_force_nondominated(M: np.ndarray, chunk: int = 512) -> np.ndarray:
    """All-pairs dominance filter; M columns are all to be maximised."""
    m = len(M)
    dominated = np.zeros(m, dtype=bool)
    for a in range(0, m, chunk):
        C = M[a : a + chunk]
        ge = (M[None, :, :] >= C[:, None, :]).all(axis=2)
        gt = (M[None, :, :] > C[:, None, :]).any(axis=2)
        dominated[a : a + chunk] = (ge & gt).any(axis=1)
    return ~dominated
