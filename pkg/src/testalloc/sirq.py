"""Discrete-time network SIRQ simulator.

Serves as the dynamic oracle for the analytic allocation model: strategies
are replayed week after week on an explicit contact network and their
quarantine footprints compared over sustained outbreaks.

Daily order of events: pooled testing (on test days), transmission along
non-quarantined edges, recovery. Counts are recorded after recovery.
Quarantined nodes neither transmit nor receive and are released exactly
after quarantine_days; infected nodes keep recovering while quarantined.
Recovered nodes stay in the sampling pool (tests cannot tell them apart)
but are never re-infected.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import Scenario, Strategy, feasibility_violation

__all__ = [
    "SimConfig",
    "ContactNetwork",
    "SimRun",
    "NetworkConsistencyError",
    "generate_network",
    "run",
    "compare_profiles",
    "estimate_r0",
    "sim_runs_to_csv",
]

S, I, R = 0, 1, 2


class NetworkConsistencyError(Exception):
    """d is too asymmetric for an undirected graph: n_i d_ij and n_j d_ji
    disagree beyond tolerance."""


@dataclass(frozen=True)
class SimConfig:
    scenario: Scenario
    beta: float
    gamma: float
    quarantine_days: int = 14
    test_period_days: int = 7
    horizon_days: int = 80
    initial_infected: tuple[int, ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0 or not 0.0 <= self.gamma <= 1.0:
            raise ValueError("beta and gamma must be probabilities")
        if self.quarantine_days < 1 or self.test_period_days < 1 or self.horizon_days < 1:
            raise ValueError("day counts must be >= 1")
        init = self.initial_infected or tuple(0 for _ in self.scenario.categories)
        if len(init) != self.scenario.k:
            raise ValueError("initial_infected length must equal k")
        for c, x in zip(self.scenario.categories, init):
            if x < 0 or x > c.n:
                raise ValueError(f"initial infected for {c.id!r} out of range")
        object.__setattr__(self, "initial_infected", tuple(int(x) for x in init))


@dataclass
class ContactNetwork:
    """Undirected simple graph in CSR form; node_category maps node index
    to category index, nodes of one category are contiguous."""

    indptr: np.ndarray
    indices: np.ndarray
    node_category: np.ndarray
    category_slices: list[slice]

    @property
    def n_nodes(self) -> int:
        return len(self.node_category)

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def block_mean_degrees(self) -> np.ndarray:
        """Realized mean number of category-j neighbours per category-i node."""
        k = len(self.category_slices)
        out = np.zeros((k, k))
        if len(self.indices) == 0:
            return out
        deg_by_cat = np.zeros((self.n_nodes, k))
        for v in range(k):
            sl = self.category_slices[v]
            lo, hi = sl.start, sl.stop
            counts = np.add.reduceat(
                ((self.indices >= lo) & (self.indices < hi)).astype(np.int64),
                self.indptr[:-1],
            )
            counts[self.indptr[:-1] == self.indptr[1:]] = 0
            deg_by_cat[:, v] = counts
        for u in range(k):
            sl = self.category_slices[u]
            out[u] = deg_by_cat[sl].mean(axis=0)
        return out


def _block_edges(rng, n_i, n_j, prob, off_i, off_j, same):
    """Sample Bernoulli(prob) edges for one block pair, uniform without
    replacement over distinct pairs."""
    if prob <= 0:
        return np.empty((0, 2), dtype=np.int64)
    prob = min(prob, 1.0)
    n_pairs = n_i * (n_i - 1) // 2 if same else n_i * n_j
    if n_pairs == 0:
        return np.empty((0, 2), dtype=np.int64)
    m = rng.binomial(n_pairs, prob)
    chosen: set[int] = set()
    need = m
    while need > 0:
        draw = rng.integers(0, n_pairs, size=int(need * 1.1) + 8)
        for x in draw:
            if len(chosen) == m:
                break
            chosen.add(int(x))
        need = m - len(chosen)
    flat = np.fromiter(chosen, dtype=np.int64, count=m)
    if same:
        # decode upper-triangular pair index
        b = np.floor((1 + np.sqrt(8 * flat.astype(np.float64) + 1)) / 2).astype(np.int64)
        # fix boundary rounding
        tri = b * (b - 1) // 2
        b -= tri > flat
        tri = b * (b - 1) // 2
        a = flat - tri
        u, v = a + off_i, b + off_i
    else:
        u = flat // n_j + off_i
        v = flat % n_j + off_j
    return np.column_stack([u, v])


def generate_network(
    scenario: Scenario,
    d: np.ndarray | None = None,
    seed: int = 0,
    consistency_tol: float = 0.10,
) -> ContactNetwork:
    """Random block-structured graph whose expected count of category-j
    neighbours per category-i node is d_ij.

    Undirected edges force n_i d_ij = n_j d_ji; blocks violating that by
    more than consistency_tol are rejected. Cross-block edge probabilities
    use the symmetrized endpoint count.
    """
    d = scenario.d_arr if d is None else np.asarray(d, dtype=np.float64)
    k = scenario.k
    n = np.array([c.n for c in scenario.categories])
    for i in range(k):
        for j in range(i + 1, k):
            a, b = n[i] * d[i, j], n[j] * d[j, i]
            if max(a, b) > 0 and abs(a - b) / max(a, b) > consistency_tol:
                raise NetworkConsistencyError(
                    f"block ({scenario.categories[i].id}, {scenario.categories[j].id}): "
                    f"n_i*d_ij = {a:.1f} vs n_j*d_ji = {b:.1f}"
                )
    offsets = np.concatenate([[0], np.cumsum(n)])
    rng = np.random.default_rng(seed)
    edges = []
    for i in range(k):
        if n[i] > 1 and d[i, i] > 0:
            edges.append(
                _block_edges(rng, n[i], n[i], d[i, i] / (n[i] - 1), offsets[i], offsets[i], True)
            )
        for j in range(i + 1, k):
            endpoints = (n[i] * d[i, j] + n[j] * d[j, i]) / 2.0
            prob = endpoints / (n[i] * n[j])
            edges.append(_block_edges(rng, n[i], n[j], prob, offsets[i], offsets[j], False))
    all_edges = (
        np.concatenate(edges) if edges else np.empty((0, 2), dtype=np.int64)
    )
    total = int(offsets[-1])
    src = np.concatenate([all_edges[:, 0], all_edges[:, 1]])
    dst = np.concatenate([all_edges[:, 1], all_edges[:, 0]])
    order = np.argsort(src, kind="stable")
    src, dst = src[order], dst[order]
    indptr = np.zeros(total + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)
    node_category = np.concatenate([np.full(n[i], i, dtype=np.int32) for i in range(k)])
    slices = [slice(int(offsets[i]), int(offsets[i + 1])) for i in range(k)]
    return ContactNetwork(
        indptr=indptr,
        indices=dst.astype(np.int64),
        node_category=node_category,
        category_slices=slices,
    )


@dataclass
class SimRun:
    """Per-day, per-category compartment counts plus quarantine occupancy
    and the realized secondary-infection counts of the initially infected."""

    label: str
    replicate: int
    days: np.ndarray  # (horizon+1,)
    susceptible: np.ndarray  # (horizon+1, k)
    infected: np.ndarray
    recovered: np.ndarray
    quarantined: np.ndarray
    index_secondary: np.ndarray  # per initial case
    category_ids: list[str] = field(default_factory=list)


def _spread_once(rng, net: ContactNetwork, status, q_left, beta):
    """One transmission step. Returns (new_infected nodes, source per new)."""
    active = np.nonzero((status == I) & (q_left == 0))[0]
    if len(active) == 0 or beta <= 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    counts = net.indptr[active + 1] - net.indptr[active]
    targets = np.concatenate(
        [net.indices[net.indptr[u] : net.indptr[u + 1]] for u in active]
    ) if counts.sum() else np.empty(0, dtype=np.int64)
    sources = np.repeat(active, counts)
    ok = (status[targets] == S) & (q_left[targets] == 0)
    targets, sources = targets[ok], sources[ok]
    hit = rng.random(len(targets)) < beta
    targets, sources = targets[hit], sources[hit]
    if len(targets) == 0:
        return targets, sources
    # collisions: several infectors can hit one target the same day; the
    # first listed attempt wins
    uniq, first = np.unique(targets, return_index=True)
    return uniq, sources[first]


def run(sim: SimConfig, strategy: Strategy, replicate: int = 0, label: str = "") -> SimRun:
    """Simulate one outbreak under a testing strategy.

    Deterministic given (sim, strategy, replicate): the network and initial
    infections derive from (rng_seed, replicate) and the daily stream is
    shared by all strategies, giving common random numbers for comparisons.
    """
    scenario = sim.scenario
    violation = feasibility_violation(scenario, strategy)
    if violation is not None:
        raise ValueError(f"infeasible strategy: {violation}")
    seq = np.random.SeedSequence((sim.rng_seed, replicate))
    net_seed, init_seed, day_seed = seq.spawn(3)
    net = generate_network(scenario, seed=net_seed)
    rng_init = np.random.default_rng(init_seed)
    rng_day = np.random.default_rng(day_seed)

    n_nodes = net.n_nodes
    k = scenario.k
    status = np.full(n_nodes, S, dtype=np.int8)
    q_left = np.zeros(n_nodes, dtype=np.int16)
    index_cases = []
    for i, count in enumerate(sim.initial_infected):
        members = np.arange(net.category_slices[i].start, net.category_slices[i].stop)
        chosen = rng_init.choice(members, size=count, replace=False)
        status[chosen] = I
        index_cases.append(chosen)
    index_cases = np.concatenate(index_cases) if index_cases else np.empty(0, dtype=np.int64)
    secondary = np.zeros(n_nodes, dtype=np.int64)

    horizon = sim.horizon_days
    days = np.arange(horizon + 1)
    comp = {c: np.zeros((horizon + 1, k), dtype=np.int64) for c in "SIRQ"}

    def record(day):
        for ci in range(k):
            sl = net.category_slices[ci]
            st = status[sl]
            comp["S"][day, ci] = int((st == S).sum())
            comp["I"][day, ci] = int((st == I).sum())
            comp["R"][day, ci] = int((st == R).sum())
            comp["Q"][day, ci] = int((q_left[sl] > 0).sum())

    record(0)
    for day in range(1, horizon + 1):
        if (day - 1) % sim.test_period_days == 0:
            for ci in range(k):
                t_i, g_i = strategy.t[ci], strategy.g[ci]
                if t_i == 0:
                    continue
                sl = net.category_slices[ci]
                pool = np.arange(sl.start, sl.stop)[q_left[sl] == 0]
                n_groups = min(t_i, len(pool) // g_i)
                if n_groups == 0:
                    continue
                picked = rng_day.permutation(pool)[: n_groups * g_i]
                groups = picked.reshape(n_groups, g_i)
                positive = (status[groups] == I).any(axis=1)
                flagged = groups[positive].ravel()
                q_left[flagged] = sim.quarantine_days
        infectious_before = status == I
        new_nodes, new_sources = _spread_once(rng_day, net, status, q_left, sim.beta)
        if len(new_nodes):
            status[new_nodes] = I
            np.add.at(secondary, new_sources, 1)
        if sim.gamma > 0:
            candidates = np.nonzero(infectious_before)[0]
            recovering = candidates[rng_day.random(len(candidates)) < sim.gamma]
            status[recovering] = R
        record(day)
        q_left[q_left > 0] -= 1

    return SimRun(
        label=label,
        replicate=replicate,
        days=days,
        susceptible=comp["S"],
        infected=comp["I"],
        recovered=comp["R"],
        quarantined=comp["Q"],
        index_secondary=secondary[index_cases],
        category_ids=[c.id for c in scenario.categories],
    )


def compare_profiles(
    sim: SimConfig, strategies: list[tuple[str, Strategy]], replicates: int = 30
) -> dict[str, list[SimRun]]:
    """Run each labeled strategy over matched replicate seeds (common
    network, initial infections and daily randomness) so differences come
    from the strategies alone."""
    out: dict[str, list[SimRun]] = {}
    for label, strategy in strategies:
        out[label] = [
            run(sim, strategy, replicate=r, label=label) for r in range(replicates)
        ]
    return out


def mean_quarantined(runs: list[SimRun]) -> np.ndarray:
    """Mean per-day, per-category quarantine occupancy across replicates."""
    return np.mean([r.quarantined for r in runs], axis=0)


def estimate_r0(
    scenario: Scenario,
    beta: float,
    gamma: float,
    trials: int = 2000,
    seed: int = 0,
    networks: int = 5,
) -> tuple[float, float]:
    """Empirical R0: mean secondary infections of single index cases in an
    otherwise susceptible, untested population.

    Index cases are sampled with probability proportional to their contact
    count, matching how infections are imported through contact in an early
    outbreak. Returns (mean, standard error).
    """
    if gamma <= 0:
        raise ValueError("gamma must be > 0 for a finite infectious period")
    rng = np.random.default_rng(seed)
    counts = np.empty(trials, dtype=np.int64)
    per_net = -(-trials // networks)
    done = 0
    for b in range(networks):
        net = generate_network(scenario, seed=rng.integers(2**63))
        deg = net.degree().astype(np.float64)
        if deg.sum() == 0:
            raise ValueError("network has no edges; R0 undefined")
        weights = deg / deg.sum()
        todo = min(per_net, trials - done)
        seeds = rng.choice(net.n_nodes, size=todo, p=weights)
        for s_node in seeds:
            neigh = net.indices[net.indptr[s_node] : net.indptr[s_node + 1]]
            susceptible = np.ones(len(neigh), dtype=bool)
            infected_total = 0
            while True:
                hit = susceptible & (rng.random(len(neigh)) < beta)
                infected_total += int(hit.sum())
                susceptible &= ~hit
                if rng.random() < gamma:
                    break
            counts[done] = infected_total
            done += 1
    mean = float(counts.mean())
    se = float(counts.std(ddof=1) / np.sqrt(trials))
    return mean, se


def sim_runs_to_csv(runs: list[SimRun], out) -> None:
    """Write day, category_id, S, I, R, Q, strategy_label, replicate rows."""
    writer = csv.writer(out)
    writer.writerow(["day", "category_id", "S", "I", "R", "Q", "strategy_label", "replicate"])
    for r in runs:
        for day in r.days:
            for ci, cid in enumerate(r.category_ids):
                writer.writerow(
                    [
                        int(day),
                        cid,
                        int(r.susceptible[day, ci]),
                        int(r.infected[day, ci]),
                        int(r.recovered[day, ci]),
                        int(r.quarantined[day, ci]),
                        r.label,
                        r.replicate,
                    ]
                )
