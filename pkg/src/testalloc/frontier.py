"""Strategy enumeration and Pareto frontier computation.

The feasible strategy space is walked lexicographically: outer loop over
group-size assignments drawn from the scenario's menu, inner loop over
compositions of the budget with per-category coverage caps. Strategies
that differ only in the placeholder group size of an untested category are
emitted once, in canonical form (g_i = 1 where t_i = 0), and ids are the
positions in this canonical stream.

Dominance maximises health and minimises every per-category quarantine
objective. The bucketed variant rounds objective values to multiples of
per-objective bucket sizes first and keeps one seeded-random representative
per surviving bucket, so near-identical strategies collapse.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import (
    DimensionError,
    ObjectiveVector,
    Scenario,
    Strategy,
    ValidationError,
    evaluate_batch,
)

__all__ = [
    "EvaluatedStrategy",
    "BucketSpec",
    "FrontierResult",
    "InfeasibleScenarioError",
    "FeasibleCapError",
    "DEFAULT_FEASIBLE_CAP",
    "RHO_FLOOR",
    "count_strategies",
    "has_feasible_strategy",
    "enumerate_strategies",
    "dominates",
    "pareto_frontier",
    "bucketize",
    "bucketed_frontier",
    "target_count_buckets",
    "filter_by_thresholds",
    "frontier_result_to_json_dict",
    "frontier_result_from_json_dict",
]

DEFAULT_FEASIBLE_CAP = 10_000_000
RHO_FLOOR = 1e-12
_BLOCK = 4096


class InfeasibleScenarioError(Exception):
    """No strategy can exhaust the budget under the scenario's constraints."""


class FeasibleCapError(Exception):
    """The feasible strategy count exceeds the configured cap."""

    def __init__(self, count: int, cap: int):
        super().__init__(f"feasible strategy count {count} exceeds cap {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class EvaluatedStrategy:
    strategy: Strategy
    objectives: ObjectiveVector
    id: int


@dataclass(frozen=True)
class BucketSpec:
    """Bucket sizes per objective: rho_health and one rho per category
    quarantine objective. All strictly positive."""

    rho_health: float
    rho_quarantine: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "rho_quarantine", tuple(float(x) for x in self.rho_quarantine)
        )
        if self.rho_health <= 0 or any(r <= 0 for r in self.rho_quarantine):
            raise ValidationError("bucket sizes must be > 0")


@dataclass
class FrontierResult:
    solutions: list[EvaluatedStrategy]
    total_enumerated: int
    total_feasible: int
    bucket_spec: BucketSpec | None = None
    seed: int = 0
    cannot_reach_target: bool = False

    def __len__(self) -> int:
        return len(self.solutions)

    def objective_ranges(self) -> tuple[float, np.ndarray]:
        """(health range, per-category quarantine ranges) over solutions."""
        m = np.array([s.objectives.as_array() for s in self.solutions])
        spread = m.max(axis=0) - m.min(axis=0)
        return float(spread[0]), spread[1:]


# ---------------------------------------------------------------------------
# Enumeration

def _caps_for(scenario: Scenario, g_assign: tuple[int, ...]) -> list[int]:
    return [c.n // g for c, g in zip(scenario.categories, g_assign)]


def _lows_for(scenario: Scenario, g_assign: tuple[int, ...]) -> list[int]:
    # The canonical placeholder walk: t_i = 0 is only emitted under the
    # smallest menu group size, so each canonical strategy appears once.
    g_min = scenario.group_menu[0]
    return [0 if g == g_min else 1 for g in g_assign]


def _count_compositions(total: int, lows, caps) -> int:
    if total < 0:
        return 0
    ways = np.zeros(total + 1, dtype=np.int64)
    ways[0] = 1
    for lo, hi in zip(lows, caps):
        if hi < lo:
            return 0
        acc = np.concatenate(([0], np.cumsum(ways)))
        new = np.zeros_like(ways)
        for s in range(total + 1):
            a, b = s - hi, s - lo
            if b < 0:
                continue
            new[s] = acc[b + 1] - acc[max(a, 0)]
        ways = new
    return int(ways[total])


def _compositions(total: int, lows, caps):
    """Yield compositions of `total` with lows[i] <= t_i <= caps[i], in
    ascending lexicographic order."""
    k = len(lows)
    suffix_lo = [0] * (k + 1)
    suffix_hi = [0] * (k + 1)
    for i in range(k - 1, -1, -1):
        suffix_lo[i] = suffix_lo[i + 1] + lows[i]
        suffix_hi[i] = suffix_hi[i + 1] + caps[i]
    t = [0] * k

    def rec(i: int, rem: int):
        if i == k - 1:
            if lows[i] <= rem <= caps[i]:
                t[i] = rem
                yield tuple(t)
            return
        lo = max(lows[i], rem - suffix_hi[i + 1])
        hi = min(caps[i], rem - suffix_lo[i + 1])
        for x in range(lo, hi + 1):
            t[i] = x
            yield from rec(i + 1, rem - x)

    yield from rec(0, total)


def _g_assignments(scenario: Scenario):
    return itertools.product(scenario.group_menu, repeat=scenario.k)


def count_strategies(scenario: Scenario) -> tuple[int, int]:
    """(total_enumerated, total_feasible): raw (g, t) pairs walked including
    placeholder duplicates, and unique canonical feasible strategies."""
    T = scenario.budget
    raw = 0
    feasible = 0
    for g in _g_assignments(scenario):
        caps = _caps_for(scenario, g)
        raw += _count_compositions(T, [0] * scenario.k, caps)
        feasible += _count_compositions(T, _lows_for(scenario, g), caps)
    return raw, feasible


def has_feasible_strategy(scenario: Scenario) -> bool:
    g_min = scenario.group_menu[0]
    return sum(c.n // g_min for c in scenario.categories) >= scenario.budget


def enumerate_strategies(scenario: Scenario):
    """Yield every feasible strategy exactly once, canonicalized, in the
    id-defining lexicographic order. Empty iff no feasible strategy exists."""
    for g in _g_assignments(scenario):
        caps = _caps_for(scenario, g)
        lows = _lows_for(scenario, g)
        for t in _compositions(scenario.budget, lows, caps):
            yield Strategy.canonical(t, g)


def _iter_blocks(scenario: Scenario, block: int = _BLOCK):
    """Yield (id_offset, t_array, g_array) blocks in enumeration order with
    canonical g. Arrays are int32 of shape (B, k)."""
    offset = 0
    for g in _g_assignments(scenario):
        caps = _caps_for(scenario, g)
        lows = _lows_for(scenario, g)
        comps = _compositions(scenario.budget, lows, caps)
        while True:
            chunk = list(itertools.islice(comps, block))
            if not chunk:
                break
            t_arr = np.array(chunk, dtype=np.int32)
            g_arr = np.where(t_arr == 0, 1, np.array(g, dtype=np.int32))
            yield offset, t_arr, g_arr
            offset += len(chunk)


# ---------------------------------------------------------------------------
# Dominance

def dominates(a: ObjectiveVector, b: ObjectiveVector) -> bool:
    """Pareto dominance: weakly better in every objective, strictly better
    in at least one. Identical vectors do not dominate."""
    if a.k != b.k:
        raise DimensionError("objective vectors differ in k")
    if a.health < b.health:
        return False
    if any(x > y for x, y in zip(a.quarantine, b.quarantine)):
        return False
    return a.health > b.health or any(
        x < y for x, y in zip(a.quarantine, b.quarantine)
    )


def _nondominated_mask(M: np.ndarray) -> np.ndarray:
    """Boolean mask of rows of M (all columns to be maximised) that no other
    row dominates. Ties are kept. O(m log m + m * frontier)."""
    m = M.shape[0]
    if m == 0:
        return np.zeros(0, dtype=bool)
    # Descending lexicographic order: a dominating row always sorts earlier,
    # so the kept set is append-only.
    order = np.lexsort(M.T[::-1])[::-1]
    S = M[order]
    kept_rows: list[np.ndarray] = []
    kept_mask = np.zeros(m, dtype=bool)
    kept_mat = np.empty((0, M.shape[1]))
    for start in range(0, m, _BLOCK):
        C = S[start : start + _BLOCK]
        dom = np.zeros(len(C), dtype=bool)
        if len(kept_mat):
            for a in range(0, len(kept_mat), 8192):
                K = kept_mat[a : a + 8192]
                ge = (K[None, :, :] >= C[:, None, :]).all(axis=2)
                gt = (K[None, :, :] > C[:, None, :]).any(axis=2)
                dom |= (ge & gt).any(axis=1)
        # within-chunk: only earlier rows can dominate (lex order)
        ge = (C[None, :, :] >= C[:, None, :]).all(axis=2)
        gt = (C[None, :, :] > C[:, None, :]).any(axis=2)
        pair = ge & gt
        pair[np.triu_indices(len(C))] = False  # pair[i, j]: row j dominates row i, j < i
        dom |= pair.any(axis=1)
        keep = ~dom
        kept_mask[start : start + _BLOCK] = keep
        if keep.any():
            kept_rows.append(C[keep])
            kept_mat = np.concatenate(kept_rows) if len(kept_rows) > 1 else kept_rows[0]
            kept_rows = [kept_mat]
    out = np.zeros(m, dtype=bool)
    out[order] = kept_mask
    return out


def _max_form(health: np.ndarray, quarantine: np.ndarray) -> np.ndarray:
    return np.column_stack([health, -quarantine])


# ---------------------------------------------------------------------------
# Materialization

def _materialize(scenario: Scenario, max_feasible: int, progress=None):
    """Evaluate the full feasible set. Returns (t (m,k) int32, g (m,k) int32,
    health (m,), quarantine (m,k), total_enumerated, total_feasible).
    Row index == strategy id."""
    raw, feasible = count_strategies(scenario)
    if feasible == 0:
        raise InfeasibleScenarioError(
            "no feasible strategy: the budget cannot be exhausted under the group menu"
        )
    if feasible > max_feasible:
        raise FeasibleCapError(feasible, max_feasible)
    k = scenario.k
    t_all = np.empty((feasible, k), dtype=np.int32)
    g_all = np.empty((feasible, k), dtype=np.int32)
    health = np.empty(feasible, dtype=np.float64)
    quar = np.empty((feasible, k), dtype=np.float64)
    for offset, t_arr, g_arr in _iter_blocks(scenario):
        h, q = evaluate_batch(scenario, t_arr, g_arr)
        sl = slice(offset, offset + len(t_arr))
        t_all[sl] = t_arr
        g_all[sl] = g_arr
        health[sl] = h
        quar[sl] = q
        if progress is not None:
            progress((offset + len(t_arr)) / feasible)
    return t_all, g_all, health, quar, raw, feasible


def _solutions_from_rows(t_all, g_all, health, quar, ids) -> list[EvaluatedStrategy]:
    out = []
    for i in ids:
        strat = Strategy(tuple(int(x) for x in t_all[i]), tuple(int(x) for x in g_all[i]))
        obj = ObjectiveVector(float(health[i]), tuple(float(x) for x in quar[i]))
        out.append(EvaluatedStrategy(strategy=strat, objectives=obj, id=int(i)))
    return out


def pareto_frontier(
    scenario: Scenario,
    max_feasible: int = DEFAULT_FEASIBLE_CAP,
    workers: int = 1,
    progress=None,
) -> FrontierResult:
    """Exact Pareto frontier of the feasible set. The result is a set
    invariant of the scenario (independent of enumeration order)."""
    t_all, g_all, health, quar, raw, feasible = _materialize(scenario, max_feasible, progress)
    M = _max_form(health, quar)
    if workers > 1:
        # Partition, prefilter per partition, then filter the merged
        # survivors. Dominance merge is associative, so this equals the
        # sequential result.
        from concurrent.futures import ThreadPoolExecutor

        bounds = np.linspace(0, len(M), workers + 1, dtype=int)
        parts = [np.arange(bounds[i], bounds[i + 1]) for i in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            masks = list(pool.map(lambda idx: _nondominated_mask(M[idx]), parts))
        cand = np.concatenate([p[mk] for p, mk in zip(parts, masks)])
        mask = np.zeros(len(M), dtype=bool)
        mask[cand[_nondominated_mask(M[cand])]] = True
    else:
        mask = _nondominated_mask(M)
    ids = np.nonzero(mask)[0]
    return FrontierResult(
        solutions=_solutions_from_rows(t_all, g_all, health, quar, ids),
        total_enumerated=raw,
        total_feasible=feasible,
    )


# ---------------------------------------------------------------------------
# Bucketing

def _round_multiple(x: float, rho: float) -> float:
    return math.floor(x / rho + 0.5) * rho


def bucketize(v: ObjectiveVector, spec: BucketSpec) -> ObjectiveVector:
    """Round each objective to the nearest multiple of its bucket size,
    halves rounding up."""
    if len(spec.rho_quarantine) != v.k:
        raise DimensionError("bucket spec k mismatch")
    return ObjectiveVector(
        health=_round_multiple(v.health, spec.rho_health),
        quarantine=tuple(
            _round_multiple(x, r) for x, r in zip(v.quarantine, spec.rho_quarantine)
        ),
    )


def _bucket_keys(health, quar, spec: BucketSpec) -> np.ndarray:
    """Integer bucket multipliers in max form (quarantine negated)."""
    rho_q = np.array(spec.rho_quarantine)
    kh = np.floor(health / spec.rho_health + 0.5).astype(np.int64)
    kq = np.floor(quar / rho_q + 0.5).astype(np.int64)
    return np.column_stack([kh, -kq])


def _strategy_priority(seed: int, t_row, g_row) -> int:
    data = f"{tuple(int(x) for x in t_row)}|{tuple(int(x) for x in g_row)}".encode()
    h = hashlib.blake2b(data, digest_size=8, key=seed.to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def _bucketed_from_rows(t_all, g_all, health, quar, spec: BucketSpec, seed: int):
    """Surviving-bucket representative ids for pre-evaluated rows."""
    keys = _bucket_keys(health, quar, spec)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    alive = _nondominated_mask(uniq.astype(np.float64))
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(len(uniq)))
    ends = np.append(starts[1:], len(inverse))
    rep_ids = []
    for b in np.nonzero(alive)[0]:
        members = order[starts[b] : ends[b]]
        best = min(members, key=lambda i: _strategy_priority(seed, t_all[i], g_all[i]))
        rep_ids.append(int(best))
    rep_ids.sort()
    return rep_ids


def bucketed_frontier(
    scenario: Scenario,
    spec: BucketSpec,
    seed: int = 0,
    max_feasible: int = DEFAULT_FEASIBLE_CAP,
    progress=None,
) -> FrontierResult:
    """Frontier under bucketized dominance, one representative per surviving
    bucket, drawn deterministically from the seed (enumeration-order
    independent)."""
    if len(spec.rho_quarantine) != scenario.k:
        raise DimensionError("bucket spec k mismatch")
    t_all, g_all, health, quar, raw, feasible = _materialize(scenario, max_feasible, progress)
    ids = _bucketed_from_rows(t_all, g_all, health, quar, spec, seed)
    return FrontierResult(
        solutions=_solutions_from_rows(t_all, g_all, health, quar, ids),
        total_enumerated=raw,
        total_feasible=feasible,
        bucket_spec=spec,
        seed=seed,
    )


def target_count_buckets(
    scenario: Scenario,
    desired: int,
    tolerance: int | None = None,
    max_iters: int = 40,
    seed: int = 0,
    max_feasible: int = DEFAULT_FEASIBLE_CAP,
    progress=None,
) -> tuple[BucketSpec | None, FrontierResult]:
    """Binary-search bucket sizes rho = alpha * objective-range so the
    bucketed frontier has approximately `desired` solutions.

    The count is a step function of alpha and not exactly monotone, so the
    closest count found within max_iters wins, ties broken toward fewer
    solutions. If desired >= the exact frontier size, the exact frontier is
    returned flagged cannot_reach_target.
    """
    if desired < 1:
        raise ValueError("desired must be >= 1")
    if tolerance is None:
        tolerance = max(1, round(0.1 * desired))
    # materialization is the first half of the work, search the second
    scaled = None if progress is None else (lambda x: progress(0.5 * x))
    t_all, g_all, health, quar, raw, feasible = _materialize(scenario, max_feasible, scaled)
    M = _max_form(health, quar)
    base_mask = _nondominated_mask(M)
    base_ids = np.nonzero(base_mask)[0]
    if desired >= len(base_ids):
        result = FrontierResult(
            solutions=_solutions_from_rows(t_all, g_all, health, quar, base_ids),
            total_enumerated=raw,
            total_feasible=feasible,
            seed=seed,
            cannot_reach_target=desired > len(base_ids),
        )
        return None, result

    fh = health[base_ids]
    fq = quar[base_ids]
    ranges = np.concatenate([[fh.max() - fh.min()], fq.max(axis=0) - fq.min(axis=0)])

    def spec_for(alpha: float) -> BucketSpec:
        rho = np.where(ranges > 0, np.maximum(alpha * ranges, RHO_FLOOR), RHO_FLOOR)
        return BucketSpec(rho_health=float(rho[0]), rho_quarantine=tuple(rho[1:]))

    best: tuple[int, int, BucketSpec, list[int]] | None = None

    def probe(alpha: float) -> int:
        nonlocal best
        spec = spec_for(alpha)
        ids = _bucketed_from_rows(t_all, g_all, health, quar, spec, seed)
        count = len(ids)
        key = (abs(count - desired), count)
        if best is None or key < (best[0], best[1]):
            best = (abs(count - desired), count, spec, ids)
        return count

    # the coarsest buckets first: alpha = 1 often already collapses the
    # frontier to a single bucket, which is exact for desired = 1
    probe(1.0)
    lo, hi = 0.0, 1.0
    for it in range(max_iters):
        if best[0] <= tolerance:
            break
        alpha = 0.5 * (lo + hi)
        count = probe(alpha)
        if progress is not None:
            progress(0.5 + 0.5 * (it + 1) / max_iters)
        if count > desired:
            lo = alpha  # need bigger buckets
        else:
            hi = alpha
    assert best is not None
    _, _, spec, ids = best
    result = FrontierResult(
        solutions=_solutions_from_rows(t_all, g_all, health, quar, ids),
        total_enumerated=raw,
        total_feasible=feasible,
        bucket_spec=spec,
        seed=seed,
    )
    return spec, result


def filter_by_thresholds(
    frontier: FrontierResult,
    min_health: float | None = None,
    max_quarantine=None,
) -> FrontierResult:
    """Subset of solutions with health >= min_health and quarantine_i <=
    max_quarantine_i (inclusive). None entries are unbounded. Ids and
    metadata are preserved."""
    mh = -math.inf if min_health is None else float(min_health)
    kept = []
    for sol in frontier.solutions:
        if sol.objectives.health < mh:
            continue
        if max_quarantine is not None:
            if len(max_quarantine) != sol.objectives.k:
                raise DimensionError("threshold vector k mismatch")
            if any(
                q > (math.inf if cap is None else float(cap))
                for q, cap in zip(sol.objectives.quarantine, max_quarantine)
            ):
                continue
        kept.append(sol)
    return replace(frontier, solutions=kept)


# ---------------------------------------------------------------------------
# Serialization

def frontier_result_to_json_dict(result: FrontierResult) -> dict:
    sols = []
    for s in result.solutions:
        row = {
            "id": s.id,
            "t": list(s.strategy.t),
            "g": list(s.strategy.g),
            "health": s.objectives.health,
            "quarantine": list(s.objectives.quarantine),
        }
        if result.bucket_spec is not None:
            b = bucketize(s.objectives, result.bucket_spec)
            row["bucketized_health"] = b.health
            row["bucketized_quarantine"] = list(b.quarantine)
        sols.append(row)
    doc = {
        "solutions": sols,
        "total_enumerated": result.total_enumerated,
        "total_feasible": result.total_feasible,
        "bucket_spec": None
        if result.bucket_spec is None
        else {
            "rho_health": result.bucket_spec.rho_health,
            "rho_quarantine": list(result.bucket_spec.rho_quarantine),
        },
        "seed": result.seed,
        "cannot_reach_target": result.cannot_reach_target,
    }
    return doc


def frontier_result_from_json_dict(doc: dict) -> FrontierResult:
    spec = None
    if doc.get("bucket_spec"):
        spec = BucketSpec(
            rho_health=doc["bucket_spec"]["rho_health"],
            rho_quarantine=tuple(doc["bucket_spec"]["rho_quarantine"]),
        )
    sols = [
        EvaluatedStrategy(
            strategy=Strategy(tuple(s["t"]), tuple(s["g"])),
            objectives=ObjectiveVector(s["health"], tuple(s["quarantine"])),
            id=int(s["id"]),
        )
        for s in doc["solutions"]
    ]
    return FrontierResult(
        solutions=sols,
        total_enumerated=int(doc["total_enumerated"]),
        total_feasible=int(doc["total_feasible"]),
        bucket_spec=spec,
        seed=int(doc.get("seed", 0)),
        cannot_reach_target=bool(doc.get("cannot_reach_target", False)),
    )
