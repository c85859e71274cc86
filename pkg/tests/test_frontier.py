import math

import numpy as np
import pytest

from testalloc.frontier import (
    BucketSpec,
    EvaluatedStrategy,
    FeasibleCapError,
    FrontierResult,
    InfeasibleScenarioError,
    bucketed_frontier,
    bucketize,
    count_strategies,
    dominates,
    enumerate_strategies,
    filter_by_thresholds,
    frontier_result_from_json_dict,
    frontier_result_to_json_dict,
    has_feasible_strategy,
    pareto_frontier,
    target_count_buckets,
)
from testalloc.model import DimensionError, ObjectiveVector, Strategy, evaluate

from conftest import make_scenario, random_scenario
from oracles import brute_force_nondominated, brute_force_strategies


def ov(health, *quarantine):
    return ObjectiveVector(health, tuple(quarantine))


def strategy_set(scenario):
    return {(s.t, s.g) for s in enumerate_strategies(scenario)}


class TestEnumeration:
    def test_single_category_menu(self):
        sc = make_scenario([100], [0.1], [[0.0]], [[0.0]], 3, [1, 3])
        assert strategy_set(sc) == {((3,), (1,)), ((3,), (3,))}

    def test_two_categories_unit_budget(self):
        sc = make_scenario([10, 10], [0.1, 0.1], np.zeros((2, 2)), np.zeros((2, 2)), 1, [1])
        assert strategy_set(sc) == {((1, 0), (1, 1)), ((0, 1), (1, 1))}

    def test_matches_brute_force_with_caps(self):
        # category 0 admits at most floor(6/3)=2 pooled tests of size 3
        sc = make_scenario([6, 100], [0.1, 0.1], np.zeros((2, 2)), np.zeros((2, 2)), 4, [1, 3])
        assert strategy_set(sc) == brute_force_strategies(sc)

    def test_matches_brute_force_randomized(self):
        rng = np.random.default_rng(17)
        for _ in range(30):
            sc = random_scenario(rng, t_max=6)
            enum = [(s.t, s.g) for s in enumerate_strategies(sc)]
            assert len(set(enum)) == len(enum)
            assert set(enum) == brute_force_strategies(sc)

    def test_counts_match_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            sc = random_scenario(rng, t_max=6)
            _, feasible = count_strategies(sc)
            assert feasible == sum(1 for _ in enumerate_strategies(sc))

    def test_infeasible_scenario_yields_nothing_and_flags(self):
        sc = make_scenario([4], [0.1], [[0.0]], [[0.0]], 10, [2])
        assert not has_feasible_strategy(sc)
        assert list(enumerate_strategies(sc)) == []
        with pytest.raises(InfeasibleScenarioError):
            pareto_frontier(sc)


class TestDominance:
    def test_strictly_better_health(self):
        assert dominates(ov(10, 1, 1), ov(9, 1, 1))

    def test_identical_vectors_never_dominate(self):
        assert not dominates(ov(10, 1, 1), ov(10, 1, 1))

    def test_incomparable(self):
        a, b = ov(10, 2, 1), ov(9, 1, 1)
        assert not dominates(a, b)
        assert not dominates(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            dominates(ov(1, 1), ov(1, 1, 1))


class TestParetoFrontier:
    def test_single_feasible_strategy(self):
        sc = make_scenario([4], [0.1], [[1.0]], [[0.5]], 4, [1])
        fr = pareto_frontier(sc)
        assert len(fr) == 1
        assert fr.solutions[0].strategy == Strategy((4,), (1,))

    def test_dominator_survives(self):
        # d=pi=0 makes health 0 for all; g=1 has zero quarantine and
        # dominates the pooled variant
        sc = make_scenario([100], [0.1], [[0.0]], [[0.0]], 3, [1, 3])
        fr = pareto_frontier(sc)
        assert len(fr) == 1
        assert fr.solutions[0].strategy.g == (1,)

    def test_matches_brute_force_randomized(self):
        rng = np.random.default_rng(29)
        for _ in range(25):
            sc = random_scenario(rng, t_max=6)
            if not has_feasible_strategy(sc):
                continue
            fr = pareto_frontier(sc)
            strategies = list(enumerate_strategies(sc))
            M = np.array(
                [
                    [evaluate(sc, s).health, *(-q for q in evaluate(sc, s).quarantine)]
                    for s in strategies
                ]
            )
            mask = brute_force_nondominated(M)
            assert {s.id for s in fr.solutions} == set(np.nonzero(mask)[0].tolist())

    def test_order_insensitive(self):
        # incremental archive over a shuffled stream, using the public
        # dominates(), must land on the same strategy set
        rng = np.random.default_rng(41)
        for _ in range(10):
            sc = random_scenario(rng, t_max=5)
            if not has_feasible_strategy(sc):
                continue
            evaluated = [(s, evaluate(sc, s)) for s in enumerate_strategies(sc)]
            perm = rng.permutation(len(evaluated))
            archive: list[tuple[Strategy, ObjectiveVector]] = []
            for idx in perm:
                s, obj = evaluated[idx]
                if any(dominates(other, obj) for _, other in archive):
                    continue
                archive = [(t, o) for t, o in archive if not dominates(obj, o)]
                archive.append((s, obj))
            fr = pareto_frontier(sc)
            assert {(s.t, s.g) for s, _ in archive} == {
                (e.strategy.t, e.strategy.g) for e in fr.solutions
            }

    def test_parallel_merge_equivalence(self):
        rng = np.random.default_rng(4)
        for _ in range(6):
            sc = random_scenario(rng, t_max=6)
            if not has_feasible_strategy(sc):
                continue
            base = pareto_frontier(sc, workers=1)
            for workers in (2, 3):
                par = pareto_frontier(sc, workers=workers)
                assert [s.id for s in par.solutions] == [s.id for s in base.solutions]

    def test_feasible_cap(self, pilot_scenario):
        with pytest.raises(FeasibleCapError) as exc:
            pareto_frontier(pilot_scenario, max_feasible=100)
        assert exc.value.cap == 100
        assert exc.value.count > 100


class TestBucketize:
    def test_round_down_below_half(self):
        assert bucketize(ov(12.0, 0.0), BucketSpec(5.0, (1.0,))).health == 10.0

    def test_half_rounds_up(self):
        assert bucketize(ov(12.5, 0.0), BucketSpec(5.0, (1.0,))).health == 15.0

    def test_identity_on_multiples(self):
        for x in range(10):
            assert bucketize(ov(float(x), float(x)), BucketSpec(1.0, (1.0,))).health == x

    def test_rejects_nonpositive_rho(self):
        with pytest.raises(Exception, match="bucket"):
            BucketSpec(0.0, (1.0,))


def brute_force_bucketed_ids(scenario, spec, seed):
    """All-pairs oracle: bucketize every feasible strategy's objectives,
    filter bucket vectors by dominance, then pick the representative the
    library would (lowest keyed hash) per surviving bucket."""
    from testalloc.frontier import _strategy_priority

    evaluated = [(i, s, evaluate(scenario, s)) for i, s in enumerate(enumerate_strategies(scenario))]
    buckets: dict[tuple, list[int]] = {}
    vecs: dict[tuple, np.ndarray] = {}
    for i, s, obj in evaluated:
        b = bucketize(obj, spec)
        key = (round(b.health / spec.rho_health), *(round(q / r) for q, r in zip(b.quarantine, spec.rho_quarantine)))
        buckets.setdefault(key, []).append(i)
        vecs[key] = np.array([b.health, *(-q for q in b.quarantine)])
    keys = list(buckets)
    alive = []
    for key in keys:
        v = vecs[key]
        dominated = any(
            (vecs[other] >= v).all() and (vecs[other] > v).any() for other in keys if other != key
        )
        if not dominated:
            alive.append(key)
    ids = []
    for key in alive:
        members = buckets[key]
        best = min(
            members,
            key=lambda i: _strategy_priority(seed, evaluated[i][1].t, evaluated[i][1].g),
        )
        ids.append(best)
    return sorted(ids)


class TestBucketedFrontier:
    def test_tiny_rho_equals_unbucketed_modulo_ties(self, two_cat_scenario):
        fr = pareto_frontier(two_cat_scenario)
        spec = BucketSpec(1e-12, (1e-12, 1e-12))
        bu = bucketed_frontier(two_cat_scenario, spec, seed=1)
        vecs = {tuple(s.objectives.as_array()) for s in fr.solutions}
        assert len(bu) == len(vecs)  # exact ties collapse, nothing else

    def test_giant_rho_single_bucket(self, two_cat_scenario):
        fr = pareto_frontier(two_cat_scenario)
        rh, rq = fr.objective_ranges()
        spec = BucketSpec(max(4 * rh, 1.0), tuple(max(4 * x, 1.0) for x in rq))
        assert len(bucketed_frontier(two_cat_scenario, spec, seed=1)) == 1

    def test_never_larger_than_unbucketed_and_matches_oracle(self):
        rng = np.random.default_rng(61)
        for _ in range(8):
            sc = random_scenario(rng, t_max=5)
            if not has_feasible_strategy(sc):
                continue
            fr = pareto_frontier(sc)
            rh, rq = fr.objective_ranges()
            spec = BucketSpec(
                max(0.35 * rh, 1e-9), tuple(max(0.35 * x, 1e-9) for x in rq)
            )
            bu = bucketed_frontier(sc, spec, seed=9)
            assert len(bu) <= len(fr)
            assert [s.id for s in bu.solutions] == brute_force_bucketed_ids(sc, spec, 9)

    def test_reproducible_for_seed(self, two_cat_scenario):
        fr = pareto_frontier(two_cat_scenario)
        rh, rq = fr.objective_ranges()
        spec = BucketSpec(max(0.3 * rh, 1e-9), tuple(max(0.3 * x, 1e-9) for x in rq))
        a = bucketed_frontier(two_cat_scenario, spec, seed=5)
        b = bucketed_frontier(two_cat_scenario, spec, seed=5)
        assert [(s.id, s.strategy) for s in a.solutions] == [
            (s.id, s.strategy) for s in b.solutions
        ]


class TestTargetCount:
    def test_desired_one(self, two_cat_scenario):
        spec, res = target_count_buckets(two_cat_scenario, desired=1, seed=3)
        assert len(res) == 1
        assert res.bucket_spec is not None

    def test_desired_above_frontier_returns_capped(self, two_cat_scenario):
        fr = pareto_frontier(two_cat_scenario)
        spec, res = target_count_buckets(two_cat_scenario, desired=len(fr) + 50, seed=3)
        assert spec is None
        assert res.cannot_reach_target
        assert len(res) == len(fr)

    def test_desired_equal_frontier_is_reachable(self, two_cat_scenario):
        fr = pareto_frontier(two_cat_scenario)
        spec, res = target_count_buckets(two_cat_scenario, desired=len(fr), seed=3)
        assert len(res) == len(fr)
        assert not res.cannot_reach_target

    def test_mid_target_within_tolerance(self, two_cat_scenario):
        fr = pareto_frontier(two_cat_scenario)
        desired = max(2, len(fr) // 2)
        spec, res = target_count_buckets(two_cat_scenario, desired=desired, seed=3)
        assert abs(len(res) - desired) <= max(1, round(0.1 * desired)) + 2

    def test_zero_range_objective_floored(self):
        # pi=0 forces health = 0 everywhere: zero range on that objective
        sc = make_scenario([30], [0.2], [[2.0]], [[0.0]], 3, [1, 3])
        spec, res = target_count_buckets(sc, desired=1, seed=0)
        assert len(res) == 1


class TestFilter:
    def test_unbounded_is_identity(self, two_cat_scenario):
        fr = pareto_frontier(two_cat_scenario)
        out = filter_by_thresholds(fr)
        assert [s.id for s in out.solutions] == [s.id for s in fr.solutions]

    def test_min_health_above_max_empties(self, two_cat_scenario):
        fr = pareto_frontier(two_cat_scenario)
        top = max(s.objectives.health for s in fr.solutions)
        out = filter_by_thresholds(fr, min_health=top + 1.0)
        assert out.solutions == []

    def test_boundary_is_inclusive(self, two_cat_scenario):
        fr = pareto_frontier(two_cat_scenario)
        sol = fr.solutions[len(fr.solutions) // 2]
        out = filter_by_thresholds(
            fr,
            min_health=sol.objectives.health,
            max_quarantine=list(sol.objectives.quarantine),
        )
        assert any(s.id == sol.id for s in out.solutions)

    def test_ids_preserved(self, two_cat_scenario):
        fr = pareto_frontier(two_cat_scenario)
        out = filter_by_thresholds(fr, min_health=np.median([s.objectives.health for s in fr.solutions]))
        for s in out.solutions:
            assert fr.solutions[[x.id for x in fr.solutions].index(s.id)].strategy == s.strategy


class TestSerialization:
    def test_round_trip(self, two_cat_scenario):
        spec, res = target_count_buckets(two_cat_scenario, desired=3, seed=8)
        doc = frontier_result_to_json_dict(res)
        back = frontier_result_from_json_dict(doc)
        assert back.total_enumerated == res.total_enumerated
        assert back.total_feasible == res.total_feasible
        assert back.seed == res.seed
        assert [(s.id, s.strategy, s.objectives) for s in back.solutions] == [
            (s.id, s.strategy, s.objectives) for s in res.solutions
        ]
        assert back.bucket_spec == res.bucket_spec

    def test_bucketized_fields_present_only_with_spec(self, two_cat_scenario):
        fr = pareto_frontier(two_cat_scenario)
        doc = frontier_result_to_json_dict(fr)
        assert "bucketized_health" not in doc["solutions"][0]
        spec, res = target_count_buckets(two_cat_scenario, desired=2, seed=8)
        doc = frontier_result_to_json_dict(res)
        assert "bucketized_health" in doc["solutions"][0]
