"""Problem instance data model and closed-form objective evaluation.

A population is partitioned into k categories. A testing strategy assigns
t_i pooled tests of group size g_i to category i, exhausting a weekly
budget T. Positive pools quarantine all members. Two competing objective
families are evaluated in closed form:

* health: expected critical contagion infections prevented relative to
  no testing,
* quarantine (one per category): expected healthy individuals sent into
  quarantine by positive pools.

All functions here are pure and deterministic; inputs are immutable
dataclasses, safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import hashlib
import json
import math

import numpy as np

__all__ = [
    "Category",
    "ExposureMatrix",
    "Scenario",
    "Strategy",
    "ObjectiveVector",
    "ModelError",
    "ValidationError",
    "DimensionError",
    "InfeasibleStrategyError",
    "is_feasible",
    "feasibility_violation",
    "untested_fraction",
    "healthy_free_prob",
    "escape_prob",
    "expected_criticals",
    "health_objective",
    "quarantine_objective",
    "evaluate",
    "evaluate_batch",
    "scenario_to_json",
    "scenario_from_json",
    "scenario_content_hash",
]


class ModelError(Exception):
    """Base class for model errors."""


class ValidationError(ModelError):
    """A domain type invariant is violated. The message names the invariant."""


class DimensionError(ModelError):
    """Vector or matrix sizes do not match the scenario's k. Structural,
    deliberately distinct from a feasibility check returning False."""


class InfeasibleStrategyError(ModelError):
    """A strategy violates a feasibility constraint; message names it."""


def _as_matrix(rows, what: str) -> tuple[tuple[float, ...], ...]:
    out = tuple(tuple(float(x) for x in row) for row in rows)
    k = len(out)
    if any(len(row) != k for row in out):
        raise ValidationError(f"{what} is not square")
    return out


@dataclass(frozen=True)
class Category:
    """One population segment: size n, infection prior p, criticality v."""

    id: str
    n: int
    p: float
    v: float

    def __post_init__(self):
        if not self.id:
            raise ValidationError("category id empty")
        if self.n < 1:
            raise ValidationError(f"category {self.id!r}: n out of range (n >= 1)")
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"category {self.id!r}: p out of range")
        if not 0.0 <= self.v <= 1.0:
            raise ValidationError(f"category {self.id!r}: v out of range")

    @property
    def q(self) -> float:
        """Probability of being healthy, 1 - p."""
        return 1.0 - self.p


@dataclass(frozen=True)
class ExposureMatrix:
    """Contact counts d[i][j] (row i = receiving category) and per-contact
    transmission probabilities pi[i][j]. Neither need be symmetric; d may
    be non-integral."""

    d: tuple[tuple[float, ...], ...]
    pi: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "d", _as_matrix(self.d, "d"))
        object.__setattr__(self, "pi", _as_matrix(self.pi, "pi"))
        if len(self.d) != len(self.pi):
            raise ValidationError("exposure dimension: d and pi differ in size")
        for row in self.d:
            if any(x < 0 or not math.isfinite(x) for x in row):
                raise ValidationError("d out of range (entries must be finite and >= 0)")
        for row in self.pi:
            if any(not 0.0 <= x <= 1.0 for x in row):
                raise ValidationError("pi out of range")

    @property
    def k(self) -> int:
        return len(self.d)


@dataclass(frozen=True)
class Scenario:
    """A full problem instance: categories, exposure, test budget and the
    menu of allowed pooled group sizes."""

    categories: tuple[Category, ...]
    exposure: ExposureMatrix
    budget: int
    max_group: int
    group_menu: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        menu = tuple(sorted(set(int(g) for g in self.group_menu)))
        object.__setattr__(self, "group_menu", menu)
        if not self.categories:
            raise ValidationError("scenario has no categories")
        ids = [c.id for c in self.categories]
        if len(set(ids)) != len(ids):
            raise ValidationError("category id not unique")
        if self.exposure.k != len(self.categories):
            raise ValidationError("exposure dimension")
        if self.budget < 1:
            raise ValidationError("budget out of range (budget >= 1)")
        if self.max_group < 1:
            raise ValidationError("max_group out of range")
        if not menu:
            raise ValidationError("group_menu empty")
        if any(g < 1 for g in menu):
            raise ValidationError("group_menu entry out of range")
        if any(g > self.max_group for g in menu):
            raise ValidationError("group_menu entry exceeds max_group")

    @property
    def k(self) -> int:
        return len(self.categories)

    # Cached numpy views of the instance parameters. cached_property stores
    # straight into __dict__, which sidesteps the frozen __setattr__.
    @cached_property
    def n_arr(self) -> np.ndarray:
        return np.array([c.n for c in self.categories], dtype=np.float64)

    @cached_property
    def p_arr(self) -> np.ndarray:
        return np.array([c.p for c in self.categories], dtype=np.float64)

    @cached_property
    def q_arr(self) -> np.ndarray:
        return 1.0 - self.p_arr

    @cached_property
    def v_arr(self) -> np.ndarray:
        return np.array([c.v for c in self.categories], dtype=np.float64)

    @cached_property
    def d_arr(self) -> np.ndarray:
        return np.array(self.exposure.d, dtype=np.float64)

    @cached_property
    def pi_arr(self) -> np.ndarray:
        return np.array(self.exposure.pi, dtype=np.float64)

    @cached_property
    def baseline_criticals(self) -> float:
        """Expected critical contagion infections with no testing at all."""
        return expected_criticals(self, None)


@dataclass(frozen=True)
class Strategy:
    """The decision variable: tests per category t and group sizes g."""

    t: tuple[int, ...]
    g: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "t", tuple(int(x) for x in self.t))
        object.__setattr__(self, "g", tuple(int(x) for x in self.g))
        if len(self.t) != len(self.g):
            raise DimensionError("t and g lengths differ")
        if any(x < 0 for x in self.t):
            raise ValidationError("t out of range (t >= 0)")
        if any(x < 1 for x in self.g):
            raise ValidationError("g out of range (g >= 1)")

    @classmethod
    def canonical(cls, t, g) -> "Strategy":
        """Build a strategy with g_i collapsed to 1 wherever t_i = 0, so
        behaviourally identical strategies compare equal."""
        t = tuple(int(x) for x in t)
        g = tuple(1 if ti == 0 else int(gi) for ti, gi in zip(t, g))
        return cls(t, g)


@dataclass(frozen=True)
class ObjectiveVector:
    """Objective values of a strategy: prevented critical cases (health,
    maximised) and unnecessary quarantines per category (minimised)."""

    health: float
    quarantine: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "quarantine", tuple(float(x) for x in self.quarantine))
        object.__setattr__(self, "health", float(self.health))

    @property
    def k(self) -> int:
        return len(self.quarantine)

    def as_array(self) -> np.ndarray:
        return np.array([self.health, *self.quarantine], dtype=np.float64)


def _check_dims(scenario: Scenario, strategy: Strategy) -> None:
    if len(strategy.t) != scenario.k:
        raise DimensionError(
            f"strategy has {len(strategy.t)} categories, scenario has {scenario.k}"
        )


def feasibility_violation(scenario: Scenario, strategy: Strategy) -> str | None:
    """Return the name of the first violated feasibility constraint, or None.

    Raises DimensionError on a structural size mismatch.
    """
    _check_dims(scenario, strategy)
    menu = set(scenario.group_menu) | {1}
    for i, (cat, ti, gi) in enumerate(zip(scenario.categories, strategy.t, strategy.g)):
        if ti > 0:
            if gi not in menu:
                return f"g[{i}] = {gi} not in group menu"
            if gi > scenario.max_group:
                return f"g[{i}] = {gi} exceeds max_group {scenario.max_group}"
        if ti * gi > cat.n:
            return f"coverage t[{i}]*g[{i}] = {ti * gi} exceeds n[{i}] = {cat.n}"
    total = sum(strategy.t)
    if total != scenario.budget:
        return f"budget not exhausted (sum t = {total}, budget = {scenario.budget})"
    return None


def is_feasible(scenario: Scenario, strategy: Strategy) -> bool:
    """True iff the strategy satisfies every feasibility constraint."""
    return feasibility_violation(scenario, strategy) is None


def untested_fraction(scenario: Scenario, strategy: Strategy, i: int) -> float:
    """u_i = (n_i - t_i g_i) / n_i, the chance a category-i individual is
    not covered by any pool."""
    _check_dims(scenario, strategy)
    n = scenario.categories[i].n
    return (n - strategy.t[i] * strategy.g[i]) / n


def healthy_free_prob(scenario: Scenario, strategy: Strategy, i: int) -> float:
    """z_i = u_i q_i + (1 - u_i) q_i^{g_i}: healthy and not quarantining
    after testing, before the contagion step."""
    _check_dims(scenario, strategy)
    q = scenario.categories[i].q
    u = untested_fraction(scenario, strategy, i)
    return u * q + (1.0 - u) * q ** strategy.g[i]


def escape_prob(scenario: Scenario, strategy: Strategy, i: int, j: int) -> float:
    """alpha_ij = (1 - pi_ij p_j u_j)^{d_ij}: a healthy, free category-i
    individual avoids infection from category j. Non-integral d_ij is a
    real-valued power."""
    _check_dims(scenario, strategy)
    d = scenario.exposure.d[i][j]
    pi = scenario.exposure.pi[i][j]
    pu = scenario.categories[j].p * untested_fraction(scenario, strategy, j)
    return float((1.0 - pi * pu) ** d)


def expected_criticals(scenario: Scenario, strategy: Strategy | None) -> float:
    """f_H: expected critical infections produced by one contagion step.

    strategy=None is the distinguished no-testing baseline (u_j = 1,
    z_i = q_i); it is not a feasible Strategy because the budget would go
    unspent.
    """
    n, p, q, v = scenario.n_arr, scenario.p_arr, scenario.q_arr, scenario.v_arr
    if strategy is None:
        u = np.ones(scenario.k)
        z = q.copy()
    else:
        _check_dims(scenario, strategy)
        cov = np.array(strategy.t, dtype=np.float64) * np.array(strategy.g, dtype=np.float64)
        u = (n - cov) / n
        z = u * q + (1.0 - u) * q ** np.array(strategy.g, dtype=np.float64)
    inner = 1.0 - scenario.pi_arr * (p * u)[np.newaxis, :]
    alpha = np.power(inner, scenario.d_arr)  # 0^0 = 1 covers d_ij = 0
    return float(np.sum(n * v * z * (1.0 - np.prod(alpha, axis=1))))


def health_objective(scenario: Scenario, strategy: Strategy) -> float:
    """O_H = f_H(no testing) - f_H(t, g), the prevented critical cases.

    Non-negative by monotonicity; clamped at 0 to absorb float rounding.
    """
    return max(0.0, scenario.baseline_criticals - expected_criticals(scenario, strategy))


def quarantine_objective(scenario: Scenario, strategy: Strategy, i: int) -> float:
    """O_Q,i = t_i g_i (q_i - q_i^{g_i}), expected healthy category-i
    members quarantined by positive pools."""
    _check_dims(scenario, strategy)
    q = scenario.categories[i].q
    t, g = strategy.t[i], strategy.g[i]
    return t * g * (q - q**g)


def evaluate(scenario: Scenario, strategy: Strategy) -> ObjectiveVector:
    """Evaluate all objectives of a feasible strategy."""
    violation = feasibility_violation(scenario, strategy)
    if violation is not None:
        raise InfeasibleStrategyError(violation)
    return ObjectiveVector(
        health=health_objective(scenario, strategy),
        quarantine=tuple(
            quarantine_objective(scenario, strategy, i) for i in range(scenario.k)
        ),
    )


def evaluate_batch(
    scenario: Scenario, t: np.ndarray, g: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised objective evaluation for B strategies at once.

    t, g: integer arrays of shape (B, k), assumed feasible. Returns
    (health (B,), quarantine (B, k)). Matches evaluate() bit for bit on
    each row.
    """
    n, p, q, v = scenario.n_arr, scenario.p_arr, scenario.q_arr, scenario.v_arr
    t = np.asarray(t, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    cov = t * g
    u = (n - cov) / n
    qg = np.power(q, g)
    z = u * q + (1.0 - u) * qg
    inner = 1.0 - scenario.pi_arr[np.newaxis, :, :] * (p * u)[:, np.newaxis, :]
    alpha_prod = np.prod(np.power(inner, scenario.d_arr[np.newaxis, :, :]), axis=2)
    fh = np.sum(n * v * z * (1.0 - alpha_prod), axis=1)
    health = np.maximum(0.0, scenario.baseline_criticals - fh)
    quarantine = cov * (q - qg)
    return health, quarantine


# ---------------------------------------------------------------------------
# JSON serialization. Matrices are row-major; row index = receiving category.

def scenario_to_json(scenario: Scenario) -> str:
    doc = {
        "categories": [
            {"id": c.id, "n": c.n, "p": c.p, "v": c.v} for c in scenario.categories
        ],
        "d": [list(row) for row in scenario.exposure.d],
        "pi": [list(row) for row in scenario.exposure.pi],
        "budget": scenario.budget,
        "max_group": scenario.max_group,
        "group_menu": list(scenario.group_menu),
    }
    return json.dumps(doc, sort_keys=True)


def scenario_from_json(text: str | bytes | dict) -> Scenario:
    """Parse and validate a scenario document. Raises ValidationError with
    the violated invariant named, or json.JSONDecodeError on bad JSON."""
    doc = json.loads(text) if not isinstance(text, dict) else text
    try:
        cats = tuple(
            Category(id=str(c["id"]), n=int(c["n"]), p=float(c["p"]), v=float(c["v"]))
            for c in doc["categories"]
        )
        k = len(cats)
        d, pi = doc["d"], doc["pi"]
        if len(d) != k or any(len(row) != k for row in d):
            raise ValidationError("exposure dimension")
        if len(pi) != k or any(len(row) != k for row in pi):
            raise ValidationError("exposure dimension")
        return Scenario(
            categories=cats,
            exposure=ExposureMatrix(d=d, pi=pi),
            budget=int(doc["budget"]),
            max_group=int(doc["max_group"]),
            group_menu=tuple(int(x) for x in doc["group_menu"]),
        )
    except KeyError as e:
        raise ValidationError(f"missing field {e.args[0]!r}") from e
    except (TypeError, ValueError) as e:
        raise ValidationError(f"malformed value: {e}") from e


def scenario_content_hash(scenario: Scenario) -> str:
    """Stable hash of the scenario content, used as a cache key."""
    return hashlib.sha256(scenario_to_json(scenario).encode()).hexdigest()
