"""Pooled-test allocation engine: closed-form objectives, Pareto frontier
enumeration with bucketing, parameter estimation, a network SIRQ oracle,
and an HTTP decision-support service."""

from .model import (
    Category,
    ExposureMatrix,
    ObjectiveVector,
    Scenario,
    Strategy,
    evaluate,
    health_objective,
    is_feasible,
    quarantine_objective,
    scenario_from_json,
    scenario_to_json,
)
from .frontier import (
    BucketSpec,
    EvaluatedStrategy,
    FrontierResult,
    bucketed_frontier,
    dominates,
    enumerate_strategies,
    filter_by_thresholds,
    pareto_frontier,
    target_count_buckets,
)

__version__ = "0.1.0"
