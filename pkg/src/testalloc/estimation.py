"""Estimation of scenario parameters from anonymized institutional records.

Exposure counts d_ij come from co-attendance: every pair of people present
at the same event counts as one interaction per shared event, and d_ij is
the per-capita average over the whole declared category (absentees count
as zero). Infection priors p_i come from per-category test positivity in
the most recent reporting periods, with add-k smoothing and a pooled
fallback for untested categories.

Transmission probabilities pi_ij are not estimated here; they enter the
scenario directly from expert-prepared configuration.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .model import Category

__all__ = [
    "InteractionRecord",
    "TestRecord",
    "EstimatedParameters",
    "EstimationInputError",
    "estimate_exposure",
    "estimate_prior",
    "estimate_parameters",
    "read_interactions_csv",
    "read_tests_csv",
]


class EstimationInputError(Exception):
    """Malformed input data; the message names the offending line."""


@dataclass(frozen=True)
class InteractionRecord:
    person_id: str
    category_id: str
    event_id: str


@dataclass(frozen=True)
class TestRecord:
    category_id: str
    tested: int
    positive: int
    period_label: str

    def __post_init__(self):
        if self.tested < 1 or self.positive < 0 or self.positive > self.tested:
            raise EstimationInputError(
                f"test record for {self.category_id!r}: positive must be in [0, tested]"
            )


@dataclass
class EstimatedParameters:
    d: np.ndarray
    p: np.ndarray
    support_pairs: np.ndarray  # raw co-occurrence pair counts behind d
    support_tested: np.ndarray  # tested counts behind p
    warnings: list[str] = field(default_factory=list)

    def scenario_fragment(self, categories: list[Category]) -> dict:
        """Partial scenario JSON: estimated categories and d. pi, budget and
        the group menu are supplied separately."""
        return {
            "categories": [
                {"id": c.id, "n": c.n, "p": float(p), "v": c.v}
                for c, p in zip(categories, self.p)
            ],
            "d": [[float(x) for x in row] for row in self.d],
        }


def _category_index(categories) -> dict[str, int]:
    return {c.id: i for i, c in enumerate(categories)}


def estimate_exposure(
    records: list[InteractionRecord], categories: list[Category]
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Count pairwise event co-occurrences and average per category.

    Returns (d, pair_counts, warnings). d[i][j] is the mean number of
    interactions a category-i member has with category-j members; the same
    pair meeting in several events counts once per event. Duplicate rows of
    one person at one event collapse.
    """
    idx = _category_index(categories)
    k = len(categories)
    for r in records:
        if r.category_id not in idx:
            raise EstimationInputError(
                f"interaction record references undeclared category {r.category_id!r}"
            )
    # person -> category, with consistency check
    person_cat: dict[str, int] = {}
    for r in records:
        ci = idx[r.category_id]
        prev = person_cat.setdefault(r.person_id, ci)
        if prev != ci:
            raise EstimationInputError(
                f"person {r.person_id!r} appears in two categories"
            )
    events: dict[str, set[str]] = {}
    for r in records:
        events.setdefault(r.event_id, set()).add(r.person_id)
    pair_counts = np.zeros((k, k), dtype=np.float64)
    for attendees in events.values():
        counts = np.zeros(k, dtype=np.int64)
        for person in attendees:
            counts[person_cat[person]] += 1
        # ordered pairs (receiver in i, contact in j); same-category pairs
        # exclude self-pairing
        for i in range(k):
            if counts[i] == 0:
                continue
            pair_counts[i] += counts[i] * counts
            pair_counts[i, i] -= counts[i]
    warnings = []
    sizes = np.array([c.n for c in categories], dtype=np.float64)
    observed = np.zeros(k, dtype=np.int64)
    for person, ci in person_cat.items():
        observed[ci] += 1
    for i, c in enumerate(categories):
        if observed[i] > c.n:
            raise EstimationInputError(
                f"category {c.id!r} declares n={c.n} but {observed[i]} distinct people appear"
            )
        if observed[i] == 0:
            warnings.append(f"category {c.id!r} has no interaction records; d row is zero")
    d = pair_counts / sizes[:, np.newaxis]
    return d, pair_counts, warnings


def estimate_prior(
    tests: list[TestRecord],
    categories: list[Category],
    smoothing: float = 1.0,
    window: int = 1,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Per-category infection prior from test positivity.

    p_i = (positives + smoothing) / (tested + 2 * smoothing) over the most
    recent `window` period labels (labels sort lexicographically). A
    category with no tests in the window falls back to the pooled estimate
    across all categories, flagged in warnings.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    idx = _category_index(categories)
    k = len(categories)
    for r in tests:
        if r.category_id not in idx:
            raise EstimationInputError(
                f"test record references undeclared category {r.category_id!r}"
            )
    labels = sorted({r.period_label for r in tests})
    recent = set(labels[-window:]) if labels else set()
    tested = np.zeros(k, dtype=np.float64)
    positive = np.zeros(k, dtype=np.float64)
    for r in tests:
        if r.period_label in recent:
            ci = idx[r.category_id]
            tested[ci] += r.tested
            positive[ci] += r.positive
    pooled_den = tested.sum() + 2 * smoothing
    if pooled_den == 0:
        raise EstimationInputError("no test records and no smoothing: prior undefined")
    pooled = (positive.sum() + smoothing) / pooled_den
    warnings = []
    p = np.empty(k, dtype=np.float64)
    for i, c in enumerate(categories):
        if tested[i] == 0:
            p[i] = pooled
            warnings.append(f"category {c.id!r} has no tests in window; pooled fallback")
        else:
            p[i] = (positive[i] + smoothing) / (tested[i] + 2 * smoothing)
    return p, tested, warnings


def estimate_parameters(
    records: list[InteractionRecord],
    tests: list[TestRecord],
    categories: list[Category],
    smoothing: float = 1.0,
    window: int = 1,
) -> EstimatedParameters:
    d, pairs, w1 = estimate_exposure(records, categories)
    p, tested, w2 = estimate_prior(tests, categories, smoothing=smoothing, window=window)
    return EstimatedParameters(
        d=d, p=p, support_pairs=pairs, support_tested=tested, warnings=w1 + w2
    )


# ---------------------------------------------------------------------------
# CSV input. Header row required; errors carry line numbers.

_INTERACTION_FIELDS = ["person_id", "category_id", "event_id"]
_TEST_FIELDS = ["category_id", "tested", "positive", "period_label"]


def _open_rows(source, expected: list[str], what: str):
    if isinstance(source, (str, bytes)):
        source = io.StringIO(source.decode() if isinstance(source, bytes) else source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise EstimationInputError(f"{what}: empty file, header row required") from None
    header = [h.strip() for h in header]
    if header != expected:
        raise EstimationInputError(
            f"{what}: header must be {','.join(expected)}, got {','.join(header)}"
        )
    return reader


def read_interactions_csv(source) -> list[InteractionRecord]:
    reader = _open_rows(source, _INTERACTION_FIELDS, "interactions")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3 or any(not f.strip() for f in row):
            raise EstimationInputError(f"interactions: malformed row at line {lineno}")
        out.append(InteractionRecord(*(f.strip() for f in row)))
    return out


def read_tests_csv(source) -> list[TestRecord]:
    reader = _open_rows(source, _TEST_FIELDS, "tests")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise EstimationInputError(f"tests: malformed row at line {lineno}")
        cat, tested, positive, period = (f.strip() for f in row)
        try:
            rec = TestRecord(cat, int(tested), int(positive), period)
        except ValueError as e:
            raise EstimationInputError(f"tests: line {lineno}: {e}") from None
        except EstimationInputError as e:
            raise EstimationInputError(f"tests: line {lineno}: {e}") from None
        out.append(rec)
    return out
