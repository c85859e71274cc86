"""Batch entry points: estimate parameters, compute frontiers, run
simulations, render quarantine plots, serve the HTTP API.

Exit codes: 0 success, 1 input error, 2 computational cap or infeasibility.
"""
from __future__ import annotations

import csv
import json
import sys

import click
import numpy as np

from . import estimation
from .frontier import (
    DEFAULT_FEASIBLE_CAP,
    FeasibleCapError,
    InfeasibleScenarioError,
    frontier_result_to_json_dict,
    pareto_frontier,
    target_count_buckets,
)
from .model import (
    Category,
    ModelError,
    Strategy,
    scenario_from_json,
)
from .sirq import SimConfig, compare_profiles, mean_quarantined, sim_runs_to_csv

INPUT_ERROR = 1
COMPUTE_ERROR = 2


def _fail(message: str, code: int) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_scenario(path: str):
    try:
        with open(path) as fh:
            return scenario_from_json(fh.read())
    except FileNotFoundError:
        _fail(f"scenario file not found: {path}", INPUT_ERROR)
    except (ModelError, json.JSONDecodeError) as e:
        _fail(f"invalid scenario {path}: {e}", INPUT_ERROR)


@click.group()
def main():
    """Pooled-test allocation toolkit."""


@main.command()
@click.option("--interactions", required=True, type=click.Path(), help="interaction records CSV")
@click.option("--tests", required=True, type=click.Path(), help="test results CSV")
@click.option("--categories", "categories_path", required=True, type=click.Path(),
              help="JSON list of {id, n, v?} declaring the categories")
@click.option("--smoothing", default=1.0, show_default=True)
@click.option("--window", default=1, show_default=True, help="test periods to average over")
@click.option("--out", required=True, type=click.Path())
def estimate(interactions, tests, categories_path, smoothing, window, out):
    """Estimate d and p from records; write a scenario JSON fragment."""
    try:
        with open(categories_path) as fh:
            cat_doc = json.load(fh)
        cats = [
            Category(id=str(c["id"]), n=int(c["n"]), p=0.0, v=float(c.get("v", 1.0)))
            for c in cat_doc
        ]
        with open(interactions) as fh:
            records = estimation.read_interactions_csv(fh)
        with open(tests) as fh:
            test_records = estimation.read_tests_csv(fh)
        params = estimation.estimate_parameters(
            records, test_records, cats, smoothing=smoothing, window=window
        )
    except FileNotFoundError as e:
        _fail(str(e), INPUT_ERROR)
    except (estimation.EstimationInputError, ModelError, json.JSONDecodeError, KeyError) as e:
        _fail(str(e), INPUT_ERROR)
    for w in params.warnings:
        click.echo(f"warning: {w}", err=True)
    with open(out, "w") as fh:
        json.dump(params.scenario_fragment(cats), fh, indent=2)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--desired", type=int, default=None, help="target solution count (bucketed)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--max-feasible", type=int, default=DEFAULT_FEASIBLE_CAP, show_default=True)
@click.option("--out", required=True, type=click.Path())
def frontier(scenario_path, desired, seed, max_feasible, out):
    """Compute the Pareto frontier (bucketed to --desired if given)."""
    sc = _load_scenario(scenario_path)
    try:
        if desired is None:
            result = pareto_frontier(sc, max_feasible=max_feasible)
            result.seed = seed
        else:
            _, result = target_count_buckets(
                sc, desired=desired, seed=seed, max_feasible=max_feasible
            )
    except FeasibleCapError as e:
        _fail(str(e), COMPUTE_ERROR)
    except InfeasibleScenarioError as e:
        _fail(str(e), COMPUTE_ERROR)
    with open(out, "w") as fh:
        json.dump(frontier_result_to_json_dict(result), fh)
    click.echo(
        f"{result.total_feasible} feasible strategies "
        f"({result.total_enumerated} enumerated), {len(result.solutions)} on the frontier"
        + (" [target unreachable, exact frontier returned]" if result.cannot_reach_target else "")
    )
    ids = [c.id for c in sc.categories]
    header = ["id", "t", "g", "health"] + [f"q[{c}]" for c in ids]
    rows = [
        [
            str(s.id),
            ",".join(map(str, s.strategy.t)),
            ",".join(map(str, s.strategy.g)),
            f"{s.objectives.health:.3f}",
            *(f"{q:.3f}" for q in s.objectives.quarantine),
        ]
        for s in result.solutions[:20]
    ]
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    click.echo("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        click.echo("  ".join(x.ljust(w) for x, w in zip(r, widths)))
    if len(result.solutions) > 20:
        click.echo(f"... {len(result.solutions) - 20} more (see {out})")


def _parse_initial(spec_text: str | None, scenario) -> tuple[int, ...]:
    if not spec_text:
        return tuple(0 for _ in scenario.categories)
    if spec_text.isdigit():
        # spread proportionally, remainder to the largest categories
        total = int(spec_text)
        sizes = np.array([c.n for c in scenario.categories], dtype=float)
        base = np.floor(total * sizes / sizes.sum()).astype(int)
        for i in np.argsort(-sizes)[: total - base.sum()]:
            base[i] += 1
        return tuple(int(x) for x in base)
    by_id = {c.id: i for i, c in enumerate(scenario.categories)}
    out = [0] * len(by_id)
    for part in spec_text.split(","):
        cid, _, count = part.partition(":")
        if cid.strip() not in by_id:
            raise ValueError(f"unknown category {cid.strip()!r} in --initial-infected")
        out[by_id[cid.strip()]] = int(count)
    return tuple(out)


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--strategy-file", required=True, type=click.Path(),
              help='JSON {"label","t","g"} or a list of them')
@click.option("--days", default=80, show_default=True)
@click.option("--replicates", default=30, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--beta", default=0.01, show_default=True)
@click.option("--gamma", default=0.0427, show_default=True)
@click.option("--quarantine-days", default=14, show_default=True)
@click.option("--test-period", default=7, show_default=True)
@click.option("--initial-infected", default=None,
              help='"N" spread proportionally, or "id:count,id:count"')
@click.option("--out", required=True, type=click.Path())
@click.option("--plot", "plot_path", type=click.Path(), default=None)
def simulate(scenario_path, strategy_file, days, replicates, seed, beta, gamma,
             quarantine_days, test_period, initial_infected, out, plot_path):
    """Replay strategies on the SIRQ network oracle; write per-day CSV."""
    sc = _load_scenario(scenario_path)
    try:
        with open(strategy_file) as fh:
            doc = json.load(fh)
        if isinstance(doc, dict):
            doc = [doc]
        strategies = [
            (str(item.get("label", f"strategy-{i}")), Strategy(tuple(item["t"]), tuple(item["g"])))
            for i, item in enumerate(doc)
        ]
        initial = _parse_initial(initial_infected, sc)
        sim = SimConfig(
            scenario=sc, beta=beta, gamma=gamma, quarantine_days=quarantine_days,
            test_period_days=test_period, horizon_days=days,
            initial_infected=initial, rng_seed=seed,
        )
    except (ModelError, json.JSONDecodeError, KeyError, ValueError) as e:
        _fail(str(e), INPUT_ERROR)
    try:
        results = compare_profiles(sim, strategies, replicates=replicates)
    except ValueError as e:
        _fail(str(e), COMPUTE_ERROR)
    with open(out, "w", newline="") as fh:
        sim_runs_to_csv([r for runs in results.values() for r in runs], fh)
    click.echo(f"wrote {out}")
    for label, runs in results.items():
        sec = np.concatenate([r.index_secondary for r in runs]) if runs else np.array([0.0])
        mq = mean_quarantined(runs)
        click.echo(
            f"{label}: mean secondary infections per index case "
            f"{sec.mean():.2f}; mean quarantined on final day "
            + ", ".join(f"{cid}={mq[-1, i]:.1f}" for i, cid in enumerate(runs[0].category_ids))
        )
    if plot_path:
        _plot_quarantine_curves(results, plot_path)
        click.echo(f"wrote {plot_path}")


def _plot_quarantine_curves(results, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    styles = ["-", ":", "--", "-."]
    for si, (label, runs) in enumerate(results.items()):
        mq = mean_quarantined(runs)
        for ci, cid in enumerate(runs[0].category_ids):
            ax.plot(
                np.arange(mq.shape[0]), mq[:, ci],
                color=colors[si % len(colors)], linestyle=styles[ci % len(styles)],
                label=f"{label}: {cid}",
            )
    ax.set_xlabel("days since outbreak start")
    ax.set_ylabel("individuals in quarantine")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


@main.command()
@click.option("--run-csv", "run_csv", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
def plot(run_csv, out):
    """Render quarantine curves from a simulate CSV."""
    series: dict[tuple[str, str], dict[int, list[int]]] = {}
    try:
        with open(run_csv, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                key = (row["strategy_label"], row["category_id"])
                series.setdefault(key, {}).setdefault(int(row["day"]), []).append(int(row["Q"]))
    except (FileNotFoundError, KeyError, ValueError, TypeError) as e:
        _fail(f"bad run CSV: {e}", INPUT_ERROR)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 5))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    styles = ["-", ":", "--", "-."]
    labels = sorted({k[0] for k in series})
    cats = sorted({k[1] for k in series})
    for (label, cid), by_day in sorted(series.items()):
        days = sorted(by_day)
        means = [float(np.mean(by_day[d])) for d in days]
        ax.plot(days, means, color=colors[labels.index(label) % len(colors)],
                linestyle=styles[cats.index(cid) % len(styles)], label=f"{label}: {cid}")
    ax.set_xlabel("days since outbreak start")
    ax.set_ylabel("individuals in quarantine")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--addr", default="127.0.0.1:8000", show_default=True,
              envvar="TESTALLOC_ADDR")
@click.option("--store", "store_path", default="testalloc.db", show_default=True,
              envvar="TESTALLOC_STORE")
@click.option("--max-feasible", type=int, default=DEFAULT_FEASIBLE_CAP, show_default=True,
              envvar="TESTALLOC_MAX_FEASIBLE")
@click.option("--workers", type=int, default=2, show_default=True,
              envvar="TESTALLOC_WORKERS")
@click.option("--cors-origin", "cors_origins", multiple=True, default=("*",))
def serve(addr, store_path, max_feasible, workers, cors_origins):
    """Start the HTTP service."""
    import uvicorn

    from .service import ServiceConfig, create_app

    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        _fail(f"bad --addr {addr!r}, expected host:port", INPUT_ERROR)
    try:
        app = create_app(ServiceConfig(
            store_path=store_path, feasible_cap=max_feasible,
            workers=workers, cors_origins=tuple(cors_origins),
        ))
    except Exception as e:  # bad store path and friends
        _fail(f"startup failed: {e}", INPUT_ERROR)
    uvicorn.run(app, host=host, port=int(port), log_level="warning")


if __name__ == "__main__":
    main()
