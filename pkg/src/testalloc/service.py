"""HTTP decision-support service.

Exposes scenario management, frontier computation with caching and a
polling status sub-resource, threshold filtering, and saved-solution CRUD
under the /v1 prefix. State lives in a single sqlite file; frontier jobs
run on a bounded thread pool and results are cached by scenario content
hash plus computation parameters, so repeat calls return byte-identical
bodies and scenario edits can never serve stale frontiers.
"""
from __future__ import annotations

import json
import sqlite3
import threading
import uuid
from concurrent.futures import Future, ThreadPoolExecutor, TimeoutError as FutureTimeout
from dataclasses import dataclass
from datetime import datetime, timezone

from fastapi import FastAPI, Query, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .frontier import (
    DEFAULT_FEASIBLE_CAP,
    FeasibleCapError,
    InfeasibleScenarioError,
    filter_by_thresholds,
    frontier_result_from_json_dict,
    frontier_result_to_json_dict,
    pareto_frontier,
    target_count_buckets,
)
from .model import Scenario, ValidationError, scenario_content_hash, scenario_from_json

__all__ = ["create_app", "ServiceConfig"]

_SCHEMA = """
CREATE TABLE IF NOT EXISTS scenarios (
    scenario_id TEXT PRIMARY KEY,
    label TEXT NOT NULL,
    created_at TEXT NOT NULL,
    content_hash TEXT NOT NULL,
    doc TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS frontiers (
    cache_key TEXT PRIMARY KEY,
    scenario_id TEXT NOT NULL,
    created_at TEXT NOT NULL,
    body TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS latest_frontier (
    scenario_id TEXT PRIMARY KEY,
    cache_key TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS saved_solutions (
    saved_id TEXT PRIMARY KEY,
    scenario_id TEXT NOT NULL,
    solution_id INTEGER NOT NULL,
    note TEXT NOT NULL,
    saved_at TEXT NOT NULL,
    solution_doc TEXT NOT NULL
);
"""


@dataclass
class ServiceConfig:
    store_path: str = ":memory:"
    feasible_cap: int = DEFAULT_FEASIBLE_CAP
    workers: int = 2
    sync_wait_seconds: float = 30.0
    cors_origins: tuple[str, ...] = ("*",)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _error(status: int, code: str, message: str, detail: str = "") -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"code": code, "message": message, "detail": detail},
    )


class _Store:
    """sqlite-backed document store; sqlite's own locking serializes writes."""

    def __init__(self, path: str):
        self.path = path
        # a single shared connection keeps :memory: stores alive; guard it
        # with a lock for thread safety
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._lock = threading.Lock()
        with self._lock, self._conn:
            self._conn.executescript(_SCHEMA)

    def execute(self, sql: str, args=()):
        with self._lock, self._conn:
            return self._conn.execute(sql, args).fetchall()


class _Jobs:
    """Frontier computations in flight, keyed by cache key."""

    def __init__(self, workers: int):
        self.pool = ThreadPoolExecutor(max_workers=workers)
        self.lock = threading.Lock()
        self.futures: dict[str, Future] = {}
        self.progress: dict[str, float] = {}

    def submit(self, key: str, fn) -> Future:
        with self.lock:
            fut = self.futures.get(key)
            if fut is None:
                self.progress[key] = 0.0
                fut = self.pool.submit(fn)
                self.futures[key] = fut
            return fut

    def report(self, key: str, fraction: float) -> None:
        self.progress[key] = fraction

    def state(self, key: str):
        with self.lock:
            fut = self.futures.get(key)
            if fut is None:
                return None
            if fut.done():
                return ("failed", 1.0, fut.exception()) if fut.exception() else ("done", 1.0, None)
            return ("running", self.progress.get(key, 0.0), None)


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    cfg = config or ServiceConfig()
    store = _Store(cfg.store_path)
    jobs = _Jobs(cfg.workers)
    app = FastAPI(title="testalloc", version="0.1.0")
    app.state.config = cfg
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cfg.cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def load_scenario(scenario_id: str):
        rows = store.execute(
            "SELECT doc, content_hash FROM scenarios WHERE scenario_id = ?", (scenario_id,)
        )
        if not rows:
            return None, None
        return scenario_from_json(rows[0][0]), rows[0][1]

    def cache_key_for(content_hash: str, desired, seed) -> str:
        return f"{content_hash}:desired={desired}:seed={seed}"

    def compute_frontier_body(scenario: Scenario, desired, seed, key: str) -> str:
        def progress(frac: float):
            jobs.report(key, frac)

        if desired is None:
            result = pareto_frontier(
                scenario, max_feasible=cfg.feasible_cap, progress=progress
            )
            result.seed = seed
        else:
            _, result = target_count_buckets(
                scenario,
                desired=desired,
                seed=seed,
                max_feasible=cfg.feasible_cap,
                progress=progress,
            )
        return json.dumps(frontier_result_to_json_dict(result), sort_keys=True)

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.post("/v1/scenarios", status_code=201)
    async def create_scenario(request: Request, label: str = Query(default="")):
        raw = await request.body()
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError as e:
            return _error(400, "bad_json", "request body is not valid JSON", str(e))
        try:
            scenario = scenario_from_json(doc)
        except ValidationError as e:
            return _error(422, "invalid_scenario", str(e))
        scenario_id = uuid.uuid4().hex
        created = _now()
        store.execute(
            "INSERT INTO scenarios VALUES (?, ?, ?, ?, ?)",
            (
                scenario_id,
                label,
                created,
                scenario_content_hash(scenario),
                json.dumps(doc, sort_keys=True),
            ),
        )
        return {"scenario_id": scenario_id, "label": label, "created_at": created}

    @app.get("/v1/scenarios")
    def list_scenarios():
        rows = store.execute(
            "SELECT scenario_id, label, created_at FROM scenarios ORDER BY created_at"
        )
        return [
            {"scenario_id": r[0], "label": r[1], "created_at": r[2]} for r in rows
        ]

    @app.get("/v1/scenarios/{scenario_id}")
    def get_scenario(scenario_id: str):
        rows = store.execute(
            "SELECT label, created_at, doc FROM scenarios WHERE scenario_id = ?",
            (scenario_id,),
        )
        if not rows:
            return _error(404, "not_found", f"scenario {scenario_id} not found")
        return {
            "scenario_id": scenario_id,
            "label": rows[0][0],
            "created_at": rows[0][1],
            "scenario": json.loads(rows[0][2]),
        }

    @app.post("/v1/scenarios/{scenario_id}/frontier")
    def compute_frontier(
        scenario_id: str,
        desired: int | None = Query(default=None, ge=1),
        seed: int = Query(default=0),
        wait: float | None = Query(default=None, ge=0),
    ):
        scenario, content_hash = load_scenario(scenario_id)
        if scenario is None:
            return _error(404, "not_found", f"scenario {scenario_id} not found")
        key = cache_key_for(content_hash, desired, seed)
        cached = store.execute("SELECT body FROM frontiers WHERE cache_key = ?", (key,))
        if cached:
            store.execute(
                "INSERT OR REPLACE INTO latest_frontier VALUES (?, ?)", (scenario_id, key)
            )
            return Response(content=cached[0][0], media_type="application/json")

        fut = jobs.submit(key, lambda: compute_frontier_body(scenario, desired, seed, key))
        timeout = cfg.sync_wait_seconds if wait is None else wait
        try:
            body = fut.result(timeout=timeout)
        except FutureTimeout:
            return JSONResponse(
                status_code=202,
                content={
                    "state": "running",
                    "progress": jobs.progress.get(key, 0.0),
                    "status_url": f"/v1/scenarios/{scenario_id}/frontier/status"
                    f"?desired={'' if desired is None else desired}&seed={seed}",
                },
            )
        except FeasibleCapError as e:
            return _error(409, "feasible_cap_exceeded", str(e), detail=str(e.cap))
        except InfeasibleScenarioError as e:
            return _error(422, "infeasible_scenario", str(e))
        store.execute(
            "INSERT OR IGNORE INTO frontiers VALUES (?, ?, ?, ?)",
            (key, scenario_id, _now(), body),
        )
        store.execute(
            "INSERT OR REPLACE INTO latest_frontier VALUES (?, ?)", (scenario_id, key)
        )
        return Response(content=body, media_type="application/json")

    @app.get("/v1/scenarios/{scenario_id}/frontier/status")
    def frontier_status(
        scenario_id: str,
        desired: int | None = Query(default=None, ge=1),
        seed: int = Query(default=0),
    ):
        scenario, content_hash = load_scenario(scenario_id)
        if scenario is None:
            return _error(404, "not_found", f"scenario {scenario_id} not found")
        key = cache_key_for(content_hash, desired, seed)
        if store.execute("SELECT 1 FROM frontiers WHERE cache_key = ?", (key,)):
            return {"state": "done", "progress": 1.0}
        st = jobs.state(key)
        if st is None:
            return {"state": "absent", "progress": 0.0}
        state, progress, exc = st
        out = {"state": state, "progress": progress}
        if exc is not None:
            out["error"] = str(exc)
        return out

    def latest_frontier_doc(scenario_id: str):
        rows = store.execute(
            "SELECT f.body FROM latest_frontier l JOIN frontiers f ON f.cache_key = l.cache_key "
            "WHERE l.scenario_id = ?",
            (scenario_id,),
        )
        return json.loads(rows[0][0]) if rows else None

    @app.get("/v1/scenarios/{scenario_id}/frontier/filter")
    def filter_frontier(scenario_id: str, request: Request):
        scenario, _ = load_scenario(scenario_id)
        if scenario is None:
            return _error(404, "not_found", f"scenario {scenario_id} not found")
        doc = latest_frontier_doc(scenario_id)
        if doc is None:
            return _error(409, "frontier_missing", "compute the frontier first")
        params = request.query_params
        try:
            min_health = float(params["min_health"]) if "min_health" in params else None
            max_q = [
                float(params[f"max_q_{i}"]) if f"max_q_{i}" in params else None
                for i in range(scenario.k)
            ]
        except ValueError:
            return _error(422, "bad_threshold", "thresholds must be numbers")
        result = frontier_result_from_json_dict(doc)
        filtered = filter_by_thresholds(result, min_health=min_health, max_quarantine=max_q)
        body = frontier_result_to_json_dict(filtered)
        body["count"] = len(filtered.solutions)
        return body

    @app.post("/v1/scenarios/{scenario_id}/solutions", status_code=201)
    async def save_solution(scenario_id: str, request: Request):
        scenario, _ = load_scenario(scenario_id)
        if scenario is None:
            return _error(404, "not_found", f"scenario {scenario_id} not found")
        try:
            payload = json.loads(await request.body())
            solution_id = int(payload["solution_id"])
            note = str(payload.get("note", ""))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            return _error(400, "bad_request", "body must be {solution_id, note}", str(e))
        doc = latest_frontier_doc(scenario_id)
        if doc is None:
            return _error(409, "frontier_missing", "compute the frontier first")
        match = [s for s in doc["solutions"] if s["id"] == solution_id]
        if not match:
            return _error(
                422, "dangling_solution", f"solution {solution_id} is not in the latest frontier"
            )
        saved_id = uuid.uuid4().hex
        saved_at = _now()
        store.execute(
            "INSERT INTO saved_solutions VALUES (?, ?, ?, ?, ?, ?)",
            (saved_id, scenario_id, solution_id, note, saved_at, json.dumps(match[0])),
        )
        return {
            "saved_id": saved_id,
            "scenario_id": scenario_id,
            "solution": match[0],
            "note": note,
            "saved_at": saved_at,
        }

    @app.get("/v1/scenarios/{scenario_id}/solutions")
    def list_solutions(scenario_id: str):
        scenario, _ = load_scenario(scenario_id)
        if scenario is None:
            return _error(404, "not_found", f"scenario {scenario_id} not found")
        rows = store.execute(
            "SELECT saved_id, solution_id, note, saved_at, solution_doc FROM saved_solutions "
            "WHERE scenario_id = ? ORDER BY saved_at",
            (scenario_id,),
        )
        return [
            {
                "saved_id": r[0],
                "scenario_id": scenario_id,
                "solution": json.loads(r[4]),
                "note": r[2],
                "saved_at": r[3],
            }
            for r in rows
        ]

    @app.delete("/v1/scenarios/{scenario_id}/solutions/{saved_id}", status_code=204)
    def delete_solution(scenario_id: str, saved_id: str):
        rows = store.execute(
            "SELECT 1 FROM saved_solutions WHERE scenario_id = ? AND saved_id = ?",
            (scenario_id, saved_id),
        )
        if not rows:
            return _error(404, "not_found", f"saved solution {saved_id} not found")
        store.execute(
            "DELETE FROM saved_solutions WHERE scenario_id = ? AND saved_id = ?",
            (scenario_id, saved_id),
        )
        return Response(status_code=204)

    return app
