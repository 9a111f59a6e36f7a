"""HTTP API over a MemoryEngine, with a text-exposition metrics endpoint.

Endpoints (JSON bodies)::

    POST   /v1/users/{u}/sessions/{s}/turns      {"turns": [{turn_index, speaker, text, timestamp?}],
                                                  "session_timestamp": "..."}
    POST   /v1/users/{u}/sessions/{s}/build
    POST   /v1/users/{u}/query                   {"text", "strategy"?, "k"?, "answer"?}
    GET    /v1/users/{u}/notes?status=active|tombstoned
    GET    /v1/users/{u}/episodes
    GET    /v1/users/{u}/episodes/{id}           (PUT/PATCH/DELETE -> immutability error)
    GET    /v1/users/{u}/ops
    POST   /v1/users/{u}/maintenance/forget      {"min_usage", "min_age_days"}
    GET    /health
    GET    /metrics

Errors come back as ``{"error": {"code", "message"}}``.
"""

from __future__ import annotations

import bisect
import logging
import threading
import time
from collections import Counter
from datetime import timedelta
from typing import Any, Optional

from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse

from .core import DialogueTurn, HierMemError, ImmutabilityError, ValidationError, parse_instant
from .engine import MemoryEngine

logger = logging.getLogger(__name__)

STATUS = {
    "validation": 400,
    "conflict": 409,
    "immutability": 405,
    "stale_target": 409,
    "provider_unavailable": 503,
    "internal": 500,
}
LATENCY_BUCKETS = (0.001, 0.0025, 0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5)


def error_body(code: str, message: str) -> dict[str, Any]:
    return {"error": {"code": code, "message": message}}


class Metrics:
    """Per-endpoint request counters and a retrieval-latency histogram."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.requests: Counter = Counter()
        self.total = 0
        self.buckets = [0] * (len(LATENCY_BUCKETS) + 1)
        self.latency_sum = 0.0
        self.latency_count = 0
        self.evidence_tokens = 0

    def request(self, endpoint: str) -> None:
        with self._lock:
            self.requests[endpoint] += 1
            self.total += 1

    def observe_query(self, latency: float, tokens: int) -> None:
        with self._lock:
            self.buckets[bisect.bisect_left(LATENCY_BUCKETS, latency)] += 1
            self.latency_sum += latency
            self.latency_count += 1
            self.evidence_tokens += tokens

    def render(self, engine: MemoryEngine) -> str:
        with self._lock:
            lines = ["# TYPE hiermem_requests_total counter"]
            for ep in sorted(self.requests):
                lines.append(f'hiermem_requests_total{{endpoint="{ep}"}} {self.requests[ep]}')
            lines.append(f"hiermem_requests_all_total {self.total}")
            lines.append("# TYPE hiermem_retrieval_latency_seconds histogram")
            cum = 0
            for le, n in zip(LATENCY_BUCKETS, self.buckets):
                cum += n
                lines.append(f'hiermem_retrieval_latency_seconds_bucket{{le="{le}"}} {cum}')
            lines.append(f'hiermem_retrieval_latency_seconds_bucket{{le="+Inf"}} {self.latency_count}')
            lines.append(f"hiermem_retrieval_latency_seconds_sum {self.latency_sum:.6f}")
            lines.append(f"hiermem_retrieval_latency_seconds_count {self.latency_count}")
            lines.append("# TYPE hiermem_evidence_tokens_total counter")
            lines.append(f"hiermem_evidence_tokens_total {self.evidence_tokens}")
        usage = engine.provider.usage
        lines += [
            "# TYPE hiermem_llm_tokens_total counter",
            f'hiermem_llm_tokens_total{{kind="prompt"}} {usage.prompt_tokens}',
            f'hiermem_llm_tokens_total{{kind="completion"}} {usage.completion_tokens}',
            "# TYPE hiermem_llm_calls_total counter",
            f"hiermem_llm_calls_total {engine.provider.calls}",
            "# TYPE hiermem_reconsolidation_triggers_total counter",
            f"hiermem_reconsolidation_triggers_total {engine.counters['triggers']}",
            "# TYPE hiermem_memory_ops_total counter",
            f"hiermem_memory_ops_total {engine.counters['ops']}",
        ]
        return "\n".join(lines) + "\n"


def _turns(session_id: str, body: dict[str, Any]) -> list[DialogueTurn]:
    if not isinstance(body, dict) or not isinstance(body.get("turns"), list):
        raise ValidationError('body must be {"turns": [...]}')
    default_ts = body.get("session_timestamp")
    out = []
    for i, t in enumerate(body["turns"]):
        if not isinstance(t, dict):
            raise ValidationError(f"turns[{i}] must be an object")
        missing = [f for f in ("turn_index", "speaker", "text") if f not in t]
        if missing:
            raise ValidationError(f"turns[{i}] is missing {missing}")
        ts = t.get("timestamp") or default_ts
        out.append(DialogueTurn(t["turn_index"], t["speaker"], t["text"], session_id, parse_instant(ts) if ts else None))
    return out


def create_app(engine: MemoryEngine, token: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="hiermem", version="1")
    metrics = Metrics()
    app.state.engine = engine
    app.state.metrics = metrics

    @app.middleware("http")
    async def count_and_auth(request: Request, call_next):
        if token is not None and request.url.path != "/health":
            if request.headers.get("authorization") != f"Bearer {token}":
                metrics.request("unauthorized")
                return JSONResponse(error_body("validation", "missing or wrong bearer token"), status_code=401)
        response = await call_next(request)
        route = request.scope.get("route")
        metrics.request(f"{request.method} {route.path if route else 'unmatched'}")
        return response

    @app.exception_handler(HierMemError)
    async def engine_error(request: Request, exc: HierMemError):
        return JSONResponse(error_body(exc.code, str(exc)), status_code=STATUS.get(exc.code, 500))

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(error_body("validation", str(exc.errors())), status_code=400)

    @app.exception_handler(Exception)
    async def internal(request: Request, exc: Exception):
        logger.exception("unhandled error on %s", request.url.path)
        return JSONResponse(error_body("internal", f"{type(exc).__name__}: {exc}"), status_code=500)

    @app.post("/v1/users/{user_id}/sessions/{session_id}/turns")
    def ingest(user_id: str, session_id: str, body: Any = Body(...)):
        turns = _turns(session_id, body)
        return {"user_id": user_id, "session_id": session_id, "received": len(turns), "new": engine.ingest(turns)}

    @app.post("/v1/users/{user_id}/sessions/{session_id}/build")
    def build(user_id: str, session_id: str):
        return engine.build(user_id, session_id).to_dict()

    @app.post("/v1/users/{user_id}/query")
    def query(user_id: str, body: Any = Body(...)):
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise ValidationError('body must be {"text": "...", "strategy"?: ..., "k"?: ...}')
        k = body.get("k")
        if k is not None and (not isinstance(k, int) or isinstance(k, bool)):
            raise ValidationError(f"k must be an integer, got {k!r}")
        res = engine.query(user_id, body["text"], body.get("strategy"), k, with_answer=bool(body.get("answer")))
        metrics.observe_query(res.bundle.retrieval_latency, res.bundle.evidence_tokens)
        return res.to_dict()

    @app.get("/v1/users/{user_id}/notes")
    def notes(user_id: str, status: Optional[str] = None):
        if status not in (None, "active", "tombstoned"):
            raise ValidationError("status must be active or tombstoned")
        return {"notes": [n.to_dict() for n in engine.notes.list(user_id, status)]}

    @app.get("/v1/users/{user_id}/episodes")
    def episodes(user_id: str):
        return {"episodes": [e.to_dict() for e in engine.episodes.list(user_id)]}

    @app.get("/v1/users/{user_id}/episodes/{episode_id}")
    def episode(user_id: str, episode_id: str):
        e = engine.episodes.get(episode_id)
        if e.user_id != user_id:
            raise ValidationError(f"unknown episode {episode_id}")
        return e.to_dict()

    @app.api_route("/v1/users/{user_id}/episodes/{episode_id}", methods=["PUT", "PATCH", "DELETE"])
    def mutate_episode(user_id: str, episode_id: str):
        engine.episodes.update_episode(episode_id)
        raise ImmutabilityError(f"episode {episode_id} is immutable")  # unreachable; update_episode raises

    @app.get("/v1/users/{user_id}/ops")
    def ops(user_id: str):
        return {"ops": [o.to_dict() for o in engine.notes.ops(user_id)]}

    @app.post("/v1/users/{user_id}/maintenance/forget")
    def forget(user_id: str, body: Any = Body(...)):
        if not isinstance(body, dict):
            raise ValidationError('body must be {"min_usage": int, "min_age_days": number}')
        try:
            min_usage = int(body["min_usage"])
            days = float(body["min_age_days"])
        except (KeyError, TypeError, ValueError):
            raise ValidationError("min_usage and min_age_days are required numbers") from None
        return {"tombstoned": engine.forget(min_usage, timedelta(days=days), user_id)}

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/metrics", response_class=PlainTextResponse)
    def metrics_endpoint():
        return metrics.render(engine)

    return app


def serve(engine: MemoryEngine, host: str | None = None, port: int | None = None) -> None:
    import uvicorn

    cfg = engine.config.service
    app = create_app(engine, cfg.bearer_token)
    uvicorn.run(app, host=host or cfg.host, port=port if port is not None else cfg.port, log_level="info")
