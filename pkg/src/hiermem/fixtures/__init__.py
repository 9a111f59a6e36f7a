"""Bundled scripted fixture: three sessions of one conversation, a provider script and 12 questions."""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Optional

from ..config import Config
from ..engine import MemoryEngine
from ..providers.llm import LLMProvider, ScriptedProvider

FIXTURE_DIR = Path(__file__).resolve().parent
SESSIONS = FIXTURE_DIR / "sessions.jsonl"
QUESTIONS = FIXTURE_DIR / "questions.jsonl"
SCRIPT = FIXTURE_DIR / "script.json"
CONFIG = FIXTURE_DIR / "config.yaml"
USER = "conv-a"


def fixture_config(storage: str | Path | None = None) -> Config:
    cfg = Config.from_file(CONFIG)
    cfg.storage.path = str(storage) if storage is not None else None
    return cfg


def fixture_engine(
    storage: str | Path | None = None,
    wrap: Optional[Callable[[LLMProvider], LLMProvider]] = None,
    build: bool = True,
    config: Config | None = None,
) -> MemoryEngine:
    """Engine on the scripted fixture, optionally with every session built for ``USER``."""
    from ..ingest import read_turns

    cfg = config or fixture_config(storage)
    provider: LLMProvider = ScriptedProvider.from_file(SCRIPT)
    if wrap is not None:
        provider = wrap(provider)
    engine = MemoryEngine(cfg, provider=provider)
    if build:
        for sid, turns in read_turns(SESSIONS).items():
            engine.ingest(turns)
            if not engine.episodes.has_session(USER, sid):
                engine.build(USER, sid)
    return engine


def golden_report(storage: str | Path | None = None, strategy: str = "best_effort") -> dict:
    """Everything deterministic about a full fixture run: per-question results, aggregates, op log.

    Latencies are left out because wall time varies between runs.
    """
    from ..eval import run_eval
    from ..ingest import read_questions

    engine = fixture_engine(storage)
    try:
        records, report = run_eval(engine, read_questions(QUESTIONS), strategy=strategy)
        return {
            "records": [
                {
                    "question": r.question,
                    "category": r.category,
                    "predicted": r.predicted,
                    "f1": round(r.f1, 6),
                    "verdict": r.verdict,
                    "evidence_ids": list(r.evidence_ids),
                    "evidence_tokens": r.evidence_tokens,
                    "error": r.error,
                }
                for r in records
            ],
            "aggregate": {
                "categories": {c: {k: round(v, 6) for k, v in s.items()} for c, s in report["categories"].items()},
                "overall": {k: round(v, 6) for k, v in report["overall"].items()},
                "tokens": round(report["tokens"], 6),
            },
            "ops": [o.to_dict() for o in engine.notes.ops()],
        }
    finally:
        engine.close()
