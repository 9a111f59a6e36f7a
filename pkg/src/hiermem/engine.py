"""One object owning a storage directory, its stores and the configured providers."""

from __future__ import annotations

import logging
import threading
from collections import Counter
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path
from typing import Any, Optional

from filelock import FileLock, Timeout

from .config import Config
from .construction import build_memory
from .core import (
    BuildReport,
    ConflictError,
    DialogueTurn,
    FixedClock,
    HierMemError,
    IdFactory,
    MemoryOp,
    SystemClock,
    ValidationError,
)
from .evolution import ForgettingPolicy, Reconsolidator, run_forgetting
from .providers import Embedder, HashingEmbedder, HeuristicProvider, LLMProvider, RemoteEmbedder, RemoteProvider, ScriptedProvider
from .retrieval import EvidenceBundle, ReconsolidationTrigger, Retriever, answer
from .stores import EpisodeStore, NoteStore, TurnStaging

logger = logging.getLogger(__name__)


def make_provider(config: Config) -> LLMProvider:
    pc = config.provider
    if pc.kind == "scripted":
        return ScriptedProvider.from_file(pc.script_path)
    if pc.kind == "heuristic":
        return HeuristicProvider()
    return RemoteProvider(pc.base_url, pc.model, api_key_env=pc.api_key_env, timeout=pc.timeout,
                          retries=pc.retries, seed=config.seed)


def make_embedder(config: Config) -> Embedder:
    ec = config.embedding
    if ec.kind == "hashing":
        return HashingEmbedder(ec.dim)
    return RemoteEmbedder(ec.base_url, ec.model, ec.dim, api_key_env=ec.api_key_env)


@dataclass
class QueryResult:
    bundle: EvidenceBundle
    trigger: Optional[ReconsolidationTrigger] = None
    ops: list[MemoryOp] = field(default_factory=list)
    answer: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "evidence": self.bundle.to_dict(),
            "trigger": self.trigger.to_dict() if self.trigger else None,
            "ops": [o.to_dict() for o in self.ops],
            "answer": self.answer,
        }


class MemoryEngine:
    """Stores + providers + the operations the CLI and service expose.

    With ``storage.path`` unset everything lives in memory. With a path, the
    directory holds ``episodes.log``, ``ops.log``, ``notes.snapshot`` and
    ``turns.log`` and is guarded by ``.lock`` while the engine is open.
    """

    def __init__(
        self,
        config: Config | None = None,
        provider: LLMProvider | None = None,
        embedder: Embedder | None = None,
        clock=None,
        lock: bool = True,
    ):
        self.config = config or Config()
        self.clock = clock or (FixedClock(self.config.clock) if self.config.clock else SystemClock())
        self.ids = IdFactory(self.clock, seed=self.config.seed)
        self.provider = provider or make_provider(self.config)
        self.embedder = embedder or make_embedder(self.config)
        path = self.config.storage.path
        self.path = Path(path) if path else None
        self._filelock: Optional[FileLock] = None
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            if lock:
                self._filelock = FileLock(str(self.path / ".lock"))
                try:
                    self._filelock.acquire(timeout=0)
                except Timeout:
                    raise ConflictError(f"storage directory {self.path} is locked by another process") from None
        rc = self.config.retrieval
        self.episodes = EpisodeStore(
            self.path / "episodes.log" if self.path else None, rc.episode_vector_weight, rc.episode_lexical_weight
        )
        self.notes = NoteStore(self.path, self.embedder, self.config.storage.snapshot_every)
        self.staging = TurnStaging(self.path / "turns.log" if self.path else None)
        for e in self.episodes.all_ids():
            self.ids.observe(e)
        for i in self.notes.all_ids():
            self.ids.observe(i)
        self.retriever = Retriever(self.episodes, self.notes, self.embedder, self.provider, rc)
        self.reconsolidator = Reconsolidator(
            self.episodes, self.notes, self.embedder, self.provider, self.ids, self.clock,
            self.config.evolution, align=self.config.construction.align_notes,
        )
        self.pending: list[ReconsolidationTrigger] = []
        self.counters: Counter = Counter()
        self._pending_lock = threading.Lock()

    def close(self) -> None:
        if self._filelock is not None and self._filelock.is_locked:
            self._filelock.release()

    def __enter__(self) -> MemoryEngine:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- construction --------------------------------------------------------

    def ingest(self, turns: list[DialogueTurn]) -> int:
        return self.staging.add(turns)

    def build(self, user_id: str, session_id: str, turns: list[DialogueTurn] | None = None) -> BuildReport:
        if turns is not None:
            self.ingest(turns)
        session = self.staging.session(session_id)
        if not session:
            raise ValidationError(f"no staged turns for session {session_id}")
        report = build_memory(
            session, user_id, self.episodes, self.notes, self.provider, self.embedder, self.ids, self.clock,
            self.config.construction,
        )
        self.counters["ops"] += len(report.op_ids)
        return report

    # -- retrieval + evolution -----------------------------------------------

    def query(
        self, user_id: str, text: str, strategy: str | None = None, k: int | None = None, with_answer: bool = False
    ) -> QueryResult:
        bundle, trigger = self.retriever.retrieve(text, user_id, strategy, k)
        result = QueryResult(bundle, trigger)
        if trigger is not None:
            self.counters["triggers"] += 1
            mode = self.config.evolution.mode
            if mode == "sync":
                result.ops = self._reconsolidate(trigger)
            elif mode == "deferred":
                with self._pending_lock:
                    self.pending.append(trigger)
        if with_answer:
            result.answer = answer(bundle, self.provider)
        return result

    def _reconsolidate(self, trigger: ReconsolidationTrigger) -> list[MemoryOp]:
        try:
            ops = self.reconsolidator.reconsolidate(trigger)
        except HierMemError as exc:
            logger.error("reconsolidation for %r aborted, nothing applied: %s", trigger.query, exc)
            self.counters["reconsolidation_aborts"] += 1
            return []
        self.counters["ops"] += len(ops)
        return ops

    def process_pending(self) -> list[MemoryOp]:
        with self._pending_lock:
            queue, self.pending = self.pending, []
        ops: list[MemoryOp] = []
        for trig in queue:
            ops.extend(self._reconsolidate(trig))
        return ops

    def forget(self, min_usage: int, min_age: timedelta, user_id: str | None = None) -> list[str]:
        forgotten = run_forgetting(ForgettingPolicy(min_usage, min_age), self.notes, self.ids, self.clock, user_id)
        self.counters["ops"] += len(forgotten)
        return forgotten

    # -- inspection ----------------------------------------------------------

    def has_memory(self, user_id: str) -> bool:
        return bool(self.episodes.list(user_id))
