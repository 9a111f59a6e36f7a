"""Conflict-aware reconsolidation of notes, and usage-based forgetting."""

from __future__ import annotations

import logging
import threading
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Callable, Optional

from .config import EvolutionConfig
from .construction.alignment import normalize_temporal, resolve_coreferences
from .core import (
    CATEGORIES,
    Episode,
    IdFactory,
    MemoryOp,
    ProviderParseError,
    ProviderUnavailable,
    ValidationError,
)
from .providers.embedding import Embedder
from .providers.llm import DEFAULT_BUDGETS, LLMProvider, LlmRequest
from .retrieval import ReconsolidationTrigger
from .stores import EpisodeStore, NoteStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RelationClassification:
    verdict: str
    target_note_id: Optional[str] = None
    rationale: str = ""
    merged_content: Optional[str] = None

    def __post_init__(self) -> None:
        if self.verdict == "independent" and self.target_note_id is not None:
            raise ValidationError("independent verdicts name no target")
        if self.verdict in ("extendable", "contradictory") and self.target_note_id is None:
            raise ValidationError(f"{self.verdict} verdicts need a target note")
        if self.verdict == "extendable" and not self.merged_content:
            raise ValidationError("extendable verdicts need merged content")


@dataclass(frozen=True)
class ForgettingPolicy:
    min_usage: int
    min_age: timedelta

    def __post_init__(self) -> None:
        if self.min_usage < 0 or self.min_age < timedelta(0):
            raise ValidationError("forgetting policy values must be >= 0")


def _episodes_text(episodes: list[Episode]) -> str:
    return "\n\n".join(f"Episode {e.episode_id} ({e.time_span[0].date()}):\n{e.text()}" for e in episodes)


class Reconsolidator:
    """Turns a trigger into typed note ops, applied atomically per trigger.

    Candidates are handled in extraction order against a staged copy of the
    note store, so a later candidate sees the effect of earlier ones. One
    transaction per user runs at a time.
    """

    def __init__(
        self,
        episodes: EpisodeStore,
        notes: NoteStore,
        embedder: Embedder,
        provider: LLMProvider,
        ids: IdFactory,
        clock: Callable[[], datetime],
        config: EvolutionConfig | None = None,
        align: bool = True,
    ):
        self.episodes = episodes
        self.notes = notes
        self.embedder = embedder
        self.provider = provider
        self.ids = ids
        self.clock = clock
        self.config = config or EvolutionConfig()
        self.align = align
        self.classify_calls = 0
        self._user_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._guard = threading.Lock()

    def _lock_for(self, user_id: str) -> threading.Lock:
        with self._guard:
            return self._user_locks[user_id]

    def extract(self, trigger: ReconsolidationTrigger, episodes: list[Episode]) -> list[tuple[str, str]]:
        """Query-conditioned extraction over the supporting episodes -> (content, category)."""
        req = LlmRequest(
            task_tag="extract_stage1",
            prompt=(
                "The question below could not be answered from stored notes but is answered by these dialogue "
                "episodes. Extract the self-contained statements from the episodes that answer it, as declarative "
                "sentences with explicit names and absolute dates.\n"
                'Return {"items": [{"content": "...", "category": "fact|preference|profile", '
                '"episode_id": "...", "source_turns": [..]}]}.\n\n'
                f"Question: {trigger.query}\n\n{_episodes_text(episodes)}"
            ),
            key=f"query:{trigger.query}",
            payload={"query": trigger.query, "episodes": [e.to_dict() for e in episodes]},
            max_output_tokens=DEFAULT_BUDGETS["extract_stage1"],
        )
        try:
            items = self.provider.llm_call(req).data["items"]
        except (ProviderParseError, ProviderUnavailable) as exc:
            logger.warning("query-conditioned extraction failed for %r: %s", trigger.query, exc)
            return []
        by_id = {e.episode_id: e for e in episodes}
        out: list[tuple[str, str]] = []
        for item in items:
            category = item.get("category") or "fact"
            if category not in CATEGORIES:
                logger.info("dropping reconsolidation item with category %r", category)
                continue
            ep = by_id.get(item.get("episode_id", ""), episodes[0])
            text = item["content"].strip()
            if self.align:
                src = [i for i in item["source_turns"] if ep.first_turn <= i <= ep.last_turn]
                speaker = ep.turns[(src[0] if src else ep.first_turn) - ep.first_turn].speaker
                text = resolve_coreferences(text, ep.text(), self.provider, speaker=speaker)
                text = normalize_temporal(text, ep.time_span[0])
            if (text, category) not in out:
                out.append((text, category))
        return out

    def classify(self, content: str, staged: NoteStore, user_id: str) -> Optional[RelationClassification]:
        """Relation of ``content`` to its nearest active notes; None means skip the candidate."""
        vec = self.embedder.embed(content)
        pool = [h for h in staged.search_notes(vec, self.config.match_k, user_id) if h.score >= self.config.match_floor]
        if not pool:
            return RelationClassification("independent", rationale="no note above the similarity floor")
        listing = "\n".join(f"[{i}] {h.item_id}: {h.snippet}" for i, h in enumerate(pool))
        req = LlmRequest(
            task_tag="classify_relation",
            prompt=(
                "Compare the new statement with the existing notes. Reply 'independent' if it adds unrelated "
                "knowledge, 'extendable' if it refines or extends one note (give the merged note text), or "
                "'contradictory' if it conflicts with one note.\n"
                'Return {"verdict": "...", "target": <note id or list position>, "merged_content": "...", '
                '"rationale": "..."}.\n\n'
                f"New statement: {content}\n\nExisting notes:\n{listing}"
            ),
            key=content,
            payload={"candidate": content, "notes": [{"note_id": h.item_id, "content": h.snippet} for h in pool]},
            max_output_tokens=DEFAULT_BUDGETS["classify_relation"],
        )
        self.classify_calls += 1
        try:
            data = self.provider.llm_call(req).data
        except (ProviderParseError, ProviderUnavailable) as exc:
            logger.warning("relation classification failed for %r; skipping: %s", content, exc)
            return None
        target = data["target"]
        if data["verdict"] == "independent":
            return RelationClassification("independent", rationale=data["rationale"])
        if isinstance(target, int):
            if not 0 <= target < len(pool):
                logger.warning("classification target rank %s out of range; skipping", target)
                return None
            target = pool[target].item_id
        if target not in staged or not staged.get(target).active or staged.get(target).user_id != user_id:
            logger.warning("classification target %s is not an active note of %s; skipping", target, user_id)
            return None
        return RelationClassification(data["verdict"], target, data["rationale"], data["merged_content"])

    def _op(self, trigger: ReconsolidationTrigger, kind: str, target: str, verdict: str, **kw) -> MemoryOp:
        return MemoryOp(
            op_id=self.ids.new_id("op"),
            user_id=trigger.user_id,
            kind=kind,
            target_note_ids=(target,),
            relation_verdict=verdict,
            trigger_query=trigger.query,
            supporting_episode_ids=trigger.supporting_episode_ids,
            applied_at=self.clock(),
            cause="reconsolidation",
            **kw,
        )

    def reconsolidate(self, trigger: ReconsolidationTrigger) -> list[MemoryOp]:
        if not isinstance(trigger, ReconsolidationTrigger):
            raise ValidationError("reconsolidate needs a trigger produced by best-effort retrieval")
        with self._lock_for(trigger.user_id):
            episodes = [self.episodes.get(eid) for eid in trigger.supporting_episode_ids]
            candidates = self.extract(trigger, episodes)
            staged = self.notes.clone()
            ops: list[MemoryOp] = []
            for content, category in candidates:
                if any(n.content == content for n in staged.active(trigger.user_id)):
                    logger.info("candidate %r already stored verbatim; nothing to do", content)
                    continue
                rel = self.classify(content, staged, trigger.user_id)
                if rel is None:
                    continue
                if rel.verdict == "independent":
                    new = [self._op(trigger, "ADD", self.ids.new_id("note"), "independent",
                                    new_content=content, category=category)]
                elif rel.verdict == "extendable":
                    new = [self._op(trigger, "UPDATE", rel.target_note_id, "extendable", new_content=rel.merged_content)]
                else:
                    new = [
                        self._op(trigger, "DELETE", rel.target_note_id, "contradictory"),
                        self._op(trigger, "ADD", self.ids.new_id("note"), "contradictory",
                                 new_content=content, category=category),
                    ]
                staged.apply_ops(new)
                ops.extend(new)
            # all-or-nothing: a store error here leaves the real store untouched
            self.notes.apply_ops(ops)
        logger.info("reconsolidation for %r applied %d ops", trigger.query, len(ops))
        return ops


def run_forgetting(
    policy: ForgettingPolicy,
    notes: NoteStore,
    ids: IdFactory,
    clock: Callable[[], datetime],
    user_id: Optional[str] = None,
) -> list[str]:
    """Tombstone active notes used fewer than ``min_usage`` times and older than ``min_age``.

    Episodes are never touched. Running the same policy again right away is a no-op.
    """
    now = clock()
    users = [user_id] if user_id is not None else notes.users()
    ops = []
    for u in users:
        for n in notes.active(u):
            if n.usage_count < policy.min_usage and now - n.created_at > policy.min_age:
                ops.append(
                    MemoryOp(
                        op_id=ids.new_id("op"), user_id=u, kind="DELETE", target_note_ids=(n.note_id,),
                        applied_at=now, cause="forgetting",
                    )
                )
    notes.apply_ops(ops)
    return [o.target for o in ops]


