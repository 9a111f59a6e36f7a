"""Hybrid and best-effort retrieval over the two memory layers."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from .config import RetrievalConfig
from .core import ProviderParseError, ProviderUnavailable, ScoredHit, ValidationError
from .providers.embedding import Embedder
from .providers.llm import DEFAULT_BUDGETS, LLMProvider, LlmRequest, call_with_fallback
from .stores import EpisodeStore, NoteStore
from .text import count_tokens, truncate_tokens

logger = logging.getLogger(__name__)

UNANSWERABLE = "unanswerable"


@dataclass
class EvidenceBundle:
    query: str
    user_id: str
    strategy: str
    note_hits: list[ScoredHit]
    episode_hits: list[ScoredHit]
    verdict: str
    note_layer_sufficient: Optional[bool] = None
    episode_layer_sufficient: Optional[bool] = None
    retrieval_latency: float = 0.0
    evidence_tokens: int = 0
    degraded: bool = False
    snippet_tokens: int = field(default=300, repr=False)

    def __post_init__(self) -> None:
        if self.strategy not in ("hybrid", "best_effort"):
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.verdict not in ("answerable", UNANSWERABLE):
            raise ValidationError(f"bad verdict {self.verdict!r}")
        if self.strategy == "hybrid" and (
            self.note_layer_sufficient is not None or self.episode_layer_sufficient is not None
        ):
            raise ValidationError("hybrid retrieval does not judge layers separately")
        if self.strategy == "best_effort" and self.note_layer_sufficient and self.episode_hits:
            raise ValidationError("note layer sufficed, so episodes must not be consulted")

    @property
    def hits(self) -> list[ScoredHit]:
        return self.note_hits + self.episode_hits

    def snippets(self) -> list[str]:
        return [f"[{h.layer} {h.item_id}] {truncate_tokens(h.snippet, self.snippet_tokens)}" for h in self.hits]

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "user_id": self.user_id,
            "strategy": self.strategy,
            "note_hits": [h.to_dict() for h in self.note_hits],
            "episode_hits": [h.to_dict() for h in self.episode_hits],
            "verdict": self.verdict,
            "note_layer_sufficient": self.note_layer_sufficient,
            "episode_layer_sufficient": self.episode_layer_sufficient,
            "retrieval_latency": self.retrieval_latency,
            "evidence_tokens": self.evidence_tokens,
            "degraded": self.degraded,
        }


@dataclass(frozen=True)
class ReconsolidationTrigger:
    """Emitted only when notes fell short but episodes covered the query.

    The layer verdicts are part of the value and checked on construction, so
    a trigger cannot exist for any other verdict combination.
    """

    query: str
    user_id: str
    supporting_episode_ids: tuple[str, ...]
    insufficient_note_hits: tuple[str, ...] = ()
    note_verdict: str = "insufficient"
    episode_verdict: str = "sufficient"

    def __post_init__(self) -> None:
        object.__setattr__(self, "supporting_episode_ids", tuple(self.supporting_episode_ids))
        object.__setattr__(self, "insufficient_note_hits", tuple(self.insufficient_note_hits))
        if (self.note_verdict, self.episode_verdict) != ("insufficient", "sufficient"):
            raise ValidationError(
                f"reconsolidation needs (insufficient, sufficient), got ({self.note_verdict}, {self.episode_verdict})"
            )
        if not self.supporting_episode_ids:
            raise ValidationError("trigger needs supporting episodes")

    @classmethod
    def from_verdicts(
        cls, query: str, user_id: str, note_sufficient: bool, episode_sufficient: Optional[bool],
        episode_ids: Sequence[str], note_ids: Sequence[str] = (),
    ) -> Optional[ReconsolidationTrigger]:
        if note_sufficient or not episode_sufficient or not episode_ids:
            return None
        return cls(query, user_id, tuple(episode_ids), tuple(note_ids))

    def to_dict(self) -> dict[str, Any]:
        return {
            "query": self.query,
            "user_id": self.user_id,
            "supporting_episode_ids": list(self.supporting_episode_ids),
            "insufficient_note_hits": list(self.insufficient_note_hits),
        }


def judge_prompt(query: str, evidence: Sequence[str]) -> str:
    joined = "\n".join(evidence)
    return (
        "Decide whether the evidence below is sufficient to answer the question. Judge only; do not answer.\n"
        f"Question: {query}\n\nEvidence:\n{joined}\n\n"
        'Return {"verdict": "sufficient"} or {"verdict": "insufficient"}.'
    )


def judge_sufficiency(query: str, evidence_snippets: Sequence[str], provider: LLMProvider, key: str | None = None) -> str:
    """Binary sufficiency verdict. Empty evidence is insufficient without a call.

    Provider errors propagate; each caller applies its own failure policy.
    """
    if not evidence_snippets:
        return "insufficient"
    req = LlmRequest(
        task_tag="judge_sufficiency",
        prompt=judge_prompt(query, evidence_snippets),
        key=key if key is not None else query,
        payload={"query": query, "evidence": list(evidence_snippets)},
        max_output_tokens=DEFAULT_BUDGETS["judge_sufficiency"],
    )
    return provider.llm_call(req).data["verdict"]


class Retriever:
    def __init__(
        self,
        episodes: EpisodeStore,
        notes: NoteStore,
        embedder: Embedder,
        provider: LLMProvider,
        config: RetrievalConfig | None = None,
    ):
        self.episodes = episodes
        self.notes = notes
        self.embedder = embedder
        self.provider = provider
        self.config = config or RetrievalConfig()

    def _k(self, k: Optional[int]) -> int:
        k = self.config.k if k is None else k
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise ValidationError(f"k must be a positive integer, got {k!r}")
        return k

    def _finish(self, bundle: EvidenceBundle, started: float) -> EvidenceBundle:
        bundle.retrieval_latency = time.perf_counter() - started
        bundle.evidence_tokens = sum(count_tokens(s) for s in bundle.snippets())
        if bundle.verdict == "answerable" and bundle.note_hits:
            self.notes.record_usage([h.item_id for h in bundle.note_hits])
        return bundle

    def retrieve_hybrid(self, query: str, user_id: str, k: Optional[int] = None) -> EvidenceBundle:
        """Both layers at once, then a single answerability judgment."""
        k = self._k(k)
        if not query.strip():
            raise ValidationError("query is empty")
        started = time.perf_counter()
        vec = self.embedder.embed(query)
        bundle = EvidenceBundle(
            query, user_id, "hybrid",
            note_hits=self.notes.search_notes(vec, k, user_id),
            episode_hits=self.episodes.search_episodes(query, vec, k, user_id),
            verdict=UNANSWERABLE,
            snippet_tokens=self.config.snippet_tokens,
        )
        try:
            verdict = judge_sufficiency(query, bundle.snippets(), self.provider, key=f"hybrid:{query}")
        except (ProviderParseError, ProviderUnavailable) as exc:
            logger.warning("answerability judge failed for %r; answering with degraded confidence: %s", query, exc)
            verdict, bundle.degraded = "sufficient", True
        bundle.verdict = "answerable" if verdict == "sufficient" else UNANSWERABLE
        return self._finish(bundle, started)

    def retrieve_best_effort(
        self, query: str, user_id: str, k: Optional[int] = None
    ) -> tuple[EvidenceBundle, Optional[ReconsolidationTrigger]]:
        """Notes first; descend to episodes only on an insufficient verdict.

        A judge failure at the note layer counts as insufficient (descend).
        At the episode layer it also counts as insufficient, which suppresses
        the trigger: memory is never revised on unverified evidence.
        """
        k = self._k(k)
        if not query.strip():
            raise ValidationError("query is empty")
        started = time.perf_counter()
        vec = self.embedder.embed(query)
        note_hits = self.notes.search_notes(vec, k, user_id)
        bundle = EvidenceBundle(
            query, user_id, "best_effort", note_hits=note_hits, episode_hits=[], verdict=UNANSWERABLE,
            snippet_tokens=self.config.snippet_tokens,
        )
        try:
            note_ok = judge_sufficiency(query, bundle.snippets(), self.provider, key=f"note:{query}") == "sufficient"
        except (ProviderParseError, ProviderUnavailable) as exc:
            logger.warning("note-layer judge failed for %r; descending: %s", query, exc)
            note_ok = False
        bundle.note_layer_sufficient = note_ok
        if note_ok:
            bundle.verdict = "answerable"
            return self._finish(bundle, started), None

        bundle.episode_hits = self.episodes.search_episodes(query, vec, k, user_id)
        episode_ok = False
        if bundle.episode_hits:
            try:
                episode_ok = (
                    judge_sufficiency(query, bundle.snippets(), self.provider, key=f"episode:{query}") == "sufficient"
                )
            except (ProviderParseError, ProviderUnavailable) as exc:
                logger.warning("episode-layer judge failed for %r; no trigger: %s", query, exc)
        bundle.episode_layer_sufficient = episode_ok
        bundle.verdict = "answerable" if episode_ok else UNANSWERABLE
        trigger = ReconsolidationTrigger.from_verdicts(
            query, user_id, note_ok, episode_ok,
            [h.item_id for h in bundle.episode_hits], [h.item_id for h in note_hits],
        )
        return self._finish(bundle, started), trigger

    def retrieve(self, query: str, user_id: str, strategy: str | None = None, k: Optional[int] = None):
        strategy = (strategy or self.config.strategy).replace("-", "_")
        if strategy == "hybrid":
            return self.retrieve_hybrid(query, user_id, k), None
        if strategy == "best_effort":
            return self.retrieve_best_effort(query, user_id, k)
        raise ValidationError(f"unknown strategy {strategy!r}")


def answer_prompt(query: str, evidence: Sequence[str]) -> str:
    joined = "\n".join(evidence)
    return (
        "Answer the question using only the memory evidence. Be brief: a short phrase, not a sentence.\n"
        f"Question: {query}\n\nEvidence:\n{joined}\n\n"
        'Return {"answer": "..."}.'
    )


def answer(bundle: EvidenceBundle, provider: LLMProvider) -> str:
    """Generate an answer from evidence. Unanswerable bundles short-circuit."""
    if bundle.verdict == UNANSWERABLE:
        return UNANSWERABLE
    req = LlmRequest(
        task_tag="answer",
        prompt=answer_prompt(bundle.query, bundle.snippets()),
        key=bundle.query,
        payload={"query": bundle.query, "evidence": bundle.snippets()},
        max_output_tokens=DEFAULT_BUDGETS["answer"],
    )
    return call_with_fallback(provider, req, lambda exc: {"answer": ""})["answer"]
