"""Three-stage knowledge extraction from an episode.

Stage 1 pulls explicit facts, stage 2 implicit preferences/profile traits
(never new facts), stage 3 aligns and deduplicates without dropping anything
else. Provider trouble in stages 1-2 yields an empty list: construction is
best-effort and a missed extraction can be recovered later by reconsolidation.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Sequence

import numpy as np

from ..core import CATEGORIES, Episode, IdFactory, Note, ProviderParseError, ValidationError
from ..providers.embedding import Embedder
from ..providers.llm import DEFAULT_BUDGETS, LLMProvider, LlmRequest, ProviderUnavailable
from .alignment import normalize_temporal, resolve_coreferences

logger = logging.getLogger(__name__)

DEDUP_THRESHOLD = 0.95


@dataclass(frozen=True)
class CandidateKnowledge:
    content: str
    category: str
    stage: int
    source_turn_indices: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "source_turn_indices", tuple(self.source_turn_indices))
        if not self.content.strip():
            raise ValidationError("candidate content is empty")
        if self.category not in CATEGORIES:
            raise ValidationError(f"bad category {self.category!r}")
        if self.stage == 1 and self.category != "fact":
            raise ValidationError("stage-1 candidates are facts")
        if self.stage == 2 and self.category == "fact":
            raise ValidationError("stage-2 candidates are preferences or profile traits")
        if self.stage not in (1, 2):
            raise ValidationError(f"bad stage {self.stage}")

    @property
    def confidence_label(self) -> str:
        return "explicit" if self.stage == 1 else "implicit"


def episode_key(episode: Episode) -> str:
    return f"{episode.session_id}/{episode.first_turn}"


def _dialogue(episode: Episode) -> str:
    return "\n".join(f"[{t.turn_index}] {t.speaker}: {t.text}" for t in episode.turns)


def _call_items(provider: LLMProvider, req: LlmRequest) -> list[dict]:
    try:
        return provider.llm_call(req).data["items"]
    except (ProviderParseError, ProviderUnavailable) as exc:
        logger.warning("%s for %s failed: %s", req.task_tag, req.key, exc)
        return []


def _source_turns(item: dict, episode: Episode) -> tuple[int, ...] | None:
    src = item.get("source_turns") or []
    if not src:
        return tuple(t.turn_index for t in episode.turns)
    if any(not episode.first_turn <= i <= episode.last_turn for i in src):
        return None
    return tuple(src)


def extract_stage1(episode: Episode, provider: LLMProvider) -> list[CandidateKnowledge]:
    req = LlmRequest(
        task_tag="extract_stage1",
        prompt=(
            "List the objective facts and events stated in this dialogue as short, self-contained declarative "
            "sentences that make sense without the dialogue. Cite the turn indices each one comes from.\n"
            'Return {"items": [{"content": "...", "source_turns": [..]}]}.\n\n' + _dialogue(episode)
        ),
        key=episode_key(episode),
        payload={"episode": episode.to_dict()},
        max_output_tokens=DEFAULT_BUDGETS["extract_stage1"],
    )
    out = []
    for item in _call_items(provider, req):
        src = _source_turns(item, episode)
        if src is None:
            logger.warning("stage-1 item %r cites turns outside the episode; dropped", item["content"])
            continue
        out.append(CandidateKnowledge(item["content"].strip(), "fact", 1, src))
    return out


def extract_stage2(
    episode: Episode, stage1: Sequence[CandidateKnowledge], provider: LLMProvider
) -> list[CandidateKnowledge]:
    facts = "\n".join(f"- {c.content}" for c in stage1) or "- (none)"
    req = LlmRequest(
        task_tag="extract_stage2",
        prompt=(
            "From the dialogue and the facts already extracted, infer only high-confidence user preferences "
            "(category 'preference') and stable user traits (category 'profile'). Do not state new facts.\n"
            'Return {"items": [{"content": "...", "category": "preference|profile", "source_turns": [..]}]}.\n\n'
            f"Facts:\n{facts}\n\nDialogue:\n{_dialogue(episode)}"
        ),
        key=episode_key(episode),
        payload={"episode": episode.to_dict(), "stage1": [c.content for c in stage1]},
        max_output_tokens=DEFAULT_BUDGETS["extract_stage2"],
    )
    out = []
    for item in _call_items(provider, req):
        cat = item.get("category")
        if cat not in ("preference", "profile"):
            logger.info("stage-2 item %r labelled %r dropped", item["content"], cat)
            continue
        src = _source_turns(item, episode)
        if src is None:
            logger.warning("stage-2 item %r cites turns outside the episode; dropped", item["content"])
            continue
        out.append(CandidateKnowledge(item["content"].strip(), cat, 2, src))
    return out


def _speaker_of(c: CandidateKnowledge, episode: Episode) -> str:
    first = c.source_turn_indices[0] if c.source_turn_indices else episode.first_turn
    return episode.turns[first - episode.first_turn].speaker


def align_candidate(c: CandidateKnowledge, episode: Episode, provider: LLMProvider) -> str:
    text = resolve_coreferences(c.content, episode.text(), provider, speaker=_speaker_of(c, episode))
    return normalize_temporal(text, episode.time_span[0])


@dataclass
class _Kept:
    content: str
    category: str
    stage: int
    vec: np.ndarray


def dedupe(
    items: Sequence[tuple[str, str, int]], embedder: Embedder, threshold: float = DEDUP_THRESHOLD
) -> list[tuple[str, str]]:
    """Collapse exact and near-duplicate (content, category, stage) triples.

    Exact duplicates keep the first position; a stage-2 label wins over a
    stage-1 one. Near duplicates (cosine >= threshold) keep the longer text.
    """
    kept: list[_Kept] = []
    for content, category, stage in items:
        norm = re.sub(r"\s+", " ", content).strip()
        vec = embedder.embed(norm)
        for k in kept:
            same = k.content == norm
            if same or float(np.dot(k.vec, vec)) >= threshold:
                if same and stage == 2 and k.stage == 1:
                    k.category, k.stage = category, stage
                elif not same and len(norm) > len(k.content):
                    k.content, k.vec = norm, vec
                break
        else:
            kept.append(_Kept(norm, category, stage, vec))
    return [(k.content, k.category) for k in kept]


def extract_stage3_normalize(
    candidates: Sequence[CandidateKnowledge],
    episode: Episode,
    provider: LLMProvider,
    embedder: Embedder,
    ids: IdFactory,
    clock: Callable[[], datetime],
    dedup_threshold: float = DEDUP_THRESHOLD,
    align: bool = True,
) -> list[Note]:
    """Align, deduplicate and wrap candidates as revision-1 notes."""
    aligned = [
        (align_candidate(c, episode, provider) if align else c.content, c.category, c.stage) for c in candidates
    ]
    now = clock()
    return [
        Note(
            note_id=ids.new_id("note"),
            user_id=episode.user_id,
            content=content,
            category=category,
            provenance=(episode.episode_id,),
            created_at=now,
            updated_at=now,
            embedding=tuple(embedder.embed(content)),
        )
        for content, category in dedupe(aligned, embedder, dedup_threshold)
    ]
