"""Dual-channel episode segmentation.

One provider call returns two boundary sets: topic shifts and surprise
(salient discontinuities). The engine, not the provider, fuses them with an
OR rule and validates the result, so fusion is testable on its own.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from datetime import datetime
from typing import Callable, Iterable, Sequence

from ..core import DialogueTurn, Episode, IdFactory, ProviderParseError, ValidationError, check_contiguous
from ..providers.embedding import Embedder
from ..providers.llm import DEFAULT_BUDGETS, LLMProvider, LlmRequest, ProviderUnavailable
from ..text import content_words, truncate_tokens

logger = logging.getLogger(__name__)

FALLBACK_WINDOW = 10
EMBED_TOKEN_BUDGET = 512


@dataclass(frozen=True)
class SegmentationResult:
    boundaries: tuple[int, ...]
    reasons: tuple[str, ...]
    labels: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        b = list(self.boundaries)
        if not b or b[0] != 0 or any(x >= y for x, y in zip(b, b[1:])):
            raise ValidationError(f"boundaries must start at 0 and strictly increase: {b}")
        if not (len(self.reasons) == len(self.labels) == len(b)):
            raise ValidationError("one reason and one label per boundary")

    def spans(self, n: int) -> list[tuple[int, int]]:
        """Half-open turn ranges, one per segment."""
        ends = list(self.boundaries[1:]) + [n]
        return list(zip(self.boundaries, ends))


def fuse_boundaries(topic: Iterable[int], surprise: Iterable[int], n: int) -> tuple[list[int], list[str]]:
    """OR-fuse two boundary sets over a session of ``n`` turns.

    Turn 0 always opens a segment with reason ``session_start``; elsewhere
    the reason says which channel fired, ``both`` when the two agree.
    """
    t, s = set(topic), set(surprise)
    bad = [i for i in t | s if not 0 <= i < n]
    if bad:
        raise ValidationError(f"boundary indices out of range [0, {n}): {sorted(bad)}")
    bounds = sorted(t | s | {0})
    reasons = []
    for b in bounds:
        if b == 0:
            reasons.append("session_start")
        elif b in t and b in s:
            reasons.append("both")
        elif b in t:
            reasons.append("topic_shift")
        else:
            reasons.append("surprise")
    return bounds, reasons


def heuristic_label(turns: Sequence[DialogueTurn]) -> tuple[str, str]:
    """Topic = up to three most frequent content words; summary = opening words."""
    counts = Counter(w for t in turns for w in content_words(t.text) if len(w) > 2)
    top = [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:3]]
    topic = " ".join(top) if top else "conversation"
    opening = " ".join(f"{t.speaker}: {t.text}" for t in turns[:2])
    return topic, truncate_tokens(opening, 40)


def segment_prompt(turns: Sequence[DialogueTurn]) -> str:
    lines = "\n".join(f"[{t.turn_index}] {t.speaker}: {t.text}" for t in turns)
    return (
        "Segment the dialogue into episodes. Report two independent boundary channels, each a list of turn "
        "indices where a new episode starts: topic_boundaries (a shift in discourse goal or subtopic) and "
        "surprise_boundaries (an abrupt change in intent or emotional state). Also give each resulting segment "
        "a short topic and a one-sentence summary.\n"
        'Return {"topic_boundaries": [...], "surprise_boundaries": [...], '
        '"labels": [{"start": <turn index>, "topic": "...", "summary": "..."}]}.\n\n'
        f"Dialogue:\n{lines}"
    )


def fallback_segmentation(turns: Sequence[DialogueTurn], window: int = FALLBACK_WINDOW) -> SegmentationResult:
    n = len(turns)
    bounds = list(range(0, n, window))
    labels = [heuristic_label(turns[b : b + window]) for b in bounds]
    return SegmentationResult(tuple(bounds), tuple("session_start" for _ in bounds), tuple(labels))


def segment(turns: Sequence[DialogueTurn], provider: LLMProvider, window: int = FALLBACK_WINDOW) -> SegmentationResult:
    """Boundaries in the result are positions in ``turns``; the provider speaks turn indices."""
    if not turns:
        raise ValidationError("cannot segment an empty session")
    check_contiguous(turns, start=None)
    n = len(turns)
    offset = turns[0].turn_index
    req = LlmRequest(
        task_tag="segment",
        prompt=segment_prompt(turns),
        key=turns[0].session_id,
        payload={"turns": [t.to_dict() for t in turns]},
        max_output_tokens=DEFAULT_BUDGETS["segment"],
    )
    try:
        data = provider.llm_call(req).data
        bounds, reasons = fuse_boundaries(
            [b - offset for b in data["topic_boundaries"]], [b - offset for b in data["surprise_boundaries"]], n
        )
    except (ProviderParseError, ProviderUnavailable, ValidationError) as exc:
        logger.warning("segmentation of %s failed (%s); using %d-turn windows", turns[0].session_id, exc, window)
        return fallback_segmentation(turns, window)
    given = {lab["start"] - offset: (lab["topic"], lab["summary"]) for lab in data["labels"]}
    ends = bounds[1:] + [n]
    labels = []
    for b, e in zip(bounds, ends):
        topic, summary = given.get(b, ("", ""))
        if not topic.strip() or not summary.strip():
            h_topic, h_summary = heuristic_label(turns[b:e])
            topic, summary = topic.strip() or h_topic, summary.strip() or h_summary
        labels.append((topic, summary))
    return SegmentationResult(tuple(bounds), tuple(reasons), tuple(labels))


def episode_embedding_text(topic: str, summary: str, turns: Sequence[DialogueTurn]) -> str:
    parts = [topic, summary, f"{turns[0].speaker}: {turns[0].text}"]
    if len(turns) > 1:
        parts.append(f"{turns[-1].speaker}: {turns[-1].text}")
    return truncate_tokens(" ".join(parts), EMBED_TOKEN_BUDGET)


def segment_session(
    turns: Sequence[DialogueTurn],
    provider: LLMProvider,
    embedder: Embedder,
    user_id: str,
    ids: IdFactory,
    clock: Callable[[], datetime],
    window: int = FALLBACK_WINDOW,
) -> list[Episode]:
    """Split one session into episodes that partition its turns."""
    result = segment(turns, provider, window)
    fallback_time = None
    episodes = []
    for (lo, hi), reason, (topic, summary) in zip(result.spans(len(turns)), result.reasons, result.labels):
        chunk = tuple(turns[lo:hi])
        stamps = [t.timestamp for t in chunk if t.timestamp is not None]
        if not stamps:
            fallback_time = fallback_time or clock()
            stamps = [fallback_time]
        episodes.append(
            Episode(
                episode_id=ids.new_id("episode"),
                user_id=user_id,
                session_id=chunk[0].session_id,
                topic=topic,
                topic_summary=summary,
                turns=chunk,
                time_span=(min(stamps), max(stamps)),
                boundary_reason=reason,
                embedding=tuple(embedder.embed(episode_embedding_text(topic, summary, chunk))),
                metadata={"source": "ingest", "boundary_reason": reason},
            )
        )
    return episodes
