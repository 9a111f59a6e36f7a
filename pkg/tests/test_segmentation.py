from __future__ import annotations

import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiermem.construction.segmentation import (
    SegmentationResult,
    episode_embedding_text,
    fallback_segmentation,
    fuse_boundaries,
    segment,
    segment_session,
)
from hiermem.core import ValidationError
from hiermem.providers import FaultInjectingProvider, ScriptedProvider

from .conftest import make_turns


def channel_provider(topic, surprise, labels=()):
    return ScriptedProvider({("segment", "*"): {
        "topic_boundaries": list(topic), "surprise_boundaries": list(surprise), "labels": list(labels)}})


def partition_trial(rng: random.Random, embedder, ids, clock) -> tuple[bool, bool]:
    """One randomized session: (episodes partition the turns, boundaries == union of channels)."""
    n = rng.randint(1, 100)
    turns = make_turns([f"turn {i} about thing {rng.randint(0, 9)}" for i in range(n)], session_id=f"s{n}")
    topic = {rng.randrange(n) for _ in range(rng.randint(0, 6))}
    surprise = {rng.randrange(n) for _ in range(rng.randint(0, 6))}
    eps = segment_session(turns, channel_provider(topic, surprise), embedder, "u", ids, clock)
    covered = [t.turn_index for e in eps for t in e.turns]
    partition = covered == list(range(n)) and all(e.turns for e in eps)
    starts = {e.first_turn for e in eps}
    union = starts == (topic | surprise | {0})
    return partition, union


def test_partition_property_200_sessions(embedder, ids, clock):
    rng = random.Random(7)
    started = time.perf_counter()
    results = [partition_trial(rng, embedder, ids, clock) for _ in range(200)]
    assert all(p for p, _ in results) and all(u for _, u in results)
    assert time.perf_counter() - started < 5.0


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 100).flatmap(lambda n: st.tuples(
    st.just(n), st.sets(st.integers(0, n - 1)), st.sets(st.integers(0, n - 1)))))
def test_fusion_is_set_union(args):
    n, t, s = args
    bounds, reasons = fuse_boundaries(t, s, n)
    assert bounds == sorted(t | s | {0})
    for b, r in zip(bounds, reasons):
        if b == 0:
            assert r == "session_start"
        else:
            assert r == {(True, True): "both", (True, False): "topic_shift", (False, True): "surprise"}[(b in t, b in s)]


def test_fusion_rejects_out_of_range():
    with pytest.raises(ValidationError):
        fuse_boundaries([5], [], 5)


def test_reasons_and_labels(embedder, ids, clock):
    turns = make_turns([f"t{i}" for i in range(8)])
    p = channel_provider([3], [3, 5], [{"start": 3, "topic": "pets", "summary": "they discuss pets"}])
    eps = segment_session(turns, p, embedder, "u", ids, clock)
    assert [(e.first_turn, e.last_turn, e.boundary_reason) for e in eps] == [
        (0, 2, "session_start"), (3, 4, "both"), (5, 7, "surprise")]
    assert eps[1].topic == "pets" and eps[1].meta == {"source": "ingest", "boundary_reason": "both"}
    assert eps[0].topic and eps[0].topic_summary  # heuristic label fills the gap


def test_fallback_on_provider_failure_and_invalid_boundaries(embedder, ids, clock):
    turns = make_turns([f"t{i}" for i in range(23)])
    down = FaultInjectingProvider(channel_provider([], []), {"segment"}, mode="transport")
    res = segment(turns, down, window=10)
    assert res.boundaries == (0, 10, 20) and set(res.reasons) == {"session_start"}
    res = segment(turns, channel_provider([99], []), window=10)
    assert res == fallback_segmentation(turns, 10)


def test_segment_offsets_resumed_tail(embedder, ids, clock):
    turns = make_turns([f"t{i}" for i in range(10)], start=5)
    eps = segment_session(turns, channel_provider([8], []), embedder, "u", ids, clock)
    assert [(e.first_turn, e.last_turn) for e in eps] == [(5, 7), (8, 14)]


def test_timestamps_missing_fall_back_to_clock(embedder, ids, clock):
    from hiermem.core import DialogueTurn

    turns = [DialogueTurn(i, "A", "hi there", "s") for i in range(3)]
    eps = segment_session(turns, channel_provider([], []), embedder, "u", ids, clock)
    assert eps[0].time_span == (clock(), clock())


def test_embedding_text_uses_first_and_last_turn():
    turns = make_turns(["first words", "middle", "last words"])
    text = episode_embedding_text("topic", "summary", turns)
    assert "first words" in text and "last words" in text and "middle" not in text


def test_segmentation_result_validates():
    with pytest.raises(ValidationError):
        SegmentationResult((1, 2), ("a", "b"), (("", ""), ("", "")))
    with pytest.raises(ValidationError):
        SegmentationResult((0, 0), ("a", "b"), (("", ""), ("", "")))
