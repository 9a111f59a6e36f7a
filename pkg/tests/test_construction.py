from __future__ import annotations

import pytest

from hiermem.config import ConstructionConfig
from hiermem.construction import build_memory
from hiermem.construction.extraction import (
    CandidateKnowledge,
    dedupe,
    extract_stage1,
    extract_stage2,
    extract_stage3_normalize,
)
from hiermem.core import ConflictError, DuplicateSessionError, ValidationError
from hiermem.providers import FaultInjectingProvider, ScriptedProvider
from hiermem.stores import EpisodeStore, NoteStore

from .conftest import make_episode, make_turns


def test_candidate_stage_invariants():
    CandidateKnowledge("x", "fact", 1)
    with pytest.raises(ValidationError):
        CandidateKnowledge("x", "preference", 1)
    with pytest.raises(ValidationError):
        CandidateKnowledge("x", "fact", 2)
    with pytest.raises(ValidationError):
        CandidateKnowledge(" ", "fact", 1)
    assert CandidateKnowledge("x", "profile", 2).confidence_label == "implicit"


def test_stage1_drops_items_outside_episode(ids, embedder):
    ep = make_episode(ids, embedder, texts=("a b c", "d e f"), start=4)
    p = ScriptedProvider({("extract_stage1", "s1/4"): {"items": [
        {"content": "ok", "source_turns": [5]}, {"content": "bad", "source_turns": [9]}, {"content": "all"}]}})
    got = extract_stage1(ep, p)
    assert [(c.content, c.source_turn_indices) for c in got] == [("ok", (5,)), ("all", (4, 5))]


def test_stage2_never_emits_facts(ids, embedder):
    ep = make_episode(ids, embedder)
    p = ScriptedProvider({("extract_stage2", "*"): {"items": [
        {"content": "likes tea", "category": "preference"}, {"content": "went out", "category": "fact"}]}})
    assert [c.category for c in extract_stage2(ep, [], p)] == ["preference"]


def test_stage_failures_yield_empty(ids, embedder):
    ep = make_episode(ids, embedder)
    p = FaultInjectingProvider(ScriptedProvider(), {"extract_stage1", "extract_stage2"}, mode="malformed")
    assert extract_stage1(ep, p) == [] and extract_stage2(ep, [], p) == []


def test_dedupe_exact_prefers_stage2_and_near_keeps_longer(embedder):
    items = [("Ann likes tea", "fact", 1), ("Ann likes tea", "preference", 2),
             ("Bob plays chess every day", "fact", 1), ("Bob plays chess every day.", "fact", 1)]
    assert dedupe(items, embedder, 0.95) == [("Ann likes tea", "preference"), ("Bob plays chess every day.", "fact")]


def test_stage3_aligns_notes(ids, embedder, clock):
    ep = make_episode(ids, embedder, texts=("I went hiking yesterday",))
    p = ScriptedProvider({("normalize", "*"): {"mapping": {}}})
    notes = extract_stage3_normalize([CandidateKnowledge("A went hiking yesterday", "fact", 1, (0,))],
                                     ep, p, embedder, ids, clock)
    assert notes[0].content == "A went hiking yesterday (2023-05-07)"
    assert notes[0].provenance == (ep.episode_id,) and notes[0].revision == 1


def _build_script(n_sessions=1):
    return ScriptedProvider({
        "segment": {"*": {"topic_boundaries": [2], "surprise_boundaries": [], "labels": []}},
        "extract_stage1": {"*": {"items": [{"content": "Ann went to Rome yesterday.", "source_turns": []}]}},
        "extract_stage2": {"*": {"items": []}},
        "normalize": {"*": {"mapping": {}}},
    })


def test_build_memory_episodes_raw_notes_aligned(ids, embedder, clock, tmp_path):
    eps, notes = EpisodeStore(), NoteStore(None, embedder)
    turns = make_turns(["I went to Rome yesterday", "nice", "what else", "nothing"])
    rep = build_memory(turns, "u1", eps, notes, _build_script(), embedder, ids, clock)
    # dedup runs within an episode, so each episode contributes its own note
    assert len(rep.episode_ids) == 2 and len(rep.op_ids) == 2
    stored = eps.session_episodes("u1", "s1")
    assert stored[0].turns[0].text == "I went to Rome yesterday"  # episodes keep raw text
    assert all("(2023-05-07)" in n.content for n in notes.active("u1"))
    assert [o.kind for o in notes.ops()] == ["ADD"] * len(rep.op_ids)


def test_build_twice_is_duplicate(ids, embedder, clock):
    eps, notes = EpisodeStore(), NoteStore(None, embedder)
    turns = make_turns(["a b", "c d", "e f"])
    build_memory(turns, "u1", eps, notes, _build_script(), embedder, ids, clock)
    with pytest.raises(DuplicateSessionError):
        build_memory(turns, "u1", eps, notes, _build_script(), embedder, ids, clock)
    assert isinstance(DuplicateSessionError("x"), ConflictError)


def test_build_resumes_after_partial_session(ids, embedder, clock):
    eps, notes = EpisodeStore(), NoteStore(None, embedder)
    turns = make_turns(["a b", "c d", "e f", "g h", "i j"])
    build_memory(turns[:3], "u1", eps, notes, _build_script(), embedder, ids, clock)
    build_memory(turns, "u1", eps, notes, _build_script(), embedder, ids, clock)
    spans = [(e.first_turn, e.last_turn) for e in eps.session_episodes("u1", "s1")]
    assert spans[0][0] == 0 and spans[-1][1] == 4
    assert all(a[1] + 1 == b[0] for a, b in zip(spans, spans[1:]))


def test_build_rejects_bad_sessions(ids, embedder, clock):
    eps, notes = EpisodeStore(), NoteStore(None, embedder)
    with pytest.raises(ValidationError):
        build_memory([], "u", eps, notes, _build_script(), embedder, ids, clock)
    gappy = make_turns(["a", "b"])[:1] + make_turns(["c"], start=2)
    with pytest.raises(ValidationError):
        build_memory(gappy, "u", eps, notes, _build_script(), embedder, ids, clock)


def test_align_episodes_option(ids, embedder, clock):
    eps, notes = EpisodeStore(), NoteStore(None, embedder)
    turns = make_turns(["I went to Rome yesterday", "nice"])
    build_memory(turns, "u1", eps, notes, _build_script(), embedder, ids, clock,
                 ConstructionConfig(align_episodes=True))
    assert "(2023-05-07)" in eps.list("u1")[0].turns[0].text
