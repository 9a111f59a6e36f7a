from __future__ import annotations

import itertools
import random

import pytest

from hiermem.config import RetrievalConfig
from hiermem.core import ValidationError
from hiermem.fixtures import USER, fixture_engine
from hiermem.providers import FaultInjectingProvider, LlmUsage, ScriptedProvider
from hiermem.retrieval import UNANSWERABLE, EvidenceBundle, ReconsolidationTrigger, Retriever, answer
from hiermem.stores import EpisodeStore, NoteStore

from .conftest import add_op, make_episode

VERDICTS = ("sufficient", "insufficient")


def _stores(ids, embedder, clock):
    eps, notes = EpisodeStore(), NoteStore(None, embedder)
    ep = make_episode(ids, embedder, user="u1", texts=("Ann adopted a cat named Milo",), topic="cat")
    eps.append_episode(ep)
    notes.apply_op(add_op(ids, clock, "Ann has a cat", episodes=(ep.episode_id,)))
    return eps, notes, ep


def trigger_truth_table(ids, embedder, clock) -> dict[tuple[str, str], bool]:
    """(note verdict, episode verdict) -> whether best-effort retrieval emitted a trigger."""
    out = {}
    for nv, ev in itertools.product(VERDICTS, VERDICTS):
        eps, notes, _ = _stores(ids, embedder, clock)
        p = ScriptedProvider({"judge_sufficiency": {"note:*": {"verdict": nv}, "episode:*": {"verdict": ev}}})
        bundle, trig = Retriever(eps, notes, embedder, p).retrieve_best_effort("What is Ann's cat called?", "u1")
        out[(nv, ev)] = trig is not None
        if trig is not None:
            assert (trig.note_verdict, trig.episode_verdict) == ("insufficient", "sufficient")
        # constructor agrees with the pipeline
        try:
            ReconsolidationTrigger("q", "u1", ("ep",), note_verdict=nv, episode_verdict=ev)
            constructed = True
        except ValidationError:
            constructed = False
        assert constructed == out[(nv, ev)]
    return out


def test_trigger_truth_table(ids, embedder, clock):
    table = trigger_truth_table(ids, embedder, clock)
    assert table == {
        ("sufficient", "sufficient"): False,
        ("sufficient", "insufficient"): False,
        ("insufficient", "sufficient"): True,
        ("insufficient", "insufficient"): False,
    }


def test_trigger_requires_episodes():
    with pytest.raises(ValidationError):
        ReconsolidationTrigger("q", "u", ())
    assert ReconsolidationTrigger.from_verdicts("q", "u", False, True, []) is None


def test_best_effort_skips_episodes_when_notes_suffice(ids, embedder, clock):
    eps, notes, _ = _stores(ids, embedder, clock)
    p = ScriptedProvider({"judge_sufficiency": {"note:*": {"verdict": "sufficient"}}})
    bundle, trig = Retriever(eps, notes, embedder, p).retrieve_best_effort("Ann cat?", "u1")
    assert bundle.episode_hits == [] and eps.query_count == 0 and trig is None
    assert bundle.note_layer_sufficient is True and bundle.episode_layer_sufficient is None
    assert bundle.verdict == "answerable"


def test_hybrid_searches_both_and_judges_once(ids, embedder, clock):
    eps, notes, ep = _stores(ids, embedder, clock)
    p = ScriptedProvider({"judge_sufficiency": {"hybrid:*": {"verdict": "insufficient"}}})
    b = Retriever(eps, notes, embedder, p).retrieve_hybrid("Ann cat?", "u1")
    assert [h.item_id for h in b.episode_hits] == [ep.episode_id] and len(b.note_hits) == 1
    assert b.verdict == UNANSWERABLE and p.calls == 1
    assert b.note_layer_sufficient is None and b.episode_layer_sufficient is None


def test_empty_memory_is_unanswerable_without_provider_calls(embedder):
    p = ScriptedProvider()
    r = Retriever(EpisodeStore(), NoteStore(None, embedder), embedder, p)
    assert r.retrieve_hybrid("anything?", "nobody").verdict == UNANSWERABLE
    b, trig = r.retrieve_best_effort("anything?", "nobody")
    assert b.verdict == UNANSWERABLE and trig is None and p.calls == 0


def test_judge_failure_policies(ids, embedder, clock):
    eps, notes, _ = _stores(ids, embedder, clock)
    down = FaultInjectingProvider(ScriptedProvider(), {"judge_sufficiency"}, mode="transport")
    r = Retriever(eps, notes, embedder, down)
    hb = r.retrieve_hybrid("Ann cat?", "u1")
    assert hb.verdict == "answerable" and hb.degraded
    be, trig = r.retrieve_best_effort("Ann cat?", "u1")
    # note failure descends, episode failure suppresses the trigger
    assert be.episode_hits and trig is None and be.verdict == UNANSWERABLE


def test_bad_k_and_empty_query(ids, embedder, clock):
    eps, notes, _ = _stores(ids, embedder, clock)
    r = Retriever(eps, notes, embedder, ScriptedProvider())
    for k in (0, -1, 1.5, True):
        with pytest.raises(ValidationError):
            r.retrieve_hybrid("q", "u1", k)
    with pytest.raises(ValidationError):
        r.retrieve("  ", "u1")
    with pytest.raises(ValidationError):
        r.retrieve("q", "u1", strategy="random")


def test_usage_recorded_only_for_answerable(ids, embedder, clock):
    eps, notes, _ = _stores(ids, embedder, clock)
    p = ScriptedProvider({"judge_sufficiency": {"hybrid:yes": {"verdict": "sufficient"},
                                                "hybrid:no": {"verdict": "insufficient"}}})
    r = Retriever(eps, notes, embedder, p)
    r.retrieve_hybrid("no", "u1")
    assert notes.active("u1")[0].usage_count == 0
    r.retrieve_hybrid("yes", "u1")
    assert notes.active("u1")[0].usage_count == 1


def test_snippets_are_truncated(ids, embedder, clock):
    eps, notes = EpisodeStore(), NoteStore(None, embedder)
    eps.append_episode(make_episode(ids, embedder, texts=(" ".join(["word"] * 1000),)))
    p = ScriptedProvider({"judge_sufficiency": {"*": {"verdict": "sufficient"}}})
    b = Retriever(eps, notes, embedder, p, RetrievalConfig(snippet_tokens=50)).retrieve_hybrid("word", "u1")
    assert b.evidence_tokens <= 60


def test_bundle_invariants():
    with pytest.raises(ValidationError):
        EvidenceBundle("q", "u", "hybrid", [], [], "answerable", note_layer_sufficient=True)
    with pytest.raises(ValidationError):
        EvidenceBundle("q", "u", "other", [], [], "answerable")


def test_answer_short_circuits_unanswerable():
    b = EvidenceBundle("q", "u", "hybrid", [], [], UNANSWERABLE)
    assert answer(b, ScriptedProvider()) == UNANSWERABLE


# -- layer skip + evidence dominance -------------------------------------------------


def layer_skip_workload(n_queries: int = 50, seed: int = 11):
    """All note verdicts sufficient: returns (episode queries during best-effort, per-query token pairs)."""
    engine = fixture_engine(wrap=_AllSufficient)
    rng = random.Random(seed)
    vocab = sorted({w for n in engine.notes.active(USER) for w in n.content.split()})
    queries = [" ".join(rng.sample(vocab, 4)) + "?" for _ in range(n_queries)]
    before = engine.episodes.query_count
    be = [engine.query(USER, q, strategy="best_effort").bundle.evidence_tokens for q in queries]
    episode_queries = engine.episodes.query_count - before
    hy = [engine.query(USER, q, strategy="hybrid").bundle.evidence_tokens for q in queries]
    return episode_queries, list(zip(be, hy))


class _AllSufficient(ScriptedProvider):
    """Every sufficiency judgement says sufficient; other tasks go to the wrapped provider."""

    def __init__(self, inner):
        super().__init__()
        self.inner = inner

    def complete(self, request):
        if request.task_tag == "judge_sufficiency":
            return '{"verdict": "sufficient"}', LlmUsage()
        return self.inner.complete(request)


def test_layer_skip_and_evidence_dominance():
    episode_queries, pairs = layer_skip_workload()
    assert episode_queries == 0
    assert all(b <= h for b, h in pairs)
    assert sum(b for b, _ in pairs) < sum(h for _, h in pairs)
