from __future__ import annotations

import json
import random
import time

from hypothesis import given
from hypothesis import strategies as st

from hiermem.eval import (
    EvalRecord,
    aggregate,
    compute_f1,
    format_table,
    gpt_score,
    run_eval,
    summarize_trials,
)
from hiermem.fixtures import QUESTIONS, USER, fixture_engine, golden_report
from hiermem.ingest import Question, read_questions
from hiermem.providers import LlmUsage, ScriptedProvider

from .oracles import f1_oracle

WORDS = ["the", "a", "cat", "dog", "Cat", "sat", "on", "mat", "an", "red", "red.", "blue", "Paris", "paris!", "2023"]


def test_f1_examples():
    assert compute_f1("The cat sat", "cat sat") == 1.0
    assert compute_f1("", "") == 1.0
    assert compute_f1("cat", "") == 0.0
    assert compute_f1("dog", "cat") == 0.0
    assert abs(compute_f1("red cat", "red dog") - 0.5) < 1e-12
    assert abs(compute_f1("red red cat", "red dog") - 0.4) < 1e-12


def f1_oracle_agreement(n: int = 500, seed: int = 3) -> int:
    """Mismatches (beyond 1e-9) between compute_f1 and the multiset oracle on random pairs."""
    rng = random.Random(seed)
    bad = 0
    for _ in range(n):
        p = " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 6)))
        g = " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 6)))
        bad += abs(compute_f1(p, g) - f1_oracle(p, g)) > 1e-9
    return bad


def test_f1_matches_oracle():
    assert f1_oracle_agreement() == 0


@given(st.lists(st.sampled_from(WORDS), max_size=8), st.lists(st.sampled_from(WORDS), max_size=8))
def test_f1_symmetric_and_bounded(p, g):
    a, b = compute_f1(" ".join(p), " ".join(g)), compute_f1(" ".join(g), " ".join(p))
    assert 0.0 <= a <= 1.0 and abs(a - b) < 1e-12


def _rec(cat, f1, err=None, lat=0.01, tok=10):
    return EvalRecord("q", "a", cat, "p", f1, lat, tok, "c", error=err)


def test_aggregate_excludes_adversarial_and_errors():
    recs = [_rec("single_hop", 1.0), _rec("single_hop", 0.0), _rec("adversarial", 0.0),
            _rec("temporal", 0.5), _rec("temporal", 0.0, err="boom")]
    rep = aggregate(recs)
    assert set(rep["categories"]) == {"single_hop", "temporal"}
    assert rep["overall"] == {"n": 3, "f1": 0.5}
    assert rep["errors"] == 1 and rep["excluded"] == 1
    assert "adversarial" in aggregate(recs, exclude=())["categories"]


def test_aggregate_reports_gpt_score_only_when_present():
    r = _rec("single_hop", 1.0)
    assert "gpt_score" not in aggregate([r])["overall"]
    r.gpt_score = 80.0
    assert aggregate([r])["overall"]["gpt_score"] == 80.0


def test_gpt_score_parses_graded_scale():
    judge = ScriptedProvider({"gpt_score": {"q": {"score": 75}}})
    assert gpt_score("q", "gold", "pred", judge) == 75.0


# -- latency isolation ------------------------------------------------------------


class SlowAnswers(ScriptedProvider):
    """Delegates to ``inner`` but sleeps before every answer generation."""

    def __init__(self, inner, delay: float):
        super().__init__()
        self.inner, self.delay = inner, delay

    def complete(self, request):
        if request.task_tag == "answer":
            time.sleep(self.delay)
        return self.inner.complete(request)


def latency_isolation(delay: float = 0.1) -> dict[str, float]:
    """Mean retrieval latency on the fixture with and without a slow answer step."""
    questions = [q for q in read_questions(QUESTIONS) if q.category != "adversarial"]
    out = {}
    for name, d in (("fast", 0.0), ("slow", delay)):
        engine = fixture_engine(wrap=lambda p, d=d: SlowAnswers(p, d))
        engine.config.evolution.mode = "off"
        t0 = time.perf_counter()
        records, report = run_eval(engine, questions, strategy="hybrid")
        out[f"{name}_wall"] = time.perf_counter() - t0
        out[name] = report["latency"]
        out[f"{name}_max"] = max(r.retrieval_latency for r in records)
    return out


def test_latency_excludes_answer_generation():
    res = latency_isolation()
    assert res["slow_wall"] >= 0.4  # the sleeps really happened
    assert res["slow_max"] < 0.1
    assert res["slow"] - res["fast"] < 0.010


# -- end to end on the fixture -------------------------------------------------------


def test_fixture_run_is_deterministic():
    assert json.dumps(golden_report(), sort_keys=True) == json.dumps(golden_report(), sort_keys=True)


def test_missing_memory_is_an_error_record():
    engine = fixture_engine(build=False)
    records, rep = run_eval(engine, [Question("nobody", "q?", "a", "single_hop")])
    assert records[0].error and rep["errors"] == 1 and rep["overall"]["n"] == 0


def test_single_question_report():
    engine = fixture_engine()
    q = read_questions(QUESTIONS)[0]
    records, rep = run_eval(engine, [q], strategy="hybrid", k=5)
    assert rep["overall"]["n"] == 1 and rep["k"] == 5 and rep["strategy"] == "hybrid"
    assert records[0].predicted and records[0].evidence_ids


def test_k_sweep_rows_and_table():
    engine = fixture_engine()
    engine.config.evolution.mode = "off"
    qs = read_questions(QUESTIONS)
    reports = [run_eval(engine, qs, "hybrid", k)[1] for k in engine.config.eval.k_grid]
    table = format_table(reports).splitlines()
    assert len(table) == 1 + len(engine.config.eval.k_grid)
    assert [r["k"] for r in reports] == [5, 10, 15, 20, 25]
    tokens = [r["tokens"] for r in reports]
    assert tokens == sorted(tokens)


def test_parallel_matches_serial():
    qs = read_questions(QUESTIONS)
    serial = fixture_engine()
    serial.config.evolution.mode = "off"
    parallel = fixture_engine()
    parallel.config.evolution.mode = "off"
    a, _ = run_eval(serial, qs, "hybrid")
    b, _ = run_eval(parallel, qs, "hybrid", parallel=4)
    assert [(r.predicted, r.evidence_ids) for r in a] == [(r.predicted, r.evidence_ids) for r in b]


def test_summarize_trials():
    reps = [{"overall": {"f1": f}, "latency": 0.1, "tokens": 10.0} for f in (0.4, 0.6)]
    s = summarize_trials(reps)
    assert s["trials"] == 2 and abs(s["f1"]["mean"] - 0.5) < 1e-12 and abs(s["f1"]["std"] - 0.1) < 1e-12


def test_usage_is_reported():
    engine = fixture_engine()
    run_eval(engine, read_questions(QUESTIONS)[:2])
    assert engine.provider.calls > 0 and isinstance(engine.provider.usage, LlmUsage)
    assert engine.has_memory(USER)
