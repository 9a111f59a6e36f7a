"""Question-answering evaluation: token F1, optional GPT-Score, retrieval latency and tokens.

Latency is the wall time of memory retrieval only (embedding the query,
searching, judging sufficiency). Answer generation and reconsolidation run
after the clock stops.
"""

from __future__ import annotations

import json
import logging
import re
import statistics
import string
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

from .core import HierMemError
from .engine import MemoryEngine
from .ingest import Question
from .providers.llm import DEFAULT_BUDGETS, LLMProvider, LlmRequest

logger = logging.getLogger(__name__)

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)

# Our own judge prompt; the grading scale is 0-100 (graded, not binary).
GPT_SCORE_PROMPT = (
    "You are grading an answer produced by a memory-augmented assistant.\n"
    "Question: {question}\n"
    "Gold answer: {gold}\n"
    "Predicted answer: {prediction}\n\n"
    "Grade how correct the predicted answer is with respect to the gold answer on a scale from 0 to 100, "
    "where 100 means it conveys the same information, 0 means it is wrong or missing, and partial credit "
    "reflects partially correct answers. Ignore wording and style.\n"
    'Return {{"score": <number>}}.'
)


def normalize_answer(text: str) -> list[str]:
    text = str(text).lower().translate(_PUNCT)
    return _ARTICLES.sub(" ", text).split()


def compute_f1(prediction: str, gold: str) -> float:
    pred, ref = normalize_answer(prediction), normalize_answer(gold)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    common = sum((Counter(pred) & Counter(ref)).values())
    if common == 0:
        return 0.0
    p, r = common / len(pred), common / len(ref)
    return 2 * p * r / (p + r)


def gpt_score(question: str, gold: str, prediction: str, judge: LLMProvider) -> float:
    req = LlmRequest(
        task_tag="gpt_score",
        prompt=GPT_SCORE_PROMPT.format(question=question, gold=gold, prediction=prediction),
        key=question,
        payload={"question": question, "gold": gold, "prediction": prediction},
        max_output_tokens=DEFAULT_BUDGETS["gpt_score"],
    )
    return judge.llm_call(req).data["score"]


@dataclass
class EvalRecord:
    question: str
    gold_answer: str
    category: str
    predicted: str
    f1: float
    retrieval_latency: float
    evidence_tokens: int
    conversation_id: str = ""
    gpt_score: Optional[float] = None
    verdict: str = ""
    evidence_ids: tuple[str, ...] = ()
    error: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["evidence_ids"] = list(self.evidence_ids)
        return d


def evaluate_question(
    engine: MemoryEngine, q: Question, strategy: str, k: int, judge: LLMProvider | None = None
) -> EvalRecord:
    if not engine.has_memory(q.conversation_id):
        return EvalRecord(
            q.question, q.answer, q.category, "", 0.0, 0.0, 0, q.conversation_id,
            error=f"no memory built for conversation {q.conversation_id}",
        )
    try:
        res = engine.query(q.conversation_id, q.question, strategy=strategy, k=k, with_answer=True)
    except HierMemError as exc:
        return EvalRecord(q.question, q.answer, q.category, "", 0.0, 0.0, 0, q.conversation_id, error=str(exc))
    b = res.bundle
    rec = EvalRecord(
        question=q.question,
        gold_answer=q.answer,
        category=q.category,
        predicted=res.answer or "",
        f1=compute_f1(res.answer or "", q.answer),
        retrieval_latency=b.retrieval_latency,
        evidence_tokens=b.evidence_tokens,
        conversation_id=q.conversation_id,
        verdict=b.verdict,
        evidence_ids=tuple(h.item_id for h in b.hits),
    )
    if judge is not None:
        try:
            rec.gpt_score = gpt_score(q.question, q.answer, rec.predicted, judge)
        except HierMemError as exc:
            logger.warning("GPT-Score failed for %r: %s", q.question, exc)
    return rec


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def aggregate(records: Sequence[EvalRecord], exclude: Sequence[str] = ("adversarial",)) -> dict[str, Any]:
    """Per-category and overall means over scored records (errors and excluded categories left out)."""
    scored = [r for r in records if r.error is None and r.category not in exclude]
    by_cat: dict[str, list[EvalRecord]] = defaultdict(list)
    for r in scored:
        by_cat[r.category].append(r)
    has_gpt = any(r.gpt_score is not None for r in scored)

    def stats(rs: list[EvalRecord]) -> dict[str, Any]:
        out = {"n": len(rs), "f1": _mean([r.f1 for r in rs])}
        if has_gpt:
            out["gpt_score"] = _mean([r.gpt_score for r in rs if r.gpt_score is not None])
        return out

    return {
        "categories": {c: stats(by_cat[c]) for c in sorted(by_cat)},
        "overall": stats(scored),
        "latency": _mean([r.retrieval_latency for r in scored]),
        "tokens": _mean([float(r.evidence_tokens) for r in scored]),
        "errors": sum(1 for r in records if r.error is not None),
        "excluded": sum(1 for r in records if r.error is None and r.category in exclude),
    }


def run_eval(
    engine: MemoryEngine,
    questions: Sequence[Question],
    strategy: str = "hybrid",
    k: int | None = None,
    judge: LLMProvider | None = None,
    parallel: int = 1,
    exclude: Sequence[str] | None = None,
) -> tuple[list[EvalRecord], dict[str, Any]]:
    k = k if k is not None else engine.config.retrieval.k
    exclude = engine.config.eval.exclude_categories if exclude is None else exclude
    if parallel > 1:
        with ThreadPoolExecutor(parallel) as pool:
            records = list(pool.map(lambda q: evaluate_question(engine, q, strategy, k, judge), questions))
    else:
        records = [evaluate_question(engine, q, strategy, k, judge) for q in questions]
    report = aggregate(records, exclude)
    report.update(strategy=strategy.replace("-", "_"), k=k)
    return records, report


def summarize_trials(reports: Sequence[dict[str, Any]]) -> dict[str, Any]:
    """mean and (population) std of the headline numbers across trials."""

    def ms(values: list[float]) -> dict[str, float]:
        return {"mean": _mean(values), "std": statistics.pstdev(values) if len(values) > 1 else 0.0}

    out: dict[str, Any] = {"trials": len(reports)}
    out["f1"] = ms([r["overall"]["f1"] for r in reports])
    if all("gpt_score" in r["overall"] for r in reports):
        out["gpt_score"] = ms([r["overall"]["gpt_score"] for r in reports])
    out["latency"] = ms([r["latency"] for r in reports])
    out["tokens"] = ms([r["tokens"] for r in reports])
    return out


def format_table(reports: Sequence[dict[str, Any]]) -> str:
    """Aligned text table: one row per report, F1 (and GPT-Score) per category plus overall, latency, tokens."""
    cats = sorted({c for r in reports for c in r["categories"]})
    has_gpt = any("gpt_score" in r["overall"] for r in reports)
    metrics = ["f1", "gpt_score"] if has_gpt else ["f1"]
    header = ["method", "k"]
    for c in cats + ["overall"]:
        header += [f"{c}.{m}" for m in metrics]
    header += ["lat_s", "tokens"]
    rows = []
    for r in reports:
        row = [r.get("strategy", ""), str(r.get("k", ""))]
        for c in cats + ["overall"]:
            block = r["overall"] if c == "overall" else r["categories"].get(c, {})
            for m in metrics:
                v = block.get(m)
                row.append("-" if v is None else (f"{100 * v:.2f}" if m == "f1" else f"{v:.2f}"))
        row += [f"{r['latency']:.4f}", f"{r['tokens']:.2f}"]
        rows.append(row)
    widths = [max(len(x) for x in col) for col in zip(header, *rows)]
    lines = ["  ".join(x.ljust(w) for x, w in zip(line, widths)) for line in [header] + rows]
    return "\n".join(lines)


def write_results(path: str | Path, records: Sequence[EvalRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
