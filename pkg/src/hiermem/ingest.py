"""Turn-file and question-file readers, plus the LoCoMo adapter.

Turn files are line-delimited JSON, one turn per line::

    {"session_id": "s1", "session_timestamp": "2023-05-08T13:56:00Z",
     "turn_index": 0, "speaker": "Caroline", "text": "..."}

``timestamp`` per turn is optional and defaults to ``session_timestamp``.
Question files are line-delimited ``{conversation_id, question, answer, category}``.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable

from .core import DialogueTurn, ValidationError, check_contiguous, format_instant, parse_instant, utc

TURN_FIELDS = ("session_id", "session_timestamp", "turn_index", "speaker", "text")
QUESTION_FIELDS = ("conversation_id", "question", "answer", "category")
CATEGORIES = ("single_hop", "multi_hop", "temporal", "open_domain", "adversarial")
# LoCoMo's integer question categories
LOCOMO_CATEGORIES = {1: "multi_hop", 2: "temporal", 3: "open_domain", 4: "single_hop", 5: "adversarial"}
LOCOMO_DATE_FORMAT = "%I:%M %p on %d %B, %Y"


@dataclass(frozen=True)
class Question:
    conversation_id: str
    question: str
    answer: str
    category: str

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValidationError(f"unknown question category {self.category!r}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _lines(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: not valid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ValidationError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, rec


def parse_turn(rec: dict[str, Any]) -> DialogueTurn:
    missing = [f for f in TURN_FIELDS if f not in rec]
    if missing:
        raise ValidationError(f"missing fields {missing}")
    if not isinstance(rec["turn_index"], int) or isinstance(rec["turn_index"], bool):
        raise ValidationError("turn_index must be an integer")
    ts = rec.get("timestamp") or rec["session_timestamp"]
    return DialogueTurn(
        turn_index=rec["turn_index"],
        speaker=str(rec["speaker"]),
        text=str(rec["text"]),
        session_id=str(rec["session_id"]),
        timestamp=parse_instant(ts) if ts else None,
    )


def read_turns(path: str | Path) -> dict[str, list[DialogueTurn]]:
    """Turns grouped by session, sorted by index. Errors carry the line number."""
    sessions: dict[str, list[DialogueTurn]] = defaultdict(list)
    for lineno, rec in _lines(path):
        try:
            turn = parse_turn(rec)
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        sessions[turn.session_id].append(turn)
    for sid, turns in sessions.items():
        turns.sort(key=lambda t: t.turn_index)
        try:
            check_contiguous(turns)
        except ValidationError as exc:
            raise ValidationError(f"{path}: session {sid}: {exc}") from None
    return dict(sessions)


def turn_record(turn: DialogueTurn, session_timestamp: datetime | None) -> dict[str, Any]:
    return {
        "session_id": turn.session_id,
        "session_timestamp": format_instant(session_timestamp) if session_timestamp else None,
        "turn_index": turn.turn_index,
        "speaker": turn.speaker,
        "text": turn.text,
    }


def read_questions(path: str | Path) -> list[Question]:
    out = []
    for lineno, rec in _lines(path):
        missing = [f for f in QUESTION_FIELDS if f not in rec]
        if missing:
            raise ValidationError(f"{path}:{lineno}: missing fields {missing}")
        try:
            out.append(Question(str(rec["conversation_id"]), str(rec["question"]), str(rec["answer"]), rec["category"]))
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return out


def write_jsonl(path: str | Path, records: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


# -- LoCoMo -------------------------------------------------------------------


def parse_locomo_date(value: str) -> datetime:
    try:
        return utc(datetime.strptime(value.strip(), LOCOMO_DATE_FORMAT))
    except ValueError as exc:
        raise ValidationError(f"unrecognised LoCoMo date {value!r}") from exc


def convert_locomo(samples: list[dict[str, Any]]) -> tuple[dict[str, list[dict]], list[Question]]:
    """LoCoMo samples -> (turn records per conversation, questions).

    Each sample's ``sample_id`` becomes the conversation (and user) id; its
    sessions become ``<sample_id>-s<n>``. Adversarial questions keep their
    ``adversarial_answer`` so they can still be listed, though aggregates skip them.
    """
    turns: dict[str, list[dict]] = {}
    questions: list[Question] = []
    for sample in samples:
        cid = str(sample["sample_id"])
        conv = sample["conversation"]
        numbers = sorted(
            int(k.split("_")[1]) for k in conv if k.startswith("session_") and k.count("_") == 1 and conv[k]
        )
        recs: list[dict] = []
        for n in numbers:
            when = parse_locomo_date(conv[f"session_{n}_date_time"])
            sid = f"{cid}-s{n}"
            for i, t in enumerate(conv[f"session_{n}"]):
                text = t.get("text", "")
                if t.get("blip_caption"):
                    text = f"{text} [shares {t['blip_caption']}]".strip()
                recs.append(turn_record(DialogueTurn(i, t["speaker"], text, sid, when), when))
        turns[cid] = recs
        for qa in sample.get("qa", []):
            cat = LOCOMO_CATEGORIES.get(int(qa["category"]))
            if cat is None:
                raise ValidationError(f"{cid}: unknown LoCoMo category {qa['category']!r}")
            gold = qa.get("answer", qa.get("adversarial_answer", ""))
            questions.append(Question(cid, qa["question"], str(gold), cat))
    return turns, questions
