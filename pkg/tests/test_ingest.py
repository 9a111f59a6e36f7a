from __future__ import annotations

import json

import pytest

from hiermem.core import ValidationError
from hiermem.ingest import convert_locomo, parse_locomo_date, read_questions, read_turns, write_jsonl

SAMPLE = {
    "sample_id": "conv-x",
    "conversation": {
        "speaker_a": "Ann",
        "speaker_b": "Bo",
        "session_1_date_time": "1:56 pm on 8 May, 2023",
        "session_1": [
            {"speaker": "Ann", "dia_id": "D1:1", "text": "I went hiking yesterday."},
            {"speaker": "Bo", "dia_id": "D1:2", "text": "Look at this!", "blip_caption": "a photo of a dog"},
        ],
        "session_2_date_time": "7:30 pm on 25 May, 2023",
        "session_2": [{"speaker": "Bo", "dia_id": "D2:1", "text": "Back again."}],
        "session_3_date_time": "",
        "session_3": [],
    },
    "qa": [
        {"question": "When did Ann hike?", "answer": "7 May 2023", "category": 2},
        {"question": "What is Bo's cat called?", "adversarial_answer": "Milo", "category": 5},
    ],
}


def test_locomo_date():
    assert parse_locomo_date("1:56 pm on 8 May, 2023").isoformat() == "2023-05-08T13:56:00+00:00"
    with pytest.raises(ValidationError):
        parse_locomo_date("yesterday")


def test_convert_locomo(tmp_path):
    turns, questions = convert_locomo([SAMPLE])
    recs = turns["conv-x"]
    assert [r["session_id"] for r in recs] == ["conv-x-s1", "conv-x-s1", "conv-x-s2"]
    assert "photo of a dog" in recs[1]["text"]
    assert [q.category for q in questions] == ["temporal", "adversarial"]
    assert questions[1].answer == "Milo"
    write_jsonl(tmp_path / "t.jsonl", recs)
    write_jsonl(tmp_path / "q.jsonl", [q.to_dict() for q in questions])
    sessions = read_turns(tmp_path / "t.jsonl")
    assert {s: len(t) for s, t in sessions.items()} == {"conv-x-s1": 2, "conv-x-s2": 1}
    assert read_questions(tmp_path / "q.jsonl") == questions


def test_unknown_locomo_category():
    bad = json.loads(json.dumps(SAMPLE))
    bad["qa"][0]["category"] = 9
    with pytest.raises(ValidationError):
        convert_locomo([bad])


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n")


def test_turn_errors_carry_line_numbers(tmp_path):
    good = {"session_id": "s", "session_timestamp": "2023-05-08T13:56:00Z", "turn_index": 0, "speaker": "A", "text": "hi"}
    f = tmp_path / "t.jsonl"
    _write(f, [json.dumps(good), "{not json"])
    with pytest.raises(ValidationError, match=":2:"):
        read_turns(f)
    _write(f, [json.dumps(good), json.dumps({**good, "turn_index": 1, "speaker": None} | {"text": "x"}), json.dumps({"session_id": "s"})])
    with pytest.raises(ValidationError, match=":3: missing"):
        read_turns(f)
    _write(f, [json.dumps(good), json.dumps({**good, "turn_index": 2})])
    with pytest.raises(ValidationError, match="session s"):
        read_turns(f)


def test_question_errors(tmp_path):
    f = tmp_path / "q.jsonl"
    _write(f, [json.dumps({"conversation_id": "c", "question": "q", "answer": "a", "category": "trivia"})])
    with pytest.raises(ValidationError, match=":1:"):
        read_questions(f)
