"""Response schemas per task tag. ``parse`` raises ProviderParseError on any violation."""

from __future__ import annotations

import json
import re
from typing import Any, Callable

from ..core import CATEGORIES, RELATION_VERDICTS, ProviderParseError

_FENCE = re.compile(r"^```(?:json)?\s*|\s*```$", re.MULTILINE)


def _int_list(d: dict, key: str) -> list[int]:
    v = d.get(key, [])
    if not isinstance(v, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in v):
        raise ValueError(f"{key} must be a list of integers")
    return v


def _str(d: dict, key: str, required: bool = True) -> str | None:
    v = d.get(key)
    if v is None and not required:
        return None
    if not isinstance(v, str) or not v.strip():
        raise ValueError(f"{key} must be a non-empty string")
    return v


def _segment(d: dict) -> dict:
    labels = d.get("labels", [])
    if not isinstance(labels, list):
        raise ValueError("labels must be a list")
    clean = []
    for lab in labels:
        if not isinstance(lab, dict) or not isinstance(lab.get("start"), int):
            raise ValueError("each label needs an integer start")
        clean.append({"start": lab["start"], "topic": str(lab.get("topic", "")), "summary": str(lab.get("summary", ""))})
    return {
        "topic_boundaries": _int_list(d, "topic_boundaries"),
        "surprise_boundaries": _int_list(d, "surprise_boundaries"),
        "labels": clean,
    }


def _items(d: dict, need_category: bool) -> dict:
    items = d.get("items")
    if not isinstance(items, list):
        raise ValueError("items must be a list")
    out = []
    for it in items:
        if not isinstance(it, dict):
            raise ValueError("each item must be an object")
        content = _str(it, "content")
        cat = it.get("category")
        if need_category and not isinstance(cat, str):
            raise ValueError("stage-2 items need a category")
        item = {"content": content, "category": cat, "source_turns": _int_list(it, "source_turns")}
        if isinstance(it.get("episode_id"), str):
            item["episode_id"] = it["episode_id"]
        out.append(item)
    return {"items": out}


def _normalize(d: dict) -> dict:
    if "text" in d:
        return {"text": _str(d, "text")}
    mapping = d.get("mapping")
    if not isinstance(mapping, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in mapping.items()):
        raise ValueError("normalize needs 'text' or a string->string 'mapping'")
    return {"mapping": mapping}


def _judge(d: dict) -> dict:
    v = d.get("verdict")
    if v not in ("sufficient", "insufficient"):
        raise ValueError("verdict must be sufficient|insufficient")
    return {"verdict": v}


def _classify(d: dict) -> dict:
    v = d.get("verdict")
    if v not in RELATION_VERDICTS:
        raise ValueError(f"verdict must be one of {sorted(RELATION_VERDICTS)}")
    target = d.get("target")
    if target is not None and not isinstance(target, (str, int)):
        raise ValueError("target must be a note id or a candidate rank")
    if v != "independent" and target is None:
        raise ValueError(f"{v} verdict needs a target")
    merged = d.get("merged_content")
    if v == "extendable":
        _str(d, "merged_content")
    return {"verdict": v, "target": target, "merged_content": merged, "rationale": str(d.get("rationale", ""))}


def _answer(d: dict) -> dict:
    a = d.get("answer")
    if not isinstance(a, str):
        raise ValueError("answer must be a string")
    return {"answer": a}


def _gpt_score(d: dict) -> dict:
    s = d.get("score")
    if not isinstance(s, (int, float)) or isinstance(s, bool) or not 0 <= s <= 100:
        raise ValueError("score must be a number in [0, 100]")
    return {"score": float(s)}


PARSERS: dict[str, Callable[[dict], dict]] = {
    "segment": _segment,
    "extract_stage1": lambda d: _items(d, need_category=False),
    "extract_stage2": lambda d: _items(d, need_category=True),
    "normalize": _normalize,
    "judge_sufficiency": _judge,
    "classify_relation": _classify,
    "answer": _answer,
    "gpt_score": _gpt_score,
}


def parse(task_tag: str, raw: str) -> dict[str, Any]:
    try:
        obj = json.loads(_FENCE.sub("", raw.strip()))
    except (json.JSONDecodeError, AttributeError) as exc:
        raise ProviderParseError(f"{task_tag}: response is not JSON", raw=raw) from exc
    if not isinstance(obj, dict):
        raise ProviderParseError(f"{task_tag}: response is not an object", raw=raw)
    try:
        return PARSERS[task_tag](obj)
    except ValueError as exc:
        raise ProviderParseError(f"{task_tag}: {exc}", raw=raw) from exc


def repair_prompt(prompt: str, raw: str, problem: str) -> str:
    return (
        f"{prompt}\n\nYour previous reply could not be used ({problem}). "
        f"Previous reply:\n{raw[:2000]}\n\nReply again with only the JSON object in the required shape."
    )


__all__ = ["parse", "repair_prompt", "CATEGORIES"]
