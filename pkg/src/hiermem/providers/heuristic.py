"""Rule-based offline provider.

Answers every task from the structured request payload with simple lexical
rules, so the full pipeline runs without network access. The rules are crude
approximations of what a real model does. In particular the surprise channel
only looks at exclamations and a short list of cue phrases.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from math import sqrt
from typing import Any

from ..text import content_words, words
from .llm import LLMProvider, LlmRequest, LlmUsage, mock_usage

_SENTENCE = re.compile(r"(?<=[.!?])\s+")
_GREETING = re.compile(r"^(hi|hello|hey|thanks|thank you|bye|goodbye|good (morning|night|evening|afternoon)|see you)\b", re.I)
_SHIFT_MARKERS = re.compile(r"\b(by the way|btw|anyway|speaking of|on another note|changing the subject|that reminds me)\b", re.I)
_SURPRISE_CUES = re.compile(
    r"\b(wow|omg|oh no|oh my|guess what|can't believe|cannot believe|unbelievable|shocked|suddenly|no way)\b", re.I
)
_PREFERENCE = re.compile(r"\b(?:I|we)\s+(?:really\s+|also\s+)?(?:love|like|enjoy|prefer|adore|hate|dislike)\b|\bmy favou?rite\b", re.I)
_PROFILE = re.compile(r"\bI(?:'m| am)\s+(?:a|an)\s+\w+|\bI work as\b|\bI live in\b|\bI(?:'m| am) from\b", re.I)
_NEGATION = re.compile(r"\b(not|no longer|never|n't|anymore|stopped|quit)\b|n't\b", re.I)
_QUESTION_WORDS = frozenset("what when where who whom which why how did does do is are was were".split())


def sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE.split(text.strip()) if s.strip()]


def _cos(a: Counter, b: Counter) -> float:
    if not a or not b:
        return 0.0
    dot = sum(v * b.get(k, 0) for k, v in a.items())
    return dot / (sqrt(sum(v * v for v in a.values())) * sqrt(sum(v * v for v in b.values())))


def _informative(sentence: str) -> bool:
    if sentence.endswith("?") or _GREETING.match(sentence) or len(words(sentence)) < 4:
        return False
    if re.search(r"\bI\b|\b(?i:my|we|our)\b", sentence) or re.search(r"\d", sentence):
        return True
    return any(w[:1].isupper() for w in sentence.split()[1:])


def _query_terms(query: str) -> set[str]:
    return {w for w in content_words(query) if w not in _QUESTION_WORDS}


def rewrite_first_person(text: str, speaker: str) -> str:
    # deferred: the construction package imports providers
    from ..construction.alignment import rewrite_first_person as rewrite

    return rewrite(text, speaker)


class HeuristicProvider(LLMProvider):
    kind = "heuristic"

    min_gap = 3

    def complete(self, request: LlmRequest) -> tuple[str, LlmUsage]:
        handler = getattr(self, "_" + request.task_tag)
        raw = json.dumps(handler(dict(request.payload)), sort_keys=True)
        return raw, mock_usage(request.prompt, raw)

    # -- tasks ---------------------------------------------------------------

    def _segment(self, p: dict[str, Any]) -> dict:
        turns = p["turns"]
        bags = [Counter(content_words(t["text"])) for t in turns]
        topic, surprise = [], []
        last_t = last_s = 0
        for i in range(1, len(turns)):
            text = turns[i]["text"]
            before = sum(bags[max(0, i - 2) : i], Counter())
            after = sum(bags[i : i + 2], Counter())
            drift = sum(before.values()) >= 4 and sum(after.values()) >= 4 and _cos(before, after) < 0.05
            if i - last_t >= self.min_gap and (_SHIFT_MARKERS.search(text) or drift):
                topic.append(turns[i]["turn_index"])
                last_t = i
            cue = text.count("!") >= 2 or _SURPRISE_CUES.search(text)
            if i - last_s >= 2 and cue and turns[i]["speaker"] != turns[i - 1]["speaker"]:
                surprise.append(turns[i]["turn_index"])
                last_s = i
        return {"topic_boundaries": topic, "surprise_boundaries": surprise, "labels": []}

    def _extract_stage1(self, p: dict[str, Any]) -> dict:
        if "query" in p:
            return self._query_extract(p)
        items = []
        for t in p["episode"]["turns"]:
            for s in sentences(t["text"]):
                if _informative(s):
                    items.append({"content": s, "source_turns": [t["turn_index"]]})
        return {"items": items}

    def _query_extract(self, p: dict[str, Any]) -> dict:
        terms = _query_terms(p["query"])
        items = []
        for ep in p["episodes"]:
            for t in ep["turns"]:
                for s in sentences(t["text"]):
                    if _informative(s) and terms & set(content_words(s)):
                        content = rewrite_first_person(s, t["speaker"])
                        items.append({
                            "content": content, "category": "fact",
                            "episode_id": ep["episode_id"], "source_turns": [t["turn_index"]],
                        })
        return {"items": items}

    def _extract_stage2(self, p: dict[str, Any]) -> dict:
        items = []
        for t in p["episode"]["turns"]:
            for s in sentences(t["text"]):
                if s.endswith("?"):
                    continue
                if _PROFILE.search(s):
                    items.append({"content": s, "category": "profile", "source_turns": [t["turn_index"]]})
                elif _PREFERENCE.search(s):
                    items.append({"content": s, "category": "preference", "source_turns": [t["turn_index"]]})
        return {"items": items}

    def _normalize(self, p: dict[str, Any]) -> dict:
        speaker = p.get("speaker")
        if not speaker:
            return {"mapping": {}}
        return {"text": rewrite_first_person(p["text"], speaker)}

    def _judge_sufficiency(self, p: dict[str, Any]) -> dict:
        terms = _query_terms(p["query"])
        seen = set(words(" ".join(p["evidence"])))
        covered = len(terms & seen) / len(terms) if terms else 0.0
        return {"verdict": "sufficient" if covered >= 0.5 else "insufficient"}

    def _classify_relation(self, p: dict[str, Any]) -> dict:
        cand = set(content_words(p["candidate"]))
        best, best_j = None, 0.0
        for i, n in enumerate(p["notes"]):
            other = set(content_words(n["content"]))
            j = len(cand & other) / len(cand | other) if cand | other else 0.0
            if j > best_j:
                best, best_j = i, j
        if best is None or best_j < 0.5:
            return {"verdict": "independent", "rationale": "low overlap"}
        note = p["notes"][best]["content"]
        if bool(_NEGATION.search(p["candidate"])) != bool(_NEGATION.search(note)):
            return {"verdict": "contradictory", "target": best, "rationale": "negation mismatch"}
        if set(content_words(note)) <= cand:
            return {"verdict": "extendable", "target": best, "merged_content": p["candidate"], "rationale": "superset"}
        return {"verdict": "independent", "rationale": "partial overlap"}

    def _answer(self, p: dict[str, Any]) -> dict:
        terms = _query_terms(p["query"])
        best, best_score = "", 0
        for ev in p["evidence"]:
            body = re.sub(r"^\[[^\]]*\]\s*", "", ev)
            for line in body.splitlines():
                line = re.sub(r"^[^:]{1,40}:\s*", "", line)
                for s in sentences(line):
                    score = len(terms & set(content_words(s)))
                    if score > best_score:
                        best, best_score = s, score
        return {"answer": best}

    def _gpt_score(self, p: dict[str, Any]) -> dict:
        gold = set(content_words(p["gold"]))
        pred = set(content_words(p["prediction"]))
        return {"score": round(100.0 * len(gold & pred) / len(gold), 2) if gold else 0.0}
