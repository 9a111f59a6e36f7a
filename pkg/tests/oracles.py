"""Independent reference implementations used to check the engine."""

from __future__ import annotations

import re
import string
from collections import Counter
from datetime import date, timedelta

WEEKDAY_NAMES = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
NUMBER_WORDS = {"one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6, "seven": 7,
                "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12, "a": 1}
ONE_DAY = timedelta(days=1)


def walk(d: date, steps: int) -> date:
    """Move one day at a time (no timedelta arithmetic beyond a single day)."""
    step = ONE_DAY if steps > 0 else -ONE_DAY
    for _ in range(abs(steps)):
        d = d + step
    return d


def calendar_oracle(phrase: str, ref: date) -> str:
    """Absolute value a relative expression denotes, found by walking the calendar."""
    p = phrase.lower()
    if p in ("today", "yesterday", "tomorrow"):
        return walk(ref, {"today": 0, "yesterday": -1, "tomorrow": 1}[p]).isoformat()
    direction, _, unit = p.partition(" ")
    if unit in WEEKDAY_NAMES:
        d = walk(ref, -1 if direction == "last" else 1)
        while d.strftime("%A").lower() != unit:
            d = walk(d, -1 if direction == "last" else 1)
        return d.isoformat()
    if unit == "week":
        return walk(ref, -7 if direction == "last" else 7).isoformat()
    if unit == "month":
        d = ref
        while d.month == ref.month:
            d = walk(d, -1 if direction == "last" else 1)
        return f"{d.year:04d}-{d.month:02d}"
    if unit == "year":
        d = ref
        while d.year == ref.year:
            d = walk(d, -1 if direction == "last" else 1)
        return f"{d.year:04d}"
    m = re.fullmatch(r"(\w+) days? ago", p)
    n = int(m.group(1)) if m.group(1).isdigit() else NUMBER_WORDS[m.group(1)]
    return walk(ref, -n).isoformat()


def f1_oracle(prediction: str, gold: str) -> float:
    """Token F1 by explicit multiset matching (no Counter intersection)."""

    def norm(s: str) -> list[str]:
        s = "".join(ch for ch in s.lower() if ch not in string.punctuation)
        return [w for w in s.split() if w not in ("a", "an", "the")]

    p, g = norm(prediction), norm(gold)
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    remaining = list(g)
    common = 0
    for tok in p:
        if tok in remaining:
            remaining.remove(tok)
            common += 1
    if common == 0:
        return 0.0
    prec, rec = common / len(p), common / len(g)
    return 2 * prec * rec / (prec + rec)


def brute_force_topk(items, score, k):
    """Full scan: score every item, sort by (-score, id), keep k."""
    scored = [(round(score(i), 9), i) for i in items]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [i for _, i in scored[:k]]


__all__ = ["Counter", "brute_force_topk", "calendar_oracle", "f1_oracle", "walk"]
