"""Tokenisation helpers shared by the embedder, lexical search and token accounting."""

from __future__ import annotations

import math
import re

_WORD = re.compile(r"[a-z0-9]+")

STOPWORDS = frozenset(
    """a an the and or but if of to in on at by for with from as is are was were be been being
    i me my we our you your he him his she her it its they them their this that these those
    do does did have has had what which who whom when where why how not no so than too very
    can will would should could just about into over also there here then some any all""".split()
)


def words(text: str) -> list[str]:
    """Lowercase alphanumeric runs."""
    return _WORD.findall(text.lower())


def content_words(text: str) -> list[str]:
    return [w for w in words(text) if w not in STOPWORDS]


def count_tokens(text: str) -> int:
    """Whitespace tokens x 1.3, rounded up. Stand-in for a real tokenizer."""
    n = len(text.split())
    return math.ceil(n * 1.3)


def truncate_tokens(text: str, budget: int) -> str:
    """Trim ``text`` so that ``count_tokens`` of the result is within ``budget``."""
    parts = text.split()
    if count_tokens(text) <= budget:
        return text
    keep = int(budget / 1.3)
    while keep > 0 and math.ceil(keep * 1.3) > budget:
        keep -= 1
    return " ".join(parts[:keep])
