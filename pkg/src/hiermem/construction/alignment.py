"""Knowledge alignment: temporal grounding and coreference resolution.

Both rewrites are additive or substitutive only; neither ever drops a clause.
Temporal grounding appends the absolute date in parentheses right after the
relative expression so the original wording stays readable.
"""

from __future__ import annotations

import logging
import re
from datetime import date, datetime, timedelta

from ..providers.llm import LLMProvider, LlmRequest, call_with_fallback, DEFAULT_BUDGETS

logger = logging.getLogger(__name__)

WEEKDAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")
NUMBER_WORDS = {
    "a": 1, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
    "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12,
}

_TEMPORAL = re.compile(
    r"\b(?:"
    r"(?P<day>today|yesterday|tomorrow)"
    r"|(?P<wdir>last|next)\s+(?P<wday>" + "|".join(WEEKDAYS) + r")"
    r"|(?P<pdir>last|next)\s+(?P<period>week|month|year)"
    r"|(?P<n>\d{1,4}|" + "|".join(NUMBER_WORDS) + r")\s+days?\s+ago"
    r")\b(?!\s*\(\d{4})",
    re.IGNORECASE,
)


def _shift_month(d: date, months: int) -> str:
    y, m = divmod(d.year * 12 + (d.month - 1) + months, 12)
    return f"{y:04d}-{m + 1:02d}"


def resolve_temporal(match: re.Match, ref: date) -> str:
    g = match.groupdict()
    if g["day"]:
        offset = {"today": 0, "yesterday": -1, "tomorrow": 1}[g["day"].lower()]
        return (ref + timedelta(days=offset)).isoformat()
    if g["wday"]:
        target = WEEKDAYS.index(g["wday"].lower())
        if g["wdir"].lower() == "last":
            back = (ref.weekday() - target) % 7 or 7
            return (ref - timedelta(days=back)).isoformat()
        ahead = (target - ref.weekday()) % 7 or 7
        return (ref + timedelta(days=ahead)).isoformat()
    if g["period"]:
        sign = -1 if g["pdir"].lower() == "last" else 1
        period = g["period"].lower()
        if period == "week":
            return (ref + timedelta(days=7 * sign)).isoformat()
        if period == "month":
            return _shift_month(ref, sign)
        return f"{ref.year + sign:04d}"
    n = g["n"].lower()
    days = int(n) if n.isdigit() else NUMBER_WORDS[n]
    return (ref - timedelta(days=days)).isoformat()


def normalize_temporal(text: str, reference: datetime | date) -> str:
    """Append absolute dates to recognised relative time expressions.

    >>> normalize_temporal("I met her yesterday", date(2023, 5, 8))
    'I met her yesterday (2023-05-07)'

    Weeks resolve to the date seven days away, months to ``YYYY-MM`` and years
    to ``YYYY``. "next <weekday>" is the first such weekday strictly after the
    reference; "last <weekday>" the most recent one strictly before it.
    Already-grounded expressions are left alone, so the rewrite is idempotent.
    """
    ref = reference.date() if isinstance(reference, datetime) else reference
    return _TEMPORAL.sub(lambda m: f"{m.group(0)} ({resolve_temporal(m, ref)})", text)


# ---------------------------------------------------------------------------
# Coreference
# ---------------------------------------------------------------------------

_UNCHANGED_VERBS = frozenset(
    """can could will would shall should may might must did had was
    met went saw got took made said told bought found gave left lost heard felt kept knew
    thought brought began ran wrote read sold sent spent won became came drove flew grew
    paid put set cut hit let quit built caught fell forgot held hurt taught understood""".split()
)
_IRREGULAR = {"am": "is", "have": "has", "do": "does", "go": "goes", "be": "is", "'m": "is"}
_ADVERBS = frozenset(
    "also really just never always still often usually actually recently finally sometimes definitely totally".split()
)
_CONTRACTIONS = {"i'm": "is", "i've": "has", "i'll": "will", "i'd": "would"}


def third_person(verb: str) -> str:
    low = verb.lower()
    if "'" in low:
        return "doesn't" if low == "don't" else verb
    if low in _IRREGULAR:
        return _IRREGULAR[low]
    if low in _UNCHANGED_VERBS or low.endswith("ed"):
        return verb
    if re.search(r"(s|x|z|ch|sh|o)$", low):
        return verb + "es"
    if re.search(r"[^aeiou]y$", low):
        return verb[:-1] + "ies"
    return verb + "s"


_I_VERB = re.compile(r"\bI\s+((?:(?:" + "|".join(_ADVERBS) + r")\s+)*)([A-Za-z']+)")
_CONTRACTION = re.compile(r"\b(I'm|I've|I'll|I'd)\b", re.IGNORECASE)
_POSSESSIVE = re.compile(r"\b(my|mine)\b", re.IGNORECASE)
_OBJECT = re.compile(r"\b(me|myself)\b", re.IGNORECASE)
_FIRST_PERSON = re.compile(r"\b(I|I'm|I've|I'll|I'd|me|my|mine|myself)\b", re.IGNORECASE)


def rewrite_first_person(text: str, speaker: str) -> str:
    """Replace the speaker's first-person references with their name.

    "I <verb>" gets third-person agreement ("I love jazz" -> "Caroline loves
    jazz"); my/mine become possessives and me/myself the bare name. If some
    first-person reference survives that (a dangling "I", say), fall back to
    prefixing "<speaker>: " to the untouched text instead.
    """
    if not _FIRST_PERSON.search(text) or text.startswith(f"{speaker}: "):
        return text
    out = _I_VERB.sub(lambda m: f"{speaker} {m.group(1)}{third_person(m.group(2))}", text)
    out = _CONTRACTION.sub(lambda m: f"{speaker} {_CONTRACTIONS[m.group(1).lower()]}", out)
    out = _POSSESSIVE.sub(f"{speaker}'s", out)
    out = _OBJECT.sub(speaker, out)
    if re.search(r"\bI\b", out):
        return f"{speaker}: {text}"
    return out


def apply_mapping(text: str, mapping: dict[str, str]) -> str:
    """Whole-word, case-insensitive substitution; longer mentions first."""
    for mention in sorted(mapping, key=len, reverse=True):
        text = re.sub(r"\b" + re.escape(mention) + r"\b", mapping[mention], text, flags=re.IGNORECASE)
    return text


def coref_prompt(text: str, context: str, speaker: str | None) -> str:
    return (
        "Resolve pronouns and definite mentions in the statement to the canonical names used in the dialogue.\n"
        f"Speaker of the statement: {speaker or 'unknown'}\n"
        f"Dialogue:\n{context}\n\nStatement: {text}\n"
        'Return {"mapping": {"<mention>": "<canonical name>", ...}} or {"text": "<rewritten statement>"}.'
    )


def resolve_coreferences(
    text: str,
    episode_context: str,
    provider: LLMProvider,
    speaker: str | None = None,
) -> str:
    """Rewrite entity mentions in ``text`` per the provider; never destructive.

    Any provider failure returns ``text`` verbatim.
    """
    req = LlmRequest(
        task_tag="normalize",
        prompt=coref_prompt(text, episode_context, speaker),
        key=text,
        payload={"text": text, "context": episode_context, "speaker": speaker},
        max_output_tokens=DEFAULT_BUDGETS["normalize"],
    )

    def fallback(exc: Exception) -> None:
        logger.warning("coreference resolution failed, keeping text as-is: %s", exc)
        return None

    data = call_with_fallback(provider, req, fallback)
    if data is None:
        return text
    out = data["text"] if "text" in data else apply_mapping(text, data["mapping"])
    return out if out.strip() else text
