"""Domain types, identifiers, clocks and the error hierarchy.

Every record type here is a frozen dataclass. Stores hand out these values
directly; changing a note means building a new value via ``dataclasses.replace``
and routing it through a logged ``MemoryOp``.
"""

from __future__ import annotations

import math
import random
import re
import secrets
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any, Callable, Iterable, Literal, Optional

SCHEMA_VERSION = 1

Category = Literal["fact", "preference", "profile"]
CATEGORIES: frozenset[str] = frozenset({"fact", "preference", "profile"})
BOUNDARY_REASONS: frozenset[str] = frozenset({"topic_shift", "surprise", "both", "session_start"})
NOTE_STATUSES: frozenset[str] = frozenset({"active", "tombstoned"})
OP_KINDS: frozenset[str] = frozenset({"ADD", "UPDATE", "DELETE"})
RELATION_VERDICTS: frozenset[str] = frozenset({"independent", "extendable", "contradictory"})


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class HierMemError(Exception):
    """Base class; ``code`` is the wire-level error code."""

    code = "internal"


class ValidationError(HierMemError, ValueError):
    code = "validation"


class ConflictError(HierMemError):
    code = "conflict"


class DuplicateSessionError(ConflictError):
    pass


class ImmutabilityError(HierMemError):
    code = "immutability"


class StaleTargetError(HierMemError):
    code = "stale_target"


class ProviderUnavailable(HierMemError):
    """Transport-level provider failure. Safe to retry."""

    code = "provider_unavailable"
    retryable = True


class ProviderParseError(HierMemError):
    """Provider answered, but not in the schema the task expects."""

    code = "provider_unavailable"

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class UnknownScriptKey(HierMemError, KeyError):
    """A scripted provider was asked for a (task, key) pair it has no entry for."""

    code = "internal"


# ---------------------------------------------------------------------------
# Time
# ---------------------------------------------------------------------------


def utc(dt: datetime) -> datetime:
    """Coerce to an aware UTC instant truncated to whole seconds."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def format_instant(dt: datetime) -> str:
    return utc(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_instant(value: str) -> datetime:
    value = value.strip()
    if value.endswith("Z"):
        value = value[:-1] + "+00:00"
    # 3.10's fromisoformat only takes 3- or 6-digit fractions
    value = re.sub(r"\.(\d+)", lambda m: "." + (m.group(1) + "000000")[:6], value, count=1)
    try:
        return utc(datetime.fromisoformat(value))
    except ValueError as exc:
        raise ValidationError(f"not an ISO-8601 instant: {value!r}") from exc


class SystemClock:
    def __call__(self) -> datetime:
        return utc(datetime.now(timezone.utc))


class FixedClock:
    """Manually advanced clock for deterministic runs."""

    def __init__(self, start: datetime | str = "2024-01-01T00:00:00Z"):
        self._now = parse_instant(start) if isinstance(start, str) else utc(start)
        self._lock = threading.Lock()

    def __call__(self) -> datetime:
        with self._lock:
            return self._now

    def advance(self, delta: timedelta) -> None:
        with self._lock:
            self._now = utc(self._now + delta)


Clock = Callable[[], datetime]


# ---------------------------------------------------------------------------
# Identifiers
# ---------------------------------------------------------------------------

ID_PREFIXES = {"episode": "ep", "note": "nt", "op": "op"}


class IdFactory:
    """Time-prefixed, monotonic, randomised identifiers.

    Layout: ``<prefix>_<12 hex ms>_<6 hex seq>_<8 hex random>``. The sequence
    field keeps ids sortable when the clock stalls (or is fixed in tests) and
    when it moves backwards; ``observe`` primes the factory with persisted ids
    so a restarted store never issues an id at or below one it already holds.
    """

    def __init__(self, clock: Clock | None = None, seed: int | None = None):
        self._clock = clock or SystemClock()
        self._rng: random.Random = random.Random(seed) if seed is not None else secrets.SystemRandom()
        self._lock = threading.Lock()
        self._last: tuple[int, int] = (-1, 0)
        self._deterministic = seed is not None

    def _millis(self) -> int:
        if self._deterministic:
            return int(self._clock().timestamp() * 1000)
        return time.time_ns() // 1_000_000

    def observe(self, ident: str) -> None:
        try:
            _, ts, seq, _ = ident.split("_")
            stamp = (int(ts, 16), int(seq, 16))
        except ValueError:
            return
        with self._lock:
            if stamp > self._last:
                self._last = stamp

    def new_id(self, kind: str) -> str:
        prefix = ID_PREFIXES.get(kind, kind[:2])
        ms = self._millis()
        with self._lock:
            last_ms, last_seq = self._last
            if ms <= last_ms:
                ms, seq = last_ms, last_seq + 1
            else:
                seq = 0
            self._last = (ms, seq)
            rand = self._rng.getrandbits(32)
        return f"{prefix}_{ms:012x}_{seq:06x}_{rand:08x}"


_default_ids = IdFactory()


def new_id(kind: str) -> str:
    """Module-level convenience backed by a process-wide factory."""
    return _default_ids.new_id(kind)


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


def _check_unit(vec: tuple[float, ...], what: str) -> None:
    norm = math.sqrt(math.fsum(v * v for v in vec))
    if abs(norm - 1.0) > 1e-6:
        raise ValidationError(f"{what} embedding must be unit-norm, got {norm:.8f}")


@dataclass(frozen=True)
class DialogueTurn:
    turn_index: int
    speaker: str
    text: str
    session_id: str
    timestamp: Optional[datetime] = None

    def __post_init__(self) -> None:
        if not isinstance(self.turn_index, int) or self.turn_index < 0:
            raise ValidationError(f"turn_index must be a non-negative int, got {self.turn_index!r}")
        if not self.speaker or not self.speaker.strip():
            raise ValidationError("speaker must be non-empty")
        if not self.text or not self.text.strip():
            raise ValidationError(f"turn {self.turn_index}: text is empty")
        if self.timestamp is not None:
            object.__setattr__(self, "timestamp", utc(self.timestamp))

    def to_dict(self) -> dict[str, Any]:
        return {
            "turn_index": self.turn_index,
            "speaker": self.speaker,
            "text": self.text,
            "session_id": self.session_id,
            "timestamp": format_instant(self.timestamp) if self.timestamp else None,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DialogueTurn:
        ts = d.get("timestamp")
        return cls(
            turn_index=int(d["turn_index"]),
            speaker=d["speaker"],
            text=d["text"],
            session_id=d["session_id"],
            timestamp=parse_instant(ts) if ts else None,
        )


def check_contiguous(turns: Iterable[DialogueTurn], start: int | None = 0) -> None:
    """Raise unless turn indices are consecutive (from ``start`` when given)."""
    indices = [t.turn_index for t in turns]
    if not indices:
        raise ValidationError("no turns")
    first = indices[0] if start is None else start
    if indices != list(range(first, first + len(indices))):
        raise ValidationError(f"turn indices not contiguous from {first}: {indices[:10]}...")


@dataclass(frozen=True)
class Episode:
    episode_id: str
    user_id: str
    session_id: str
    topic: str
    topic_summary: str
    turns: tuple[DialogueTurn, ...]
    time_span: tuple[datetime, datetime]
    boundary_reason: str
    embedding: tuple[float, ...]
    metadata: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "turns", tuple(self.turns))
        object.__setattr__(self, "embedding", tuple(float(v) for v in self.embedding))
        if isinstance(self.metadata, dict):
            object.__setattr__(self, "metadata", tuple(sorted(self.metadata.items())))
        if not self.turns:
            raise ValidationError("episode has no turns")
        check_contiguous(self.turns, start=None)
        if self.boundary_reason not in BOUNDARY_REASONS:
            raise ValidationError(f"bad boundary_reason {self.boundary_reason!r}")
        _check_unit(self.embedding, "episode")

    @property
    def first_turn(self) -> int:
        return self.turns[0].turn_index

    @property
    def last_turn(self) -> int:
        return self.turns[-1].turn_index

    @property
    def meta(self) -> dict[str, str]:
        return dict(self.metadata)

    def text(self) -> str:
        return "\n".join(f"{t.speaker}: {t.text}" for t in self.turns)

    def to_dict(self) -> dict[str, Any]:
        return {
            "episode_id": self.episode_id,
            "user_id": self.user_id,
            "session_id": self.session_id,
            "topic": self.topic,
            "topic_summary": self.topic_summary,
            "turns": [t.to_dict() for t in self.turns],
            "time_span": [format_instant(self.time_span[0]), format_instant(self.time_span[1])],
            "boundary_reason": self.boundary_reason,
            "embedding": list(self.embedding),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Episode:
        return cls(
            episode_id=d["episode_id"],
            user_id=d["user_id"],
            session_id=d["session_id"],
            topic=d["topic"],
            topic_summary=d["topic_summary"],
            turns=tuple(DialogueTurn.from_dict(t) for t in d["turns"]),
            time_span=(parse_instant(d["time_span"][0]), parse_instant(d["time_span"][1])),
            boundary_reason=d["boundary_reason"],
            embedding=tuple(d["embedding"]),
            metadata=dict(d.get("metadata", {})),
        )


@dataclass(frozen=True)
class Note:
    note_id: str
    user_id: str
    content: str
    category: str
    provenance: tuple[str, ...]
    created_at: datetime
    updated_at: datetime
    embedding: tuple[float, ...]
    status: str = "active"
    revision: int = 1
    usage_count: int = 0
    metadata: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "provenance", tuple(self.provenance))
        object.__setattr__(self, "embedding", tuple(float(v) for v in self.embedding))
        if isinstance(self.metadata, dict):
            object.__setattr__(self, "metadata", tuple(sorted(self.metadata.items())))
        if self.category not in CATEGORIES:
            raise ValidationError(f"note category must be one of {sorted(CATEGORIES)}, got {self.category!r}")
        if self.status not in NOTE_STATUSES:
            raise ValidationError(f"bad note status {self.status!r}")
        if not self.provenance:
            raise ValidationError("note provenance must be non-empty")
        if not self.content.strip():
            raise ValidationError("note content is empty")
        if self.revision < 1 or self.usage_count < 0:
            raise ValidationError("revision must be >= 1 and usage_count >= 0")
        if self.updated_at < self.created_at:
            raise ValidationError("updated_at precedes created_at")
        _check_unit(self.embedding, "note")

    @property
    def active(self) -> bool:
        return self.status == "active"

    def to_dict(self) -> dict[str, Any]:
        return {
            "note_id": self.note_id,
            "user_id": self.user_id,
            "content": self.content,
            "category": self.category,
            "status": self.status,
            "provenance": list(self.provenance),
            "created_at": format_instant(self.created_at),
            "updated_at": format_instant(self.updated_at),
            "revision": self.revision,
            "usage_count": self.usage_count,
            "embedding": list(self.embedding),
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Note:
        return cls(
            note_id=d["note_id"],
            user_id=d["user_id"],
            content=d["content"],
            category=d["category"],
            status=d["status"],
            provenance=tuple(d["provenance"]),
            created_at=parse_instant(d["created_at"]),
            updated_at=parse_instant(d["updated_at"]),
            revision=int(d["revision"]),
            usage_count=int(d["usage_count"]),
            embedding=tuple(d["embedding"]),
            metadata=dict(d.get("metadata", {})),
        )


@dataclass(frozen=True)
class MemoryOp:
    """One typed note mutation.

    ``target_note_ids`` names the note an op acts on; for ADD it is the id of
    the note being created, so replaying the log reproduces ids exactly.
    ``cause`` is ``construction``, ``reconsolidation`` or ``forgetting``.
    """

    op_id: str
    user_id: str
    kind: str
    target_note_ids: tuple[str, ...]
    applied_at: datetime
    new_content: Optional[str] = None
    category: Optional[str] = None
    relation_verdict: Optional[str] = None
    trigger_query: Optional[str] = None
    supporting_episode_ids: tuple[str, ...] = ()
    cause: str = "construction"

    def __post_init__(self) -> None:
        object.__setattr__(self, "target_note_ids", tuple(self.target_note_ids))
        object.__setattr__(self, "supporting_episode_ids", tuple(self.supporting_episode_ids))
        if self.kind not in OP_KINDS:
            raise ValidationError(f"bad op kind {self.kind!r}")
        v = self.relation_verdict
        if v is not None and v not in RELATION_VERDICTS:
            raise ValidationError(f"bad relation verdict {v!r}")
        if len(self.target_note_ids) != 1:
            raise ValidationError(f"{self.kind} must name exactly one target note")
        if self.kind == "ADD":
            if v not in (None, "independent", "contradictory"):
                raise ValidationError(f"ADD cannot carry verdict {v!r}")
            if not self.new_content or self.category not in CATEGORIES:
                raise ValidationError("ADD needs new_content and a valid category")
            if not self.supporting_episode_ids:
                raise ValidationError("ADD needs at least one supporting episode")
        elif self.kind == "UPDATE":
            if v != "extendable":
                raise ValidationError("UPDATE requires verdict=extendable")
            if not self.new_content:
                raise ValidationError("UPDATE needs new_content")
        elif self.kind == "DELETE":
            if self.cause == "forgetting":
                if v is not None:
                    raise ValidationError("forgetting DELETE carries no verdict")
            elif v != "contradictory":
                raise ValidationError("DELETE requires verdict=contradictory")

    @property
    def target(self) -> str:
        return self.target_note_ids[0]

    def to_dict(self) -> dict[str, Any]:
        return {
            "op_id": self.op_id,
            "user_id": self.user_id,
            "kind": self.kind,
            "target_note_ids": list(self.target_note_ids),
            "new_content": self.new_content,
            "category": self.category,
            "relation_verdict": self.relation_verdict,
            "trigger_query": self.trigger_query,
            "supporting_episode_ids": list(self.supporting_episode_ids),
            "cause": self.cause,
            "applied_at": format_instant(self.applied_at),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MemoryOp:
        return cls(
            op_id=d["op_id"],
            user_id=d["user_id"],
            kind=d["kind"],
            target_note_ids=tuple(d["target_note_ids"]),
            new_content=d.get("new_content"),
            category=d.get("category"),
            relation_verdict=d.get("relation_verdict"),
            trigger_query=d.get("trigger_query"),
            supporting_episode_ids=tuple(d.get("supporting_episode_ids", ())),
            cause=d.get("cause", "construction"),
            applied_at=parse_instant(d["applied_at"]),
        )


@dataclass(frozen=True)
class ScoredHit:
    item_id: str
    layer: Literal["note", "episode"]
    score: float
    snippet: str

    def to_dict(self) -> dict[str, Any]:
        return {"item_id": self.item_id, "layer": self.layer, "score": self.score, "snippet": self.snippet}


def rank_key(hit: ScoredHit) -> tuple[float, str]:
    """Score descending, then item_id ascending."""
    return (-hit.score, hit.item_id)


@dataclass
class BuildReport:
    user_id: str
    session_id: str
    episode_ids: list[str] = field(default_factory=list)
    note_ids: list[str] = field(default_factory=list)
    op_ids: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "user_id": self.user_id,
            "session_id": self.session_id,
            "episode_ids": list(self.episode_ids),
            "note_ids": list(self.note_ids),
            "op_ids": list(self.op_ids),
        }
