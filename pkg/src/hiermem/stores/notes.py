"""Note store: state derived from an append-only op log plus periodic snapshots.

Files (under the store directory):

``ops.log``
    One record per line. ``record_type`` is ``op`` (a serialised MemoryOp) or
    ``usage`` (``{"note_ids": [...]}``, one per retrieval that used notes).
``notes.snapshot``
    Rewritten atomically every ``snapshot_every`` ops. First line is a
    ``snapshot_header`` with ``records_covered`` (how many ops.log lines the
    snapshot already reflects), then one ``note`` record per note.

On open, the snapshot is loaded and the remaining ops.log tail replayed.
Every write appends to ops.log before the in-memory state changes.
"""

from __future__ import annotations

import copy
import logging
import threading
from collections import defaultdict
from dataclasses import replace
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from ..core import ConflictError, MemoryOp, Note, ScoredHit, StaleTargetError, ValidationError, rank_key
from ..providers.embedding import Embedder
from .episodes import SCORE_DECIMALS
from .records import RecordFile, encode, write_atomic

logger = logging.getLogger(__name__)


class NoteStore:
    def __init__(
        self,
        directory: str | Path | None,
        embedder: Embedder,
        snapshot_every: int = 256,
    ):
        self.embedder = embedder
        self.snapshot_every = snapshot_every
        self.dir = Path(directory) if directory is not None else None
        self._log = RecordFile(self.dir / "ops.log" if self.dir else None)
        self._lock = threading.RLock()
        self._notes: dict[str, Note] = {}
        self._by_user: dict[str, list[str]] = defaultdict(list)
        self._ops: list[MemoryOp] = []
        self._matrix: dict[str, tuple[list[str], np.ndarray]] = {}
        self._records = 0
        self._ops_since_snapshot = 0
        # test hook: runs after the log write, before state mutation
        self.after_log_hook: Optional[Callable[[list[MemoryOp]], None]] = None
        self._load()

    # -- loading / replay ----------------------------------------------------

    def _load(self) -> None:
        covered = 0
        if self.dir is not None and (self.dir / "notes.snapshot").exists():
            snap = RecordFile(self.dir / "notes.snapshot")
            for rtype, payload in snap:
                if rtype == "snapshot_header":
                    covered = int(payload["records_covered"])
                elif rtype == "note":
                    self._set(Note.from_dict(payload))
        for i, (rtype, payload) in enumerate(self._log):
            self._records += 1
            if rtype == "op":
                op = MemoryOp.from_dict(payload)
                self._ops.append(op)
                if i >= covered:
                    self._set(self._transition(self._notes.get(op.target), op))
            elif rtype == "usage" and i >= covered:
                self._bump(payload["note_ids"])

    @classmethod
    def replay(cls, records: Iterable[tuple[str, dict]], embedder: Embedder) -> NoteStore:
        """Build an in-memory store by applying log records to empty state."""
        store = cls(None, embedder)
        for rtype, payload in records:
            if rtype == "op":
                op = MemoryOp.from_dict(payload)
                store._ops.append(op)
                store._set(store._transition(store._notes.get(op.target), op))
            elif rtype == "usage":
                store._bump(payload["note_ids"])
        return store

    def log_records(self) -> list[tuple[str, dict]]:
        return list(self._log)

    def recover(self) -> NoteStore:
        """A fresh store opened from this store's files."""
        if self.dir is None:
            raise ValidationError("in-memory store has nothing to recover from")
        return NoteStore(self.dir, self.embedder, self.snapshot_every)

    # -- state transitions ---------------------------------------------------

    def _transition(self, cur: Optional[Note], op: MemoryOp) -> Note:
        if cur is not None and cur.user_id != op.user_id:
            raise ValidationError(f"op {op.op_id} targets a note of another user")
        if op.kind == "ADD":
            if cur is not None:
                raise ConflictError(f"note {op.target} already exists")
            return Note(
                note_id=op.target,
                user_id=op.user_id,
                content=op.new_content,
                category=op.category,
                provenance=op.supporting_episode_ids,
                created_at=op.applied_at,
                updated_at=op.applied_at,
                embedding=tuple(self.embedder.embed(op.new_content)),
            )
        if cur is None or not cur.active:
            raise StaleTargetError(f"{op.kind} target {op.target} is missing or tombstoned")
        when = max(cur.updated_at, op.applied_at)
        if op.kind == "UPDATE":
            prov = cur.provenance + tuple(e for e in dict.fromkeys(op.supporting_episode_ids) if e not in cur.provenance)
            return replace(
                cur,
                content=op.new_content,
                embedding=tuple(self.embedder.embed(op.new_content)),
                revision=cur.revision + 1,
                provenance=prov,
                updated_at=when,
            )
        return replace(cur, status="tombstoned", updated_at=when)

    def _set(self, note: Note) -> None:
        if note.note_id not in self._notes:
            self._by_user[note.user_id].append(note.note_id)
        self._notes[note.note_id] = note
        self._matrix.pop(note.user_id, None)

    def _bump(self, note_ids: Iterable[str]) -> None:
        for nid in note_ids:
            n = self._notes.get(nid)
            if n is not None:
                self._notes[nid] = replace(n, usage_count=n.usage_count + 1)

    def apply_op(self, op: MemoryOp) -> Note:
        return self.apply_ops([op])[0]

    def apply_ops(self, ops: list[MemoryOp]) -> list[Note]:
        """Validate every op against a working copy, log them all, then apply.

        Either all ops land or none do.
        """
        if not ops:
            return []
        with self._lock:
            working: dict[str, Note] = {}
            results = []
            for op in ops:
                cur = working.get(op.target, self._notes.get(op.target))
                new = self._transition(cur, op)
                working[op.target] = new
                results.append(new)
            self._log.append([("op", op.to_dict()) for op in ops])
            self._records += len(ops)
            if self.after_log_hook is not None:
                self.after_log_hook(ops)
            for note in working.values():
                self._set(note)
            self._ops.extend(ops)
            self._ops_since_snapshot += len(ops)
            if self.dir is not None and self._ops_since_snapshot >= self.snapshot_every:
                self.snapshot()
        return results

    def snapshot(self) -> None:
        if self.dir is None:
            return
        with self._lock:
            recs = [("snapshot_header", {"records_covered": self._records})]
            recs.extend(("note", self._notes[i].to_dict()) for i in sorted(self._notes))
            write_atomic(self.dir / "notes.snapshot", recs)
            self._ops_since_snapshot = 0

    def record_usage(self, note_ids: Iterable[str]) -> None:
        with self._lock:
            valid = []
            for nid in note_ids:
                n = self._notes.get(nid)
                if n is None or not n.active:
                    logger.warning("usage for missing or tombstoned note %s ignored", nid)
                    continue
                valid.append(nid)
            if not valid:
                return
            self._log.append([("usage", {"note_ids": valid})])
            self._records += 1
            self._bump(valid)

    # -- reads ---------------------------------------------------------------

    def get(self, note_id: str) -> Note:
        try:
            return self._notes[note_id]
        except KeyError:
            raise ValidationError(f"unknown note {note_id}") from None

    def __contains__(self, note_id: str) -> bool:
        return note_id in self._notes

    def list(self, user_id: str, status: Optional[str] = None) -> list[Note]:
        notes = [self._notes[i] for i in list(self._by_user.get(user_id, ()))]
        if status is not None:
            notes = [n for n in notes if n.status == status]
        return notes

    def active(self, user_id: str) -> list[Note]:
        return self.list(user_id, "active")

    def ops(self, user_id: Optional[str] = None) -> list[MemoryOp]:
        ops = list(self._ops)
        return ops if user_id is None else [o for o in ops if o.user_id == user_id]

    def users(self) -> list[str]:
        return sorted(self._by_user)

    def all_ids(self) -> list[str]:
        return list(self._notes) + [o.op_id for o in self._ops]

    def export_state(self) -> bytes:
        """Canonical serialisation of every note, sorted by id."""
        with self._lock:
            return "".join(encode("note", self._notes[i].to_dict()) + "\n" for i in sorted(self._notes)).encode()

    def clone(self) -> NoteStore:
        """Detached in-memory copy for staging a transaction."""
        other = NoteStore(None, self.embedder)
        with self._lock:
            other._notes = dict(self._notes)
            other._by_user = copy.deepcopy(self._by_user)
        return other

    def _user_matrix(self, user_id: str) -> tuple[list[str], np.ndarray]:
        with self._lock:
            cached = self._matrix.get(user_id)
            if cached is None:
                ids = [i for i in self._by_user.get(user_id, ()) if self._notes[i].active]
                mat = np.array([self._notes[i].embedding for i in ids], dtype=np.float64)
                cached = (ids, mat)
                self._matrix[user_id] = cached
            return cached

    def search_notes(self, query_vec, k: int, user_id: str) -> list[ScoredHit]:
        if not isinstance(k, int) or k < 1:
            raise ValidationError(f"k must be a positive integer, got {k!r}")
        ids, mat = self._user_matrix(user_id)
        if not ids:
            return []
        cos = mat @ np.asarray(query_vec, dtype=np.float64)
        hits = [
            ScoredHit(nid, "note", round(float(c), SCORE_DECIMALS), self._notes[nid].content)
            for nid, c in zip(ids, cos)
        ]
        hits.sort(key=rank_key)
        return hits[:k]
