"""Ingested-but-unbuilt turns, persisted in ``turns.log`` so ingest and build can be separate runs."""

from __future__ import annotations

import threading
from collections import defaultdict
from pathlib import Path

from ..core import ConflictError, DialogueTurn
from .records import RecordFile


class TurnStaging:
    def __init__(self, path: str | Path | None = None):
        self._file = RecordFile(path)
        self._lock = threading.Lock()
        self._turns: dict[str, dict[int, DialogueTurn]] = defaultdict(dict)
        for rtype, payload in self._file:
            if rtype == "turn":
                t = DialogueTurn.from_dict(payload)
                self._turns[t.session_id][t.turn_index] = t

    def add(self, turns: list[DialogueTurn]) -> int:
        """Stage turns; identical re-ingests are no-ops. Returns how many were new."""
        with self._lock:
            fresh = []
            for t in turns:
                seen = self._turns[t.session_id].get(t.turn_index)
                if seen is None:
                    fresh.append(t)
                elif seen != t:
                    raise ConflictError(f"session {t.session_id} turn {t.turn_index} already staged with different content")
            self._file.append([("turn", t.to_dict()) for t in fresh])
            for t in fresh:
                self._turns[t.session_id][t.turn_index] = t
            return len(fresh)

    def session(self, session_id: str) -> list[DialogueTurn]:
        by_index = self._turns.get(session_id, {})
        return [by_index[i] for i in sorted(by_index)]

    def sessions(self) -> list[str]:
        return sorted(s for s, v in self._turns.items() if v)
