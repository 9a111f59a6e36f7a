"""Line-delimited record files.

Each line is one JSON object ``{"payload": ..., "record_type": ..., "schema_version": 1}``
with sorted keys, no insignificant whitespace and UTF-8 text. That canonical
form makes "read back and re-serialise" byte-identical, which the stores rely
on for round-trip and replay checks.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Any, Iterator

from ..core import SCHEMA_VERSION, ValidationError

logger = logging.getLogger(__name__)


def encode(record_type: str, payload: dict[str, Any]) -> str:
    return json.dumps(
        {"schema_version": SCHEMA_VERSION, "record_type": record_type, "payload": payload},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )


def decode(line: str, where: str = "") -> tuple[str, dict[str, Any]]:
    try:
        obj = json.loads(line)
        version = obj["schema_version"]
        rtype = obj["record_type"]
        payload = obj["payload"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"corrupt record {where}: {exc}") from exc
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {version} {where}")
    return rtype, payload


class RecordFile:
    """Append-only record file. ``path=None`` keeps nothing on disk."""

    def __init__(self, path: str | os.PathLike | None, fsync: bool = False):
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._drop_torn_tail()

    def _drop_torn_tail(self) -> None:
        """Cut an unterminated last line so later appends start on a fresh line."""
        if not self.path.exists():
            return
        with open(self.path, "rb+") as fh:
            fh.seek(0, os.SEEK_END)
            size = fh.tell()
            if size == 0:
                return
            fh.seek(size - 1)
            if fh.read(1) == b"\n":
                return
            data = fh.seek(0) or fh.read()
            keep = data.rfind(b"\n") + 1
            logger.warning("dropping %d bytes of torn record at end of %s", size - keep, self.path)
            fh.truncate(keep)

    def append(self, records: list[tuple[str, dict[str, Any]]]) -> None:
        """Write all records with a single ``write`` call."""
        if self.path is None or not records:
            return
        blob = "".join(encode(t, p) + "\n" for t, p in records)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(blob)
            fh.flush()
            if self.fsync:
                os.fsync(fh.fileno())

    def __iter__(self) -> Iterator[tuple[str, dict[str, Any]]]:
        if self.path is None or not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.endswith("\n"):
                    # torn final write: the record never committed
                    break
                yield decode(line, f"at {self.path}:{lineno}")

    def read_bytes(self) -> bytes:
        if self.path is None or not self.path.exists():
            return b""
        return self.path.read_bytes()


def write_atomic(path: Path, records: list[tuple[str, dict[str, Any]]]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for t, p in records:
            fh.write(encode(t, p) + "\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
