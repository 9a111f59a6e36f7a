"""Append-only episode store with fused vector + lexical search."""

from __future__ import annotations

import threading
from collections import Counter, defaultdict
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import ConflictError, Episode, ImmutabilityError, ScoredHit, ValidationError, rank_key
from ..text import STOPWORDS, words
from .records import RecordFile

SCORE_DECIMALS = 9


def lexical_overlap(query_terms: Counter, doc_terms: Counter) -> float:
    """Share of query tokens matched by the document, counted with multiplicity.

    ``sum_t min(tf_q(t), tf_d(t)) / sum_t tf_q(t)``, so the value is in [0, 1]
    and does not depend on the rest of the corpus.
    """
    total = sum(query_terms.values())
    if total == 0:
        return 0.0
    return sum(min(n, doc_terms.get(t, 0)) for t, n in query_terms.items()) / total


def lexical_terms(text: str) -> Counter:
    return Counter(w for w in words(text) if w not in STOPWORDS)


def episode_snippet(e: Episode) -> str:
    head = f"[{e.time_span[0].date().isoformat()}] {e.topic}: {e.topic_summary}"
    return head + "\n" + e.text()


class EpisodeStore:
    def __init__(
        self,
        path: str | Path | None = None,
        vector_weight: float = 0.7,
        lexical_weight: float = 0.3,
    ):
        self.vector_weight = vector_weight
        self.lexical_weight = lexical_weight
        self._file = RecordFile(path)
        self._lock = threading.RLock()
        self._episodes: dict[str, Episode] = {}
        self._by_user: dict[str, list[str]] = defaultdict(list)
        self._terms: dict[str, Counter] = {}
        self._matrix: dict[str, np.ndarray] = {}
        self.query_count = 0
        self.query_count_by_user: Counter = Counter()
        for rtype, payload in self._file:
            if rtype == "episode":
                self._insert(Episode.from_dict(payload))

    # -- writes --------------------------------------------------------------

    def _insert(self, e: Episode) -> None:
        self._episodes[e.episode_id] = e
        self._by_user[e.user_id].append(e.episode_id)
        self._terms[e.episode_id] = lexical_terms(f"{e.topic} {e.topic_summary} {e.text()}")
        self._matrix.pop(e.user_id, None)

    def append_episode(self, e: Episode) -> str:
        with self._lock:
            if e.episode_id in self._episodes:
                raise ImmutabilityError(f"episode {e.episode_id} already stored and cannot be replaced")
            lo, hi = e.first_turn, e.last_turn
            for other in self.session_episodes(e.user_id, e.session_id):
                if lo <= other.last_turn and other.first_turn <= hi:
                    raise ConflictError(
                        f"episode turns {lo}-{hi} overlap stored episode {other.episode_id} "
                        f"({other.first_turn}-{other.last_turn}) in session {e.session_id}"
                    )
            self._file.append([("episode", e.to_dict())])
            self._insert(e)
        return e.episode_id

    def update_episode(self, episode_id: str, **changes) -> None:
        """Episodes never change once stored; this always raises."""
        if episode_id not in self._episodes:
            raise ValidationError(f"unknown episode {episode_id}")
        raise ImmutabilityError(f"episode {episode_id} is immutable")

    delete_episode = update_episode

    # -- reads ---------------------------------------------------------------

    def get(self, episode_id: str) -> Episode:
        try:
            return self._episodes[episode_id]
        except KeyError:
            raise ValidationError(f"unknown episode {episode_id}") from None

    def __contains__(self, episode_id: str) -> bool:
        return episode_id in self._episodes

    def __len__(self) -> int:
        return len(self._episodes)

    def list(self, user_id: str, session_id: Optional[str] = None) -> list[Episode]:
        eps = [self._episodes[i] for i in list(self._by_user.get(user_id, ()))]
        if session_id is not None:
            eps = [e for e in eps if e.session_id == session_id]
        return eps

    def session_episodes(self, user_id: str, session_id: str) -> list[Episode]:
        return sorted(self.list(user_id, session_id), key=lambda e: e.first_turn)

    def has_session(self, user_id: str, session_id: str) -> bool:
        return any(True for _ in self.list(user_id, session_id))

    def users(self) -> list[str]:
        return sorted(self._by_user)

    def all_ids(self) -> list[str]:
        return list(self._episodes)

    def read_bytes(self) -> bytes:
        return self._file.read_bytes()

    # -- search --------------------------------------------------------------

    def _user_matrix(self, user_id: str) -> tuple[list[str], np.ndarray]:
        with self._lock:
            ids = list(self._by_user.get(user_id, ()))
            mat = self._matrix.get(user_id)
            if mat is None or mat.shape[0] != len(ids):
                mat = np.array([self._episodes[i].embedding for i in ids], dtype=np.float64)
                self._matrix[user_id] = mat
            return ids, mat

    def search_episodes(self, query_text: str, query_vec, k: int, user_id: str) -> list[ScoredHit]:
        """Top-k by ``vector_weight * cosine + lexical_weight * lexical_overlap``.

        Scores are rounded to 1e-9 before ranking so ties resolve by id the
        same way regardless of BLAS summation order.
        """
        if not isinstance(k, int) or k < 1:
            raise ValidationError(f"k must be a positive integer, got {k!r}")
        with self._lock:
            self.query_count += 1
            self.query_count_by_user[user_id] += 1
        ids, mat = self._user_matrix(user_id)
        if not ids:
            return []
        cos = mat @ np.asarray(query_vec, dtype=np.float64)
        qterms = lexical_terms(query_text)
        hits = []
        for eid, c in zip(ids, cos):
            score = self.vector_weight * float(c) + self.lexical_weight * lexical_overlap(qterms, self._terms[eid])
            hits.append(ScoredHit(eid, "episode", round(score, SCORE_DECIMALS), episode_snippet(self._episodes[eid])))
        hits.sort(key=rank_key)
        return hits[:k]
