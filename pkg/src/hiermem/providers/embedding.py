"""Text embedders. Every embedder returns unit-norm float64 numpy vectors."""

from __future__ import annotations

import hashlib
import os
from functools import lru_cache
from typing import Optional

import httpx
import numpy as np

from ..core import ProviderParseError, ProviderUnavailable, ValidationError
from ..text import words


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ValidationError("cannot normalise a zero vector")
    return vec / norm


class Embedder:
    dim: int
    kind = "base"

    def embed(self, text: str) -> np.ndarray:
        raise NotImplementedError


class HashingEmbedder(Embedder):
    """Signed feature hashing over word unigrams and bigrams.

    Buckets and signs come from blake2b so vectors are stable across
    processes (Python's ``hash`` is salted per run).
    """

    kind = "hashing"

    def __init__(self, dim: int = 768):
        if dim < 2:
            raise ValidationError("embedding dim must be >= 2")
        self.dim = dim
        self._cached = lru_cache(maxsize=8192)(self._embed)

    @staticmethod
    def features(text: str) -> list[str]:
        toks = words(text)
        feats = list(toks)
        feats.extend(f"{a} {b}" for a, b in zip(toks, toks[1:]))
        if not feats:
            feats = [text.strip()]
        return feats

    def _bucket(self, feature: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest(), "little")
        return h % self.dim, (1.0 if (h >> 63) & 1 else -1.0)

    def _embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for f in self.features(text):
            i, s = self._bucket(f)
            vec[i] += s
        if not vec.any():
            # every feature cancelled out; fall back to the raw string
            i, s = self._bucket("\x00" + text)
            vec[i] = s
        out = _unit(vec)
        out.setflags(write=False)
        return out

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValidationError("cannot embed empty text")
        return self._cached(text)


class RemoteEmbedder(Embedder):
    """OpenAI-style ``/embeddings`` endpoint; output is re-normalised locally."""

    kind = "remote"

    def __init__(
        self,
        base_url: str,
        model: str,
        dim: int,
        api_key: Optional[str] = None,
        api_key_env: str = "HIERMEM_API_KEY",
        timeout: float = 30.0,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.dim = dim
        self.model = model
        key = api_key if api_key is not None else os.environ.get(api_key_env, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport)

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValidationError("cannot embed empty text")
        try:
            resp = self._client.post("/embeddings", json={"model": self.model, "input": text})
        except httpx.TransportError as exc:
            raise ProviderUnavailable(f"embedding endpoint unreachable: {exc}") from exc
        if resp.status_code >= 400:
            raise ProviderUnavailable(f"embedding endpoint returned HTTP {resp.status_code}")
        try:
            values = resp.json()["data"][0]["embedding"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderParseError("unexpected embedding envelope", raw=resp.text) from exc
        vec = np.asarray(values, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ProviderParseError(f"expected {self.dim}-dim embedding, got {vec.shape}", raw=resp.text[:200])
        return _unit(vec)
