"""LLM provider contract and the scripted / remote / wrapper implementations."""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

import httpx

from ..core import ProviderParseError, ProviderUnavailable, UnknownScriptKey, ValidationError
from ..text import count_tokens
from . import schemas

logger = logging.getLogger(__name__)

TASK_TAGS = frozenset(
    {
        "segment",
        "extract_stage1",
        "extract_stage2",
        "normalize",
        "judge_sufficiency",
        "classify_relation",
        "answer",
        "gpt_score",
    }
)

DEFAULT_BUDGETS = {
    "segment": 2048,
    "extract_stage1": 1024,
    "extract_stage2": 1024,
    "normalize": 512,
    "judge_sufficiency": 64,
    "classify_relation": 256,
    "answer": 8192,
    "gpt_score": 64,
}


@dataclass(frozen=True)
class LlmRequest:
    """A structured-output call.

    ``prompt`` is what a remote model sees. ``key`` lets scripted providers
    look up a canned answer; ``payload`` carries the same inputs in structured
    form for offline providers that do not parse prompts.
    """

    task_tag: str
    prompt: str
    key: str = ""
    payload: Mapping[str, Any] = field(default_factory=dict)
    max_output_tokens: int = 1024
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.task_tag not in TASK_TAGS:
            raise ValidationError(f"unknown task_tag {self.task_tag!r}")
        if self.temperature != 0.0:
            raise ValidationError("temperature is fixed at 0.0")
        if not self.prompt or not self.prompt.strip():
            raise ValidationError("prompt must be non-empty")


@dataclass
class LlmUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def add(self, other: LlmUsage) -> None:
        self.prompt_tokens += other.prompt_tokens
        self.completion_tokens += other.completion_tokens


@dataclass
class LlmResponse:
    data: dict[str, Any]
    raw: str
    usage: LlmUsage


class LLMProvider:
    """Base class. Subclasses implement ``complete`` returning raw text and usage."""

    kind = "base"

    def __init__(self) -> None:
        self.usage = LlmUsage()
        self.calls = 0
        self._usage_lock = threading.Lock()

    def complete(self, request: LlmRequest) -> tuple[str, LlmUsage]:
        raise NotImplementedError

    def _account(self, usage: LlmUsage) -> None:
        with self._usage_lock:
            self.usage.add(usage)
            self.calls += 1

    def llm_call(self, request: LlmRequest) -> LlmResponse:
        raw, usage = self.complete(request)
        self._account(usage)
        try:
            data = schemas.parse(request.task_tag, raw)
        except ProviderParseError as first:
            logger.info("repairing %s response for key %r: %s", request.task_tag, request.key, first)
            repair = LlmRequest(
                task_tag=request.task_tag,
                prompt=schemas.repair_prompt(request.prompt, raw, str(first)),
                key=request.key,
                payload=request.payload,
                max_output_tokens=request.max_output_tokens,
            )
            raw, usage2 = self.complete(repair)
            self._account(usage2)
            usage = LlmUsage(usage.prompt_tokens + usage2.prompt_tokens, usage.completion_tokens + usage2.completion_tokens)
            data = schemas.parse(request.task_tag, raw)
        return LlmResponse(data=data, raw=raw, usage=usage)


def mock_usage(prompt: str, raw: str) -> LlmUsage:
    return LlmUsage(count_tokens(prompt), count_tokens(raw))


ScriptEntry = Any  # dict | str | list | Callable[[LlmRequest], Any]


class ScriptedProvider(LLMProvider):
    """Answers from a fixed script keyed by ``(task_tag, key)``.

    An entry may be a dict (serialised as the response), a raw string
    (returned verbatim, handy for malformed output), a list (consumed in order,
    last item repeats) or a callable taking the request. ``"<prefix>:*"``
    matches keys starting with ``<prefix>:`` and ``"*"`` matches any key of
    the task; anything else missing raises UnknownScriptKey.
    """

    kind = "scripted"

    def __init__(self, script: Mapping[Any, ScriptEntry] | None = None):
        super().__init__()
        self._script: dict[tuple[str, str], ScriptEntry] = {}
        self._cursor: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()
        self.log: list[tuple[str, str]] = []
        for k, v in (script or {}).items():
            if isinstance(k, tuple):
                self.set(k[0], k[1], v)
            else:
                for key, entry in v.items():
                    self.set(k, key, entry)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> ScriptedProvider:
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def set(self, task_tag: str, key: str, entry: ScriptEntry) -> None:
        if task_tag not in TASK_TAGS:
            raise ValidationError(f"unknown task_tag {task_tag!r} in script")
        with self._lock:
            if (task_tag, key) in self._script:
                raise ValidationError(f"duplicate script key {(task_tag, key)!r}")
            self._script[(task_tag, key)] = entry

    def replace(self, task_tag: str, key: str, entry: ScriptEntry) -> None:
        with self._lock:
            self._script[(task_tag, key)] = entry
            self._cursor.pop((task_tag, key), None)

    def _wildcard(self, task_tag: str, key: str) -> tuple[str, str]:
        prefix, sep, _ = key.partition(":")
        for cand in ([f"{prefix}:*"] if sep else []) + ["*"]:
            if (task_tag, cand) in self._script:
                return (task_tag, cand)
        raise UnknownScriptKey(f"no scripted response for {(task_tag, key)!r}")

    def has(self, task_tag: str, key: str) -> bool:
        if (task_tag, key) in self._script:
            return True
        try:
            self._wildcard(task_tag, key)
        except UnknownScriptKey:
            return False
        return True

    def complete(self, request: LlmRequest) -> tuple[str, LlmUsage]:
        slot = (request.task_tag, request.key)
        with self._lock:
            self.log.append(slot)
            if slot not in self._script:
                slot = self._wildcard(request.task_tag, request.key)
            entry = self._script[slot]
            if isinstance(entry, list):
                i = self._cursor.get(slot, 0)
                self._cursor[slot] = i + 1
                entry = entry[min(i, len(entry) - 1)]
        if callable(entry):
            entry = entry(request)
        raw = entry if isinstance(entry, str) else json.dumps(entry, sort_keys=True)
        return raw, mock_usage(request.prompt, raw)


class FaultInjectingProvider(LLMProvider):
    """Wraps a provider and breaks selected tasks.

    ``mode="malformed"`` returns unparsable text, ``mode="transport"`` raises
    ProviderUnavailable. Other tasks pass through to ``inner``.
    """

    kind = "fault"

    def __init__(self, inner: LLMProvider, tasks: set[str], mode: str = "malformed", keys: Optional[set[str]] = None):
        super().__init__()
        self.inner = inner
        self.tasks = set(tasks)
        self.mode = mode
        self.keys = keys

    def _hit(self, request: LlmRequest) -> bool:
        return request.task_tag in self.tasks and (self.keys is None or request.key in self.keys)

    def complete(self, request: LlmRequest) -> tuple[str, LlmUsage]:
        if self._hit(request):
            if self.mode == "transport":
                raise ProviderUnavailable(f"injected transport failure for {request.task_tag}")
            raw = "<<not json>>"
            return raw, mock_usage(request.prompt, raw)
        return self.inner.complete(request)


class CountingProvider(LLMProvider):
    """Pass-through wrapper recording each call's usage for accounting checks."""

    kind = "counting"

    def __init__(self, inner: LLMProvider):
        super().__init__()
        self.inner = inner
        self.records: list[tuple[str, str, LlmUsage]] = []
        self._rec_lock = threading.Lock()

    def complete(self, request: LlmRequest) -> tuple[str, LlmUsage]:
        raw, usage = self.inner.complete(request)
        with self._rec_lock:
            self.records.append((request.task_tag, request.key, usage))
        return raw, usage

    def by_task(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for tag, _, _ in self.records:
            out[tag] = out.get(tag, 0) + 1
        return out


class RemoteProvider(LLMProvider):
    """Chat-completions endpoint with JSON-object responses."""

    kind = "remote"

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: Optional[str] = None,
        api_key_env: str = "HIERMEM_API_KEY",
        timeout: float = 60.0,
        retries: int = 2,
        seed: Optional[int] = None,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        super().__init__()
        self.model = model
        self.retries = retries
        self.seed = seed
        key = api_key if api_key is not None else os.environ.get(api_key_env, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport)

    def complete(self, request: LlmRequest) -> tuple[str, LlmUsage]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": "Reply with a single JSON object and nothing else."},
                {"role": "user", "content": request.prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "response_format": {"type": "json_object"},
        }
        if self.seed is not None:
            body["seed"] = self.seed
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.post("/chat/completions", json=body)
                if resp.status_code >= 500 or resp.status_code == 429:
                    last = ProviderUnavailable(f"provider returned HTTP {resp.status_code}")
                    continue
            except httpx.TransportError as exc:
                last = exc
                continue
            if resp.status_code >= 400:
                raise ProviderUnavailable(f"provider rejected request: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                payload = resp.json()
                raw = payload["choices"][0]["message"]["content"] or ""
                u = payload.get("usage") or {}
                usage = LlmUsage(int(u.get("prompt_tokens", 0)), int(u.get("completion_tokens", 0)))
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise ProviderParseError(f"unexpected provider envelope: {exc}", raw=resp.text) from exc
            return raw, usage
        raise ProviderUnavailable(f"provider unreachable after {self.retries + 1} attempts: {last}")


def call_with_fallback(provider: LLMProvider, request: LlmRequest, fallback: Callable[[Exception], Any]) -> Any:
    """Run ``llm_call``; on provider-side failure hand the error to ``fallback``.

    UnknownScriptKey is deliberately not caught: it marks a broken test fixture.
    """
    try:
        return provider.llm_call(request).data
    except (ProviderParseError, ProviderUnavailable) as exc:
        return fallback(exc)
