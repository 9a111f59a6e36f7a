"""Engine configuration.

Loaded from YAML; every section is optional and unknown keys are rejected.
Example::

    storage:
      path: ./memstore
    provider:
      kind: remote            # scripted | heuristic | remote
      base_url: https://api.openai.com/v1
      model: gpt-4o-mini
      api_key_env: HIERMEM_API_KEY
    embedding:
      kind: hashing           # hashing | remote
      dim: 768
    retrieval:
      k: 10
      strategy: hybrid
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Optional

import yaml

from .core import ValidationError
from .providers.llm import DEFAULT_BUDGETS

DEFAULT_K = 10
JUDGE_TEMPERATURE = 0.0


@dataclass
class StorageConfig:
    path: Optional[str] = None
    snapshot_every: int = 256


@dataclass
class ProviderConfig:
    kind: str = "heuristic"
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o-mini"
    api_key_env: str = "HIERMEM_API_KEY"
    script_path: Optional[str] = None
    timeout: float = 60.0
    retries: int = 2
    temperature: float = JUDGE_TEMPERATURE
    budgets: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_BUDGETS))


@dataclass
class EmbeddingConfig:
    kind: str = "hashing"
    dim: int = 768
    base_url: str = "https://api.openai.com/v1"
    model: str = "text-embedding-3-small"
    api_key_env: str = "HIERMEM_API_KEY"


@dataclass
class ConstructionConfig:
    dedup_threshold: float = 0.95
    fallback_window: int = 10
    align_notes: bool = True
    align_episodes: bool = False


@dataclass
class RetrievalConfig:
    k: int = DEFAULT_K
    strategy: str = "hybrid"
    snippet_tokens: int = 300
    episode_vector_weight: float = 0.7
    episode_lexical_weight: float = 0.3


@dataclass
class EvolutionConfig:
    mode: str = "sync"  # sync | deferred | off
    match_k: int = 5
    match_floor: float = 0.3


@dataclass
class EvalConfig:
    exclude_categories: list[str] = field(default_factory=lambda: ["adversarial"])
    k_grid: list[int] = field(default_factory=lambda: [5, 10, 15, 20, 25])
    trials: int = 1
    parallel: int = 1


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    bearer_token: Optional[str] = None


@dataclass
class Config:
    storage: StorageConfig = field(default_factory=StorageConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    construction: ConstructionConfig = field(default_factory=ConstructionConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    # fixed seed + fixed clock make ids and timestamps reproducible
    seed: Optional[int] = None
    clock: Optional[str] = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        self.retrieval.strategy = self.retrieval.strategy.replace("-", "_")
        if self.provider.kind not in ("scripted", "heuristic", "remote"):
            raise ValidationError(f"provider.kind must be scripted|heuristic|remote, got {self.provider.kind!r}")
        if self.provider.kind == "scripted" and not self.provider.script_path:
            raise ValidationError("provider.kind=scripted needs provider.script_path")
        if self.provider.temperature != 0.0:
            raise ValidationError("provider.temperature is fixed at 0.0")
        if self.embedding.kind not in ("hashing", "remote"):
            raise ValidationError(f"embedding.kind must be hashing|remote, got {self.embedding.kind!r}")
        if self.embedding.dim < 2:
            raise ValidationError("embedding.dim must be >= 2")
        if self.retrieval.k < 1:
            raise ValidationError("retrieval.k must be >= 1")
        if self.retrieval.strategy not in ("hybrid", "best_effort"):
            raise ValidationError("retrieval.strategy must be hybrid|best_effort")
        if self.evolution.mode not in ("sync", "deferred", "off"):
            raise ValidationError("evolution.mode must be sync|deferred|off")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Config:
        return _build(cls, data or {}, "")

    @classmethod
    def from_file(cls, path: str | Path) -> Config:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        cfg = cls.from_dict(data)
        base = Path(path).resolve().parent
        # relative paths in a config file are relative to that file
        for section, attr in (("storage", "path"), ("provider", "script_path")):
            sub = getattr(cfg, section)
            val = getattr(sub, attr)
            if val and not Path(val).is_absolute():
                setattr(sub, attr, str(base / val))
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return _dump(self)


def _build(cls, data: dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ValidationError(f"config section {where or '<root>'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValidationError(f"unknown config keys in {where or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value or {}, f"{where}{name}.")
        elif name == "budgets":
            merged = dict(DEFAULT_BUDGETS)
            merged.update(value or {})
            kwargs[name] = merged
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _dump(obj) -> Any:
    if is_dataclass(obj):
        return {f.name: _dump(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_dump(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _dump(v) for k, v in obj.items()}
    return obj
