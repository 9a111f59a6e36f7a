from .embedding import Embedder, HashingEmbedder, RemoteEmbedder, cosine
from .heuristic import HeuristicProvider
from .llm import (
    TASK_TAGS,
    CountingProvider,
    FaultInjectingProvider,
    LLMProvider,
    LlmRequest,
    LlmResponse,
    LlmUsage,
    RemoteProvider,
    ScriptedProvider,
)

__all__ = [
    "TASK_TAGS",
    "CountingProvider",
    "Embedder",
    "FaultInjectingProvider",
    "HashingEmbedder",
    "HeuristicProvider",
    "LLMProvider",
    "LlmRequest",
    "LlmResponse",
    "LlmUsage",
    "RemoteEmbedder",
    "RemoteProvider",
    "ScriptedProvider",
    "cosine",
]
