"""Hierarchical long-term conversational memory: raw episodes plus evolving notes."""

from .config import Config
from .core import DialogueTurn, Episode, MemoryOp, Note
from .engine import MemoryEngine, QueryResult

__all__ = ["Config", "DialogueTurn", "Episode", "MemoryEngine", "MemoryOp", "Note", "QueryResult"]
__version__ = "0.1.0"
