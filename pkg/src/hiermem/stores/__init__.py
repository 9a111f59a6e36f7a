from .episodes import EpisodeStore, lexical_overlap, lexical_terms
from .notes import NoteStore
from .staging import TurnStaging

__all__ = ["EpisodeStore", "NoteStore", "TurnStaging", "lexical_overlap", "lexical_terms"]
