from .alignment import normalize_temporal, resolve_coreferences, rewrite_first_person
from .extraction import CandidateKnowledge, extract_stage1, extract_stage2, extract_stage3_normalize
from .pipeline import build_memory
from .segmentation import SegmentationResult, fuse_boundaries, segment, segment_session

__all__ = [
    "CandidateKnowledge",
    "SegmentationResult",
    "build_memory",
    "extract_stage1",
    "extract_stage2",
    "extract_stage3_normalize",
    "fuse_boundaries",
    "normalize_temporal",
    "resolve_coreferences",
    "rewrite_first_person",
    "segment",
    "segment_session",
]
