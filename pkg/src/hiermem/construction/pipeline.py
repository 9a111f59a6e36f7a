"""Session -> episodes + notes."""

from __future__ import annotations

import logging
from dataclasses import replace
from datetime import datetime
from typing import Callable, Sequence

from ..config import ConstructionConfig
from ..core import BuildReport, DialogueTurn, DuplicateSessionError, IdFactory, MemoryOp, ValidationError, check_contiguous
from ..providers.embedding import Embedder
from ..providers.llm import LLMProvider
from ..stores import EpisodeStore, NoteStore
from .alignment import normalize_temporal
from .extraction import extract_stage1, extract_stage2, extract_stage3_normalize
from .segmentation import segment_session

logger = logging.getLogger(__name__)


def validate_session(turns: Sequence[DialogueTurn]) -> None:
    if not turns:
        raise ValidationError("session has no turns")
    sessions = {t.session_id for t in turns}
    if len(sessions) != 1:
        raise ValidationError(f"turns span several sessions: {sorted(sessions)}")
    check_contiguous(turns)


def build_memory(
    session: Sequence[DialogueTurn],
    user_id: str,
    episodes: EpisodeStore,
    notes: NoteStore,
    provider: LLMProvider,
    embedder: Embedder,
    ids: IdFactory,
    clock: Callable[[], datetime],
    config: ConstructionConfig | None = None,
) -> BuildReport:
    """Segment a session, store its episodes, then extract and ADD its notes.

    Episodes are stored as the raw dialogue; alignment is applied to notes
    (and to episode text only when ``align_episodes`` is set). Each episode's
    notes are committed right after it, so an interrupted build leaves a
    consistent prefix behind.
    """
    config = config or ConstructionConfig()
    validate_session(session)
    session_id = session[0].session_id
    done = episodes.session_episodes(user_id, session_id)
    covered = done[-1].last_turn + 1 if done else 0
    if covered >= len(session):
        raise DuplicateSessionError(f"session {session_id} of user {user_id} is already built")
    if covered:
        logger.info("resuming %s/%s at turn %d", user_id, session_id, covered)

    eps = segment_session(session[covered:], provider, embedder, user_id, ids, clock, config.fallback_window)
    report = BuildReport(user_id=user_id, session_id=session_id)
    for ep in eps:
        stored = ep
        if config.align_episodes:
            ref = ep.time_span[0]
            stored = replace(ep, turns=tuple(replace(t, text=normalize_temporal(t.text, ref)) for t in ep.turns))
        episodes.append_episode(stored)
        report.episode_ids.append(ep.episode_id)

        stage1 = extract_stage1(ep, provider)
        stage2 = extract_stage2(ep, stage1, provider)
        new_notes = extract_stage3_normalize(
            stage1 + stage2, ep, provider, embedder, ids, clock, config.dedup_threshold, align=config.align_notes
        )
        ops = [
            MemoryOp(
                op_id=ids.new_id("op"),
                user_id=user_id,
                kind="ADD",
                target_note_ids=(n.note_id,),
                new_content=n.content,
                category=n.category,
                supporting_episode_ids=(ep.episode_id,),
                applied_at=n.created_at,
                cause="construction",
            )
            for n in new_notes
        ]
        notes.apply_ops(ops)
        report.note_ids.extend(n.note_id for n in new_notes)
        report.op_ids.extend(o.op_id for o in ops)
    logger.info(
        "built %s/%s: %d episodes, %d notes", user_id, session_id, len(report.episode_ids), len(report.note_ids)
    )
    return report
