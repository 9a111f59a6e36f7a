from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from hiermem.core import DialogueTurn, Episode, FixedClock, IdFactory, MemoryOp
from hiermem.providers import HashingEmbedder, ScriptedProvider

T0 = datetime(2023, 5, 8, 13, 56, tzinfo=timezone.utc)


@pytest.fixture
def clock():
    return FixedClock(T0)


@pytest.fixture
def ids(clock):
    return IdFactory(clock, seed=0)


@pytest.fixture(scope="session")
def embedder():
    return HashingEmbedder(768)


def make_turns(texts, session_id="s1", start=0, ts=T0, speakers=("A", "B")):
    return [
        DialogueTurn(start + i, speakers[i % len(speakers)], text, session_id, ts + timedelta(minutes=i))
        for i, text in enumerate(texts)
    ]


def make_episode(ids, embedder, user="u1", session="s1", texts=("hello there",), start=0, topic="topic"):
    turns = make_turns(list(texts), session, start)
    return Episode(
        episode_id=ids.new_id("episode"),
        user_id=user,
        session_id=session,
        topic=topic,
        topic_summary=f"summary of {topic}",
        turns=turns,
        time_span=(turns[0].timestamp, turns[-1].timestamp),
        boundary_reason="session_start",
        embedding=tuple(embedder.embed(" ".join(texts))),
    )


def add_op(ids, clock, content, user="u1", category="fact", episodes=("ep_x",), note_id=None):
    return MemoryOp(
        op_id=ids.new_id("op"),
        user_id=user,
        kind="ADD",
        target_note_ids=(note_id or ids.new_id("note"),),
        new_content=content,
        category=category,
        supporting_episode_ids=tuple(episodes),
        applied_at=clock(),
    )


@pytest.fixture
def scripted():
    return ScriptedProvider()
