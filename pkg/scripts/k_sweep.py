#!/usr/bin/env python3
"""Sweep top-k over both retrieval strategies and print one table.

Defaults to the bundled scripted fixture, which runs offline in well under a
second. Pass --config/--questions/--turns to sweep a real dataset instead.

    python3 scripts/k_sweep.py
    python3 scripts/k_sweep.py --config remote.yaml --questions data/questions.jsonl --turns data/turns.jsonl
"""

from __future__ import annotations

import argparse
import json
import logging

from hiermem.cli import ingest_file
from hiermem.config import Config
from hiermem.engine import MemoryEngine
from hiermem.eval import format_table, run_eval
from hiermem.fixtures import QUESTIONS, fixture_engine
from hiermem.ingest import read_questions


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="YAML config (default: the bundled fixture)")
    ap.add_argument("--questions", default=str(QUESTIONS))
    ap.add_argument("--turns", help="turn file to build first (user = conversation id)")
    ap.add_argument("--k", type=int, nargs="+", help="k values (default eval.k_grid)")
    ap.add_argument("--json", action="store_true", help="print the reports as JSON instead of a table")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    questions = read_questions(args.questions)
    if args.config:
        engine = MemoryEngine(Config.from_file(args.config))
        if args.turns:
            users = sorted({q.conversation_id for q in questions})
            if len(users) != 1:
                raise SystemExit("--turns with several conversations: build them with `hiermem eval --turns` first")
            ingest_file(engine, args.turns, users[0])
    else:
        engine = fixture_engine()
    # reconsolidation would let earlier k values improve later ones
    engine.config.evolution.mode = "off"
    ks = args.k or engine.config.eval.k_grid
    reports = [run_eval(engine, questions, strategy, k)[1] for strategy in ("hybrid", "best_effort") for k in ks]
    engine.close()
    print(json.dumps(reports, indent=2) if args.json else format_table(reports))


if __name__ == "__main__":
    main()
