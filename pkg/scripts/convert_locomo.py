#!/usr/bin/env python3
"""Convert a LoCoMo JSON file into a turn file and a question file.

    python3 scripts/convert_locomo.py locomo10.json --out data/
    hiermem --store mem eval data/questions.jsonl --turns data/turns.jsonl
"""

from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from hiermem.ingest import convert_locomo, write_jsonl

logger = logging.getLogger("convert_locomo")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("locomo", help="LoCoMo JSON (a list of samples)")
    ap.add_argument("--out", default="data", help="output directory")
    ap.add_argument("--limit", type=int, help="only the first N conversations")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    samples = json.loads(Path(args.locomo).read_text(encoding="utf-8"))
    if args.limit:
        samples = samples[: args.limit]
    turns, questions = convert_locomo(samples)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "turns.jsonl", (rec for recs in turns.values() for rec in recs))
    write_jsonl(out / "questions.jsonl", (q.to_dict() for q in questions))
    n_turns = sum(len(v) for v in turns.values())
    logger.info("%d conversations, %d turns, %d questions -> %s", len(turns), n_turns, len(questions), out)


if __name__ == "__main__":
    main()
