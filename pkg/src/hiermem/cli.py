"""Command-line front end.

Exit status: 0 success, 1 validation (or usage) error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import timedelta
from pathlib import Path
from typing import Any, Optional, Sequence

from .config import DEFAULT_K, Config
from .core import HierMemError, ValidationError
from .engine import MemoryEngine

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; usage errors here are validation errors
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hiermem", description="Hierarchical conversational memory engine")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--store", help="storage directory (overrides storage.path)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("ingest", help="stage turns from a line-delimited turn file")
    s.add_argument("file")
    s.add_argument("--user", help="also build every ingested session for this user")

    s = sub.add_parser("build", help="build episodes and notes for a staged session")
    s.add_argument("user")
    s.add_argument("session")

    s = sub.add_parser("query", help="retrieve evidence (and optionally an answer)")
    s.add_argument("user")
    s.add_argument("text")
    s.add_argument("--strategy", choices=["hybrid", "best-effort"], default="hybrid")
    s.add_argument("--k", type=int, default=DEFAULT_K)
    s.add_argument("--answer", action="store_true", help="also generate an answer")

    s = sub.add_parser("notes", help="list notes")
    s.add_argument("user")
    s.add_argument("--status", choices=["active", "tombstoned"])

    s = sub.add_parser("episodes", help="list episodes")
    s.add_argument("user")

    s = sub.add_parser("ops", help="print the op log")
    s.add_argument("user", nargs="?")

    s = sub.add_parser("forget", help="tombstone rarely used old notes")
    s.add_argument("--min-usage", type=int, required=True)
    s.add_argument("--min-age-days", type=float, required=True)
    s.add_argument("--user")

    s = sub.add_parser("eval", help="run the QA evaluation over a question file")
    s.add_argument("dataset", help="line-delimited {conversation_id, question, answer, category}")
    s.add_argument("--turns", help="turn file to ingest and build before evaluating (user = conversation id)")
    s.add_argument("--strategy", choices=["hybrid", "best-effort"], default="hybrid")
    s.add_argument("--k", type=int, default=DEFAULT_K)
    s.add_argument("--k-sweep", action="store_true", help="evaluate every k in eval.k_grid")
    s.add_argument("--trials", type=int, help="repetitions for mean/std (default eval.trials)")
    s.add_argument("--parallel", type=int, help="concurrent questions (default eval.parallel)")
    s.add_argument("--gpt-score", action="store_true", help="grade answers with the configured remote provider")
    s.add_argument("--out", default="eval_out", help="directory for results.jsonl, summary.json, table.txt")

    s = sub.add_parser("serve", help="run the HTTP API")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    return p


def _config(args) -> Config:
    cfg = Config.from_file(args.config) if args.config else Config()
    if args.store:
        cfg.storage.path = args.store
    if cfg.storage.path is None:
        cfg.storage.path = "memstore"
    return cfg


def _print(obj: Any) -> None:
    print(json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=True))


def ingest_file(engine: MemoryEngine, path: str, user: Optional[str] = None) -> dict[str, Any]:
    from .ingest import read_turns

    sessions = read_turns(path)
    out: dict[str, Any] = {"sessions": {}}
    for sid, turns in sessions.items():
        out["sessions"][sid] = {"turns": len(turns), "new": engine.ingest(turns)}
        if user is not None:
            out["sessions"][sid]["build"] = engine.build(user, sid).to_dict()
    return out


def _eval(engine: MemoryEngine, args) -> int:
    from .eval import format_table, run_eval, summarize_trials, write_results
    from .ingest import read_questions, read_turns

    questions = read_questions(args.dataset)
    if args.turns:
        sessions = read_turns(args.turns)
        owner = {q.conversation_id for q in questions}
        for sid, turns in sessions.items():
            engine.ingest(turns)
            # sessions are named "<conversation_id>-s<n>"
            user = max((c for c in owner if sid == c or sid.startswith(c + "-")), key=len, default=None)
            if user is None:
                logger.warning("session %s matches no conversation id; not built", sid)
                continue
            if not engine.episodes.has_session(user, sid):
                engine.build(user, sid)
    judge = None
    if args.gpt_score:
        if engine.config.provider.kind != "remote":
            raise ValidationError("--gpt-score needs provider.kind=remote")
        judge = engine.provider
    trials = args.trials or engine.config.eval.trials
    parallel = args.parallel or engine.config.eval.parallel
    ks = engine.config.eval.k_grid if args.k_sweep else [args.k]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports, summary = [], {}
    for k in ks:
        trial_reports = []
        for t in range(trials):
            if hasattr(engine.provider, "seed") and engine.config.seed is not None:
                engine.provider.seed = engine.config.seed + t
            records, report = run_eval(engine, questions, args.strategy, k, judge, parallel)
            trial_reports.append(report)
            name = f"results_k{k}_t{t}.jsonl" if (len(ks) > 1 or trials > 1) else "results.jsonl"
            write_results(out / name, records)
        reports.append(trial_reports[0])
        summary[f"k={k}"] = {"report": trial_reports[0], "trials": summarize_trials(trial_reports)}
    table = format_table(reports)
    (out / "table.txt").write_text(table + "\n", encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(table)
    for k in ks:
        tr = summary[f"k={k}"]["trials"]
        if tr["trials"] > 1:
            print(f"k={k} over {tr['trials']} trials: F1 {100 * tr['f1']['mean']:.2f} ± {100 * tr['f1']['std']:.2f}")
    return 0


def run(args) -> int:
    cfg = _config(args)
    with MemoryEngine(cfg) as engine:
        if args.cmd == "ingest":
            _print(ingest_file(engine, args.file, args.user))
        elif args.cmd == "build":
            _print(engine.build(args.user, args.session).to_dict())
        elif args.cmd == "query":
            _print(engine.query(args.user, args.text, args.strategy, args.k, with_answer=args.answer).to_dict())
        elif args.cmd == "notes":
            _print([n.to_dict() for n in engine.notes.list(args.user, args.status)])
        elif args.cmd == "episodes":
            _print([e.to_dict() for e in engine.episodes.list(args.user)])
        elif args.cmd == "ops":
            _print([o.to_dict() for o in engine.notes.ops(args.user)])
        elif args.cmd == "forget":
            _print({"tombstoned": engine.forget(args.min_usage, timedelta(days=args.min_age_days), args.user)})
        elif args.cmd == "eval":
            return _eval(engine, args)
        elif args.cmd == "serve":
            from .service import serve

            serve(engine, args.host, args.port)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help and usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.cmd is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return run(args)
    except HierMemError as exc:
        # caller mistakes (bad input, conflicts, immutability) -> 1; engine faults -> 2
        print(f"error ({exc.code}): {exc}", file=sys.stderr)
        return 2 if exc.code in ("internal", "provider_unavailable") else 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
