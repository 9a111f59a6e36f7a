from __future__ import annotations

import json
import subprocess
import sys

from hiermem.cli import main
from hiermem.fixtures import CONFIG, QUESTIONS, SESSIONS, USER


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _base(tmp_path):
    return ["--config", str(CONFIG), "--store", str(tmp_path / "store")]


def test_ingest_build_query_round_trip(tmp_path, capsys):
    base = _base(tmp_path)
    code, out, _ = _run(capsys, *base, "ingest", str(SESSIONS), "--user", USER)
    assert code == 0
    sessions = json.loads(out)["sessions"]
    assert set(sessions) == {"conv-a-s1", "conv-a-s2", "conv-a-s3"}
    assert all(s["build"]["op_ids"] for s in sessions.values())

    code, out, _ = _run(capsys, *base, "query", USER, "What did Melanie paint?", "--answer")
    res = json.loads(out)
    assert code == 0 and res["answer"] and len(res["evidence"]["note_hits"]) <= 10 and res["evidence"]["strategy"] == "hybrid"

    for cmd in (["notes", USER], ["episodes", USER], ["ops"], ["notes", USER, "--status", "tombstoned"]):
        code, out, _ = _run(capsys, *base, *cmd)
        assert code == 0 and isinstance(json.loads(out), list)

    code, out, _ = _run(capsys, *base, "forget", "--min-usage", "1", "--min-age-days", "0")
    # fixed clock: every note is zero seconds old, so none is older than 0 days
    assert code == 0 and json.loads(out)["tombstoned"] == []


def test_malformed_turn_line_reports_line_number(tmp_path, capsys):
    f = tmp_path / "bad.jsonl"
    f.write_text(SESSIONS.read_text().splitlines()[0] + "\n{broken\n")
    code, _, err = _run(capsys, *_base(tmp_path), "ingest", str(f))
    assert code == 1 and f"{f}:2:" in err


def test_validation_and_usage_errors_exit_1(tmp_path, capsys):
    base = _base(tmp_path)
    assert _run(capsys, *base, "build", USER, "nope")[0] == 1
    assert _run(capsys, *base, "query", USER, "q", "--k", "0")[0] == 1
    assert _run(capsys, *base, "query")[0] == 1
    assert _run(capsys, *base)[0] == 1


def test_bad_config_exits_1(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("retrieval:\n  nope: 1\n")
    code, _, err = _run(capsys, "--config", str(cfg), "--store", str(tmp_path / "s"), "notes", "u")
    assert code == 1 and "unknown" in err


def test_locked_store_exits_1(tmp_path, capsys):
    from hiermem.engine import MemoryEngine
    from hiermem.fixtures import fixture_config

    holder = MemoryEngine(fixture_config(tmp_path / "store"))
    try:
        code, _, err = _run(capsys, *_base(tmp_path), "notes", USER)
        assert code == 1 and "conflict" in err
    finally:
        holder.close()


def test_eval_writes_report(tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, out, _ = _run(capsys, *_base(tmp_path), "eval", str(QUESTIONS), "--turns", str(SESSIONS), "--out", str(out_dir))
    assert code == 0 and "overall.f1" in out
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["k=10"]["report"]["overall"]["n"] == 12
    assert len((out_dir / "results.jsonl").read_text().splitlines()) == 12
    assert (out_dir / "table.txt").read_text().strip() == out.strip()


def test_eval_k_sweep_and_trials(tmp_path, capsys):
    out_dir = tmp_path / "out"
    code, out, _ = _run(capsys, *_base(tmp_path), "eval", str(QUESTIONS), "--turns", str(SESSIONS),
                        "--k-sweep", "--trials", "2", "--out", str(out_dir))
    assert code == 0
    assert len(out.splitlines()) >= 6
    assert sorted(json.loads((out_dir / "summary.json").read_text())) == [f"k={k}" for k in (10, 15, 20, 25, 5)]
    assert (out_dir / "results_k25_t1.jsonl").exists()


def test_gpt_score_needs_remote_provider(tmp_path, capsys):
    code, _, err = _run(capsys, *_base(tmp_path), "eval", str(QUESTIONS), "--gpt-score", "--out", str(tmp_path / "o"))
    assert code == 1 and "remote" in err


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hiermem.cli", "--store", str(tmp_path / "s"), "notes", "nobody"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout) == []


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0 and "usage" in capsys.readouterr().out
