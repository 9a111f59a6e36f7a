#!/usr/bin/env python3
"""Run the bundled fixture end to end and print (or freeze) the golden report.

    python3 scripts/run_golden.py                # print
    python3 scripts/run_golden.py --freeze       # rewrite tests/golden/golden_report.json
"""

from __future__ import annotations

import argparse
import json
import tempfile
import time
from pathlib import Path

from hiermem.fixtures import golden_report

GOLDEN = Path(__file__).resolve().parent.parent / "tests" / "golden" / "golden_report.json"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--freeze", action="store_true", help="overwrite the frozen golden report")
    args = ap.parse_args()
    started = time.perf_counter()
    with tempfile.TemporaryDirectory() as tmp:
        report = golden_report(Path(tmp) / "store")
    elapsed = time.perf_counter() - started
    text = json.dumps(report, indent=1, sort_keys=True, ensure_ascii=False) + "\n"
    if args.freeze:
        GOLDEN.parent.mkdir(parents=True, exist_ok=True)
        GOLDEN.write_text(text, encoding="utf-8")
        print(f"wrote {GOLDEN}")
    else:
        print(text, end="")
    print(f"overall F1 {report['aggregate']['overall']['f1']:.4f}, {len(report['ops'])} ops, {elapsed:.2f}s")


if __name__ == "__main__":
    main()
