"""Run the five-stage CLI pipeline on a copy of the bundled fixture set and print the report.

Stages: preprocess-amr, train-slm, score, judge (mock client), evaluate.

Example:
    python scripts/run_fixture_pipeline.py --work /tmp/dialeval-fixture
"""

from __future__ import annotations

import argparse
import shutil
import subprocess
import sys
from pathlib import Path

FIXTURE = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "pipeline"


def stage(command: str, work: Path, *sets: str) -> Path:
    argv = [sys.executable, "-m", "dialeval.cli", command, "--config", str(work / "config.yaml"),
            "--out", str(work / "runs")]
    for s in sets:
        argv += ["--set", s]
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        sys.exit(f"{command} exited {proc.returncode}\n{proc.stderr}")
    run = Path(proc.stdout.strip())
    print(f"{command:15s} -> {run}")
    return run


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--work", required=True, help="working directory (the fixture is copied here)")
    args = parser.parse_args()
    work = Path(args.work)
    if not (work / "config.yaml").exists():
        shutil.copytree(FIXTURE, work, dirs_exist_ok=True)

    stage("preprocess-amr", work)
    ckpt = stage("train-slm", work) / "checkpoint.pt"
    scores = stage("score", work, f"checkpoint={ckpt}") / "scores.jsonl"
    judged = stage("judge", work, f"checkpoint={ckpt}", f"judge.scores={scores}") / "judgments.jsonl"
    report = stage("evaluate", work, f"eval.judgments={judged}") / "report.txt"
    print()
    print(report.read_text(encoding="utf-8"), end="")


if __name__ == "__main__":
    main()
