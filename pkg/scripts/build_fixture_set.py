"""Regenerate the bundled 12-pair pipeline fixture under tests/fixtures/pipeline.

The fixture holds a 40-example training set, a small validation set, a mixed
Standard/Adversarial eval set, three annotators whose per-criterion averages
are whole numbers, mock judge rules that answer with those averages, and
fixture AMR graphs for every text. Output is deterministic.
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

import yaml

from dialeval.data import fill_random_negatives, write_records
from dialeval.harness import build_eval_sets, write_eval_sets
from dialeval.judge.prompts import CRITERIA, format_context
from dialeval.training import make_adversarial_benchmark

ROOT = Path(__file__).resolve().parents[1]
ANNOTATORS = ("ann1", "ann2", "ann3")

CONFIG = {
    "model": {"d_model": 16, "n_layers": 1, "n_heads": 2, "dropout": 0.0, "max_len": 64},
    "train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.005, "seed": 0},
    "data": {"train": "train.jsonl", "validation": "validation.jsonl", "format": "dailydialogpp",
             "eval_sets": ["eval_set.jsonl"], "annotations": "annotations.jsonl"},
    "amr": {"backend": "fixture", "fixtures": ["amr_fixtures.json"]},
    "judge": {"client": "mock", "mock_rules": "mock_rules.json", "backoff": 0.0,
              "rate_per_second": 1000.0, "max_in_flight": 4},
}


def gold_scores(rng: random.Random, category: str) -> dict[str, int]:
    lo, hi = (3, 5) if category == "positive" else (1, 3)
    return {c.value: rng.randint(lo, hi) for c in CRITERIA}


def spread(gold: int, turn: int) -> tuple[int, int, int]:
    """Three integer ratings averaging exactly ``gold``; rotated so annotators disagree."""
    if gold in (1, 5):
        return gold, gold, gold
    base = [(gold, gold, gold), (gold - 1, gold, gold + 1), (gold + 1, gold - 1, gold)][turn % 3]
    return base


def build(out: Path, seed: int = 7) -> None:
    out.mkdir(parents=True, exist_ok=True)
    bench = make_adversarial_benchmark(100, seed=seed)
    train, val, pool = bench.train[:20], bench.validation, bench.test
    for rec in train + val:
        rec.random_negative_responses = []
    pool = fill_random_negatives(pool, k=1, seed=seed)

    graphs = {}
    for rec in train + val + pool:
        graphs.update(rec.graphs)
    for rec in train + val + pool:
        rec.graphs = {}
    write_records(train, out / "train.jsonl")
    write_records(val, out / "validation.jsonl")
    (out / "amr_fixtures.json").write_text(json.dumps(graphs, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    standard, adversarial = build_eval_sets(pool, 6, seed=seed, dataset="fixture")
    write_eval_sets([standard, adversarial], out / "eval_set.jsonl")

    rng = random.Random(seed)
    rules, rows = [], []
    pairs = {p.pair_id: p for s in (standard, adversarial) for p in s.pairs}
    for turn, (pid, pair) in enumerate(sorted(pairs.items())):
        gold = gold_scores(rng, pair.category)
        for c in CRITERIA:
            for ann, score in zip(ANNOTATORS, spread(gold[c.value], turn)):
                rows.append({"pair_id": pid, "annotator": ann, "criterion": c.value, "score": score})
            rules.append({"match": [f"Conversation Context: {format_context(pair.context)}\n",
                                    f"Response: {pair.response}\n", f"\n{c.value}:\n"],
                          "completions": [f"{c.value}: {gold[c.value]}"]})
    with open(out / "annotations.jsonl", "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")
    (out / "mock_rules.json").write_text(json.dumps({"rules": rules}, indent=1) + "\n", encoding="utf-8")
    (out / "config.yaml").write_text(yaml.safe_dump(CONFIG, sort_keys=False), encoding="utf-8")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=ROOT / "tests" / "fixtures" / "pipeline")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    build(args.out, args.seed)
    print(args.out)
