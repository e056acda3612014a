"""Train the ablation variants on the synthetic adversarial benchmark and print held-out accuracy.

Example:
    python scripts/run_toy_ablation.py --seeds 0 1 2 --out toy_ablation.json
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import time

from dialeval.training import TOY_VARIANTS, run_toy_ablation


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0], help="data (and training) seeds")
    parser.add_argument("--variants", nargs="+", default=list(TOY_VARIANTS), choices=TOY_VARIANTS)
    parser.add_argument("--examples", type=int, default=200, help="benchmark size (examples, not records)")
    parser.add_argument("--out", default="", help="optional JSON output path")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    rows = []
    start = time.perf_counter()
    for seed in args.seeds:
        res = run_toy_ablation(seed, args.variants, args.examples)
        rows.append({"seed": seed, "accuracy": res.accuracy, "best_epoch": res.best_epoch})
        print(f"seed {seed}: " + "  ".join(f"{k}={v:.3f}" for k, v in res.accuracy.items()))
    means = {v: statistics.fmean(r["accuracy"][v] for r in rows) for v in args.variants}
    print("mean:   " + "  ".join(f"{k}={v:.3f}" for k, v in means.items()))
    print(f"elapsed {time.perf_counter() - start:.1f}s")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"runs": rows, "mean": means}, fh, indent=2, sort_keys=True)
            fh.write("\n")


if __name__ == "__main__":
    main()
