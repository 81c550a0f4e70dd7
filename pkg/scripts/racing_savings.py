"""Measure how many eval calls statistical racing saves over full evaluation.

Runs the synthetic graded task twice per seed: a racing arm (small blocks,
early elimination) and a single-block arm that scores every candidate on the
whole dev prefix. Offspring always grade to level 0, so racing can settle each
step after one block. Prints per-seed eval-call counts and the savings.

Usage: python scripts/racing_savings.py [--seeds 0,1,2] [--steps 3] [--out savings.csv]
"""
from __future__ import annotations

import argparse
import csv
import logging
from pathlib import Path

from capo import ROLE_EVAL, BudgetMeter, CapoConfig, DatasetSplits, mock_program, run
from synthetic import (
    WRONG,
    degrading_meta_rules,
    graded_eval_rules,
    graded_instances,
    graded_instructions,
)

LEVELS = [10, 10, 10, 10, 9, 8, 7, 6, 5, 4]
ARMS = {"racing": (10, 5), "single_block": (50, 1)}  # (block_size, j_max)


def eval_calls(seed: int, block_size: int, j_max: int, steps: int) -> int:
    cfg = CapoConfig(seed=seed, mu=10, c=4, k_max=0, gamma=0.0, alpha=0.2,
                     block_size=block_size, j_max=j_max, token_budget=50_000_000,
                     max_steps=steps)
    backend = mock_program([*degrading_meta_rules(), *graded_eval_rules(), WRONG])
    splits = DatasetSplits(few_shot=(), dev=graded_instances(50))
    meter = BudgetMeter(cap=cfg.token_budget)
    run(cfg, splits, graded_instructions(LEVELS), backend, backend, meter=meter)
    return sum(1 for e in meter.entries if e.role == ROLE_EVAL)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    parser.add_argument("--steps", type=int, default=3)
    parser.add_argument("--out", help="optional CSV path for the per-seed table")
    args = parser.parse_args()
    logging.basicConfig(level=logging.WARNING)
    seeds = [int(s) for s in args.seeds.split(",")]

    rows = []
    for seed in seeds:
        counts = {arm: eval_calls(seed, b, j, args.steps)
                  for arm, (b, j) in ARMS.items()}
        saved = 1.0 - counts["racing"] / counts["single_block"]
        rows.append({"seed": seed, **counts, "savings": saved})
        print(f"seed {seed}: racing {counts['racing']} vs "
              f"single block {counts['single_block']} eval calls "
              f"({saved:.1%} saved)")

    total_racing = sum(r["racing"] for r in rows)
    total_full = sum(r["single_block"] for r in rows)
    print(f"overall savings: {1.0 - total_racing / total_full:.1%}")

    if args.out:
        path = Path(args.out)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        print(f"table written to {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
