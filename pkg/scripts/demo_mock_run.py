"""End-to-end demo on a scripted mock backend; no LLM server needed.

Optimizes prompts on the synthetic graded task where mutation can raise a
prompt's quality level, so population scores climb over steps. Writes the run
record, report CSVs (optionally plots), and a holdout score under --out.

Usage: python scripts/demo_mock_run.py --out demo_out [--seed 0] [--steps 6] [--plots]
"""
from __future__ import annotations

import argparse
import logging
from pathlib import Path

from capo import (
    CapoConfig,
    DatasetSplits,
    evaluate_holdout,
    mock_program,
    report,
    run,
    select_best,
)
from synthetic import (
    WRONG,
    graded_eval_rules,
    graded_instances,
    graded_instructions,
    improving_meta_rules,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="demo_out", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--steps", type=int, default=6)
    parser.add_argument("--plots", action="store_true", help="also write PNG plots")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    cfg = CapoConfig(seed=args.seed, mu=6, c=3, k_max=2, gamma=0.05, alpha=0.2,
                     block_size=10, j_max=3, token_budget=5_000_000,
                     max_steps=args.steps,
                     task_description="Recover the tagged target of each instance.")
    backend = mock_program([*improving_meta_rules(), *graded_eval_rules(), WRONG])
    splits = DatasetSplits(
        dev=graded_instances(cfg.block_size * cfg.j_max),
        few_shot=graded_instances(8, prefix="pool"),
        test=graded_instances(20, prefix="held"),
    )
    instructions = graded_instructions([1, 2, 3, 4, 5, 6])

    record = run(cfg, splits, instructions, backend, backend)
    out = Path(args.out)
    record.write(out / "run")
    artifacts = report(record, out / "report", plots=args.plots)

    best = select_best(record)
    holdout = evaluate_holdout(best, splits.test, backend, cfg.scorer)

    print(f"termination: {record.termination} after {len(record.steps) - 1} steps")
    for entry in record.steps[1:]:
        means = [p.mean_penalized for p in entry.population]
        print(f"  step {entry.step}: population mean {sum(means) / len(means):.3f}, "
              f"best {max(means):.3f}, tokens {entry.spent_eval + entry.spent_meta}")
    print(f"best prompt (id {best.id}, {len(best.shots)} shots): "
          f"{best.instruction.text}")
    print(f"holdout score: {holdout:.3f} on {len(splits.test)} instances")
    print("artifacts:", ", ".join(str(p) for p in artifacts.values()))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
