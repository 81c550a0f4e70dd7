"""Command-line interface: run an optimization, evaluate its best prompt, report.

Datasets are JSONL files with {"input": ..., "target": ...} per line. Unless a
separate few-shot file is given, the first block_size*j_max dataset lines form
the dev split and the remainder becomes the few-shot pool. The instructions
file holds one initial instruction per line (exactly mu non-empty lines).

Backends are selected by flags, not by the config file: --mock points at a
scripted-rules JSON file; --endpoint/--model select an OpenAI-compatible HTTP
server (API key read from the CAPO_API_KEY environment variable).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core import CapoConfig, ConfigError, DatasetSplits, instances_from_jsonl
from .llm import (
    KIND_HTTP,
    BackendSpec,
    BudgetMeter,
    MockRule,
    mock_program,
)
from .runner import RunRecord, evaluate_holdout, report, run, select_best

log = logging.getLogger(__name__)


def load_mock_rules(path: str | Path) -> list[MockRule]:
    """Parse a scripted-rules file: a JSON list of {contains|regex|catch_all, response}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ConfigError("mock rules file must hold a JSON list")
    rules = []
    for i, obj in enumerate(data):
        if "response" not in obj:
            raise ConfigError(f"mock rule {i} is missing a response")
        if obj.get("catch_all"):
            rules.append(MockRule.catch_all(obj["response"]))
        elif "regex" in obj:
            rules.append(MockRule(template=obj["response"], regex=obj["regex"]))
        elif "contains" in obj:
            rules.append(MockRule(template=obj["response"], contains=obj["contains"]))
        else:
            raise ConfigError(f"mock rule {i} needs contains, regex, or catch_all")
    return rules


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mock", help="scripted-rules JSON file (deterministic backend)")
    parser.add_argument("--endpoint", help="OpenAI-compatible base URL for the eval model")
    parser.add_argument("--model", default="", help="eval model name")
    parser.add_argument("--meta-endpoint", help="base URL for the meta model "
                                                "(defaults to --endpoint)")
    parser.add_argument("--meta-model", default="", help="meta model name "
                                                         "(defaults to --model)")
    parser.add_argument("--tokenizer", choices=["backend_reported", "approx_whitespace",
                                                "approx_bytes_div4"],
                        help="token counting mode (default: whitespace for mock, "
                             "backend_reported for http)")


def _build_backends(args: argparse.Namespace) -> tuple[BackendSpec, BackendSpec]:
    if args.mock:
        tokenizer = args.tokenizer or "approx_whitespace"
        backend = mock_program(load_mock_rules(args.mock), tokenizer=tokenizer)
        return backend, backend
    if not args.endpoint:
        raise ConfigError("need either --mock or --endpoint")
    tokenizer = args.tokenizer or "backend_reported"
    eval_backend = BackendSpec(kind=KIND_HTTP, model=args.model,
                               endpoint=args.endpoint, tokenizer=tokenizer)
    meta_backend = BackendSpec(kind=KIND_HTTP, model=args.meta_model or args.model,
                               endpoint=args.meta_endpoint or args.endpoint,
                               tokenizer=tokenizer)
    return eval_backend, meta_backend


def _load_instructions(path: str | Path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip()]


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = CapoConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
    eval_backend, meta_backend = _build_backends(args)
    instances = instances_from_jsonl(
        Path(args.dataset).read_text(encoding="utf-8").splitlines())
    if args.fewshot:
        few_shot = instances_from_jsonl(
            Path(args.fewshot).read_text(encoding="utf-8").splitlines())
        dev = instances
    else:
        n_dev = cfg.block_size * cfg.j_max
        dev, few_shot = instances[:n_dev], instances[n_dev:]
    splits = DatasetSplits(few_shot=tuple(few_shot), dev=tuple(dev))
    instructions = _load_instructions(args.instructions)
    record = run(cfg, splits, instructions, eval_backend, meta_backend,
                 detect_convergence=args.detect_convergence, max_workers=args.workers)
    path = record.write(Path(args.out))
    best = select_best(record) if record.final_population else None
    print(f"record written to {path} ({len(record.steps)} entries, "
          f"termination={record.termination})")
    if best is not None:
        print(f"best prompt id={best.id} shots={len(best.shots)}")
        print(best.instruction.text)
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    record = RunRecord.read(Path(args.run))
    best = select_best(record)
    eval_backend, _ = _build_backends(args)
    instances = instances_from_jsonl(Path(args.test).read_text(encoding="utf-8").splitlines())
    meter = BudgetMeter(cap=None)
    result = evaluate_holdout(best, instances, eval_backend, record.config["scorer"],
                              temperature=record.config["eval_temperature"],
                              max_output_tokens=record.config["max_output_tokens"],
                              meter=meter, max_workers=args.workers)
    payload = {
        "prompt_id": best.id,
        "score": result,
        "instances": len(instances),
        "input_tokens": meter.spent_total,
    }
    out_path = Path(args.out) if args.out else Path(args.run) / "holdout.json"
    if out_path.is_dir():
        out_path = out_path / "holdout.json"
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    print(f"holdout score {result:.4f} on {len(instances)} instances "
          f"(prompt {best.id}); written to {out_path}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    record = RunRecord.read(Path(args.run))
    artifacts = report(record, Path(args.out), plots=args.plots)
    for name, path in artifacts.items():
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="capo",
                                     description="cost-aware evolutionary prompt optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="optimize prompts and write a run record")
    p_run.add_argument("--config", required=True, help="JSON file mirroring CapoConfig")
    p_run.add_argument("--dataset", required=True, help="JSONL dataset for dev/few-shot")
    p_run.add_argument("--instructions", required=True,
                       help="text file, one initial instruction per line")
    p_run.add_argument("--out", required=True, help="output run directory")
    p_run.add_argument("--fewshot", help="separate few-shot JSONL (dataset then = dev)")
    p_run.add_argument("--workers", type=int, default=1,
                       help="concurrent eval requests per block")
    p_run.add_argument("--detect-convergence", action="store_true",
                       help="stop when two consecutive populations are identical")
    _add_backend_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_eval = sub.add_parser("eval", help="score the best recorded prompt on a test set")
    p_eval.add_argument("--run", required=True, help="run directory or record file")
    p_eval.add_argument("--test", required=True, help="JSONL test set")
    p_eval.add_argument("--out", help="output JSON path (default: <run>/holdout.json)")
    p_eval.add_argument("--workers", type=int, default=1)
    _add_backend_flags(p_eval)
    p_eval.set_defaults(func=_cmd_eval)

    p_report = sub.add_parser("report", help="summarize a run record into CSVs and plots")
    p_report.add_argument("--run", required=True, help="run directory or record file")
    p_report.add_argument("--out", required=True, help="report output directory")
    p_report.add_argument("--plots", action="store_true", help="also write PNG plots")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
