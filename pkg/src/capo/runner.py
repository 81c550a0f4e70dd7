"""End-to-end optimization runs, their serialized records, holdout scoring, reports.

run() wires the pieces together: initialize a population, then repeat
crossover -> mutate -> racing survival selection until the input-token budget,
the step limit, or (optionally) convergence stops the loop. The budget is
checked at step boundaries only; a step that starts may finish and overshoot.

A RunRecord serializes to canonical JSONL (sorted keys, compact separators) so
identical configurations replay to byte-identical records. Wall-clock timing
is logged, never recorded.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from math import fsum, inf
from pathlib import Path
from typing import Sequence

from .core import (
    CapoConfig,
    ConfigError,
    DatasetSplits,
    FewShotExample,
    Instruction,
    LabeledInstance,
    Prompt,
    PromptIds,
    make_blocks,
    seeded_rng,
)
from .llm import BackendSpec, BudgetMeter, ChatRequest, ROLE_EVAL, complete, count_tokens
from .objective import (
    LengthNormalizer,
    assemble_eval_prompt,
    extract_answer,
    render_prompt_text,
    score,
)
from .operators import crossover, init_population, mutate
from .racing import EvalLedger, do_racing

log = logging.getLogger(__name__)

RECORD_SCHEMA = 1
RECORD_FILENAME = "record.jsonl"

TERMINATION_BUDGET = "budget_exhausted"
TERMINATION_MAX_STEPS = "max_steps"
TERMINATION_CONVERGED = "converged"


@dataclass
class PromptState:
    """A prompt plus its ledger standing at the moment a step entry was written."""

    id: int
    instruction: str
    shots: list[dict]
    blocks_evaluated: int
    mean_penalized: float | None
    mean_raw: float | None
    token_length: int

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "instruction": self.instruction,
            "shots": self.shots,
            "blocks_evaluated": self.blocks_evaluated,
            "mean_penalized": self.mean_penalized,
            "mean_raw": self.mean_raw,
            "token_length": self.token_length,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PromptState":
        return cls(**data)

    def to_prompt(self) -> Prompt:
        shots = tuple(
            FewShotExample(input=s["input"], output=s["output"], answer=s["answer"])
            for s in self.shots
        )
        return Prompt(id=self.id, instruction=Instruction(self.instruction), shots=shots)


@dataclass
class StepEntry:
    """One loop iteration: surviving population, eliminations, meter totals so far."""

    step: int
    population: list[PromptState]
    eliminated: list[int]
    spent_eval: int
    spent_meta: int

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "population": [p.to_dict() for p in self.population],
            "eliminated": self.eliminated,
            "spent_eval": self.spent_eval,
            "spent_meta": self.spent_meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StepEntry":
        return cls(
            step=data["step"],
            population=[PromptState.from_dict(p) for p in data["population"]],
            eliminated=list(data["eliminated"]),
            spent_eval=data["spent_eval"],
            spent_meta=data["spent_meta"],
        )


@dataclass
class RunRecord:
    """Full audit trail of a run; serializes to canonical JSONL."""

    config: dict
    steps: list[StepEntry] = field(default_factory=list)
    final_population: list[PromptState] = field(default_factory=list)
    termination: str = TERMINATION_BUDGET

    def to_jsonl(self) -> str:
        def dump(obj: dict) -> str:
            return json.dumps(obj, sort_keys=True, separators=(",", ":"))

        lines = [dump({"schema": RECORD_SCHEMA, "config": self.config})]
        lines.extend(dump(entry.to_dict()) for entry in self.steps)
        lines.append(dump({
            "final_population": [p.to_dict() for p in self.final_population],
            "termination": self.termination,
        }))
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        if path.is_dir() or path.suffix == "":
            path.mkdir(parents=True, exist_ok=True)
            path = path / RECORD_FILENAME
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path

    @classmethod
    def from_jsonl(cls, text: str) -> "RunRecord":
        lines = [line for line in text.splitlines() if line.strip()]
        if len(lines) < 2:
            raise ValueError("record must have a header and a final line")
        header = json.loads(lines[0])
        if header.get("schema") != RECORD_SCHEMA:
            raise ValueError(f"unsupported record schema {header.get('schema')!r}")
        footer = json.loads(lines[-1])
        steps = [StepEntry.from_dict(json.loads(line)) for line in lines[1:-1]]
        return cls(
            config=header["config"],
            steps=steps,
            final_population=[PromptState.from_dict(p) for p in footer["final_population"]],
            termination=footer["termination"],
        )

    @classmethod
    def read(cls, path: str | Path) -> "RunRecord":
        path = Path(path)
        if path.is_dir():
            path = path / RECORD_FILENAME
        return cls.from_jsonl(path.read_text(encoding="utf-8"))


def _prompt_state(prompt: Prompt, ledger: EvalLedger, tokenizer: str) -> PromptState:
    return PromptState(
        id=prompt.id,
        instruction=prompt.instruction.text,
        shots=[{"input": s.input, "output": s.output, "answer": s.answer}
               for s in prompt.shots],
        blocks_evaluated=ledger.blocks_evaluated(prompt.id),
        mean_penalized=ledger.mean_penalized(prompt.id),
        mean_raw=ledger.mean_raw(prompt.id),
        token_length=count_tokens(render_prompt_text(prompt), tokenizer),
    )


def _step_entry(step: int, population: Sequence[Prompt], eliminated: Sequence[int],
                ledger: EvalLedger, meter: BudgetMeter, tokenizer: str) -> StepEntry:
    return StepEntry(
        step=step,
        population=[_prompt_state(p, ledger, tokenizer) for p in population],
        eliminated=list(eliminated),
        spent_eval=meter.spent_eval,
        spent_meta=meter.spent_meta,
    )


def run(cfg: CapoConfig, splits: DatasetSplits, instruction_texts: Sequence[str],
        eval_backend: BackendSpec, meta_backend: BackendSpec, *,
        meter: BudgetMeter | None = None, detect_convergence: bool = False,
        max_workers: int = 1) -> RunRecord:
    """Optimize prompts under the configured input-token budget; return the record.

    A zero budget yields a zero-step record with an empty final population.
    Otherwise initialization always completes and the final population holds
    exactly cfg.mu prompts. An injected meter (for request-log inspection)
    must carry the configured cap.
    """
    cfg.validate()
    splits.validate()
    if len(instruction_texts) != cfg.mu:
        raise ConfigError(
            f"need exactly mu={cfg.mu} initial instructions, got {len(instruction_texts)}"
        )
    if cfg.block_size * cfg.j_max > len(splits.dev):
        raise ConfigError(
            f"dev split too small: block_size*j_max={cfg.block_size * cfg.j_max} "
            f"> {len(splits.dev)} instances"
        )
    if cfg.k_max > len(splits.few_shot):
        raise ConfigError(
            f"few-shot pool has {len(splits.few_shot)} instances, need k_max={cfg.k_max}"
        )
    if meter is None:
        meter = BudgetMeter(cap=cfg.token_budget)
    elif meter.cap != cfg.token_budget:
        raise ConfigError("injected meter cap must equal cfg.token_budget")

    started = time.perf_counter()
    streams = seeded_rng(cfg.seed)
    ids = PromptIds()
    blocks = make_blocks(splits.dev, cfg.block_size)
    ledger = EvalLedger()
    tokenizer = eval_backend.tokenizer
    steps: list[StepEntry] = []
    population: list[Prompt] = []
    termination = TERMINATION_BUDGET

    if not meter.is_exhausted():
        population = init_population(instruction_texts, splits.few_shot, cfg,
                                     eval_backend, meter, streams, ids)
        normalizer = LengthNormalizer.from_initial_population(population, tokenizer)
        steps.append(_step_entry(0, population, [], ledger, meter, tokenizer))
        block_rng = streams.stream("block_shuffle")
        step = 0
        while True:
            if meter.is_exhausted():
                termination = TERMINATION_BUDGET
                break
            if cfg.max_steps is not None and step >= cfg.max_steps:
                termination = TERMINATION_MAX_STEPS
                break
            step += 1
            prev_ids = sorted(p.id for p in population)
            offspring = crossover(population, cfg, meta_backend, meter, streams, ids)
            offspring = mutate(offspring, splits.few_shot, cfg, eval_backend,
                               meta_backend, meter, streams, ids)
            candidates = list(population) + offspring
            population = do_racing(candidates, blocks, cfg, ledger, block_rng,
                                   backend=eval_backend, meter=meter,
                                   normalizer=normalizer, max_workers=max_workers)
            survivor_ids = {p.id for p in population}
            eliminated = [p.id for p in candidates if p.id not in survivor_ids]
            steps.append(_step_entry(step, population, eliminated, ledger, meter, tokenizer))
            if detect_convergence and sorted(survivor_ids) == prev_ids:
                termination = TERMINATION_CONVERGED
                break
    else:
        log.info("token budget already exhausted at start; nothing to do")

    record = RunRecord(
        config=cfg.to_dict(),
        steps=steps,
        final_population=[_prompt_state(p, ledger, tokenizer) for p in population],
        termination=termination,
    )
    log.info("run finished: %d steps, termination=%s, tokens eval=%d meta=%d, %.2fs",
             len(steps) - 1 if steps else 0, termination, meter.spent_eval,
             meter.spent_meta, time.perf_counter() - started)
    return record


def _best_state(states: Sequence[PromptState]) -> PromptState:
    def key(state: PromptState):
        mean = state.mean_penalized if state.mean_penalized is not None else -inf
        return (-mean, state.token_length, state.id)

    return min(states, key=key)


def select_best(record: RunRecord) -> Prompt:
    """Highest mean penalized score in the final population; ties prefer shorter, then lower id."""
    if not record.final_population:
        raise ValueError("record has an empty final population")
    return _best_state(record.final_population).to_prompt()


def evaluate_holdout(prompt: Prompt, instances: Sequence[LabeledInstance],
                     backend: BackendSpec, scorer: str, *, temperature: float = 0.0,
                     max_output_tokens: int = 2048, meter: BudgetMeter | None = None,
                     max_workers: int = 1) -> float:
    """Mean raw score of one prompt on held-out instances; uncapped, tokens still metered."""
    if not instances:
        raise ValueError("holdout requires at least one instance")
    if meter is None:
        meter = BudgetMeter(cap=None)

    def score_instance(instance: LabeledInstance) -> float:
        request = ChatRequest(user=assemble_eval_prompt(prompt, instance.input),
                              max_output_tokens=max_output_tokens, temperature=temperature)
        response = complete(backend, request, meter, ROLE_EVAL)
        return score(instance.target, extract_answer(response.text), scorer)

    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            raw = list(pool.map(score_instance, instances))
    else:
        raw = [score_instance(i) for i in instances]
    return fsum(raw) / len(raw)


def report(record: RunRecord, out_dir: str | Path, *, plots: bool = False) -> dict[str, Path]:
    """Write summary CSVs (and optional plots) for a run; returns the artifact paths.

    steps.csv has one row per evolution step (token totals, population mean and
    max penalized score); prompts.csv has one row per distinct prompt with its
    token length and latest scores.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts: dict[str, Path] = {}

    steps_path = out / "steps.csv"
    with steps_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "spent_eval", "spent_meta", "spent_total",
                         "score_mean", "score_max"])
        for entry in record.steps:
            if entry.step == 0:
                continue
            means = [p.mean_penalized for p in entry.population
                     if p.mean_penalized is not None]
            writer.writerow([
                entry.step, entry.spent_eval, entry.spent_meta,
                entry.spent_eval + entry.spent_meta,
                fsum(means) / len(means) if means else "",
                max(means) if means else "",
            ])
    artifacts["steps"] = steps_path

    latest: dict[int, PromptState] = {}
    for entry in record.steps:
        for state in entry.population:
            latest[state.id] = state
    for state in record.final_population:
        latest[state.id] = state
    prompts_path = out / "prompts.csv"
    with prompts_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prompt_id", "token_length", "blocks_evaluated",
                         "mean_penalized", "mean_raw"])
        for pid in sorted(latest):
            state = latest[pid]
            writer.writerow([
                state.id, state.token_length, state.blocks_evaluated,
                state.mean_penalized if state.mean_penalized is not None else "",
                state.mean_raw if state.mean_raw is not None else "",
            ])
    artifacts["prompts"] = prompts_path

    if plots:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        xs, y_mean, y_max = [], [], []
        for entry in record.steps:
            if entry.step == 0:
                continue
            means = [p.mean_penalized for p in entry.population
                     if p.mean_penalized is not None]
            if means:
                xs.append(entry.spent_eval + entry.spent_meta)
                y_mean.append(fsum(means) / len(means))
                y_max.append(max(means))
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(xs, y_mean, marker="o", label="population mean")
        ax.plot(xs, y_max, marker="s", label="population max")
        ax.set_xlabel("input tokens spent")
        ax.set_ylabel("mean penalized dev score")
        ax.legend()
        fig.tight_layout()
        score_path = out / "score_over_tokens.png"
        fig.savefig(score_path)
        plt.close(fig)
        artifacts["score_plot"] = score_path

        fig, ax = plt.subplots(figsize=(6, 4))
        scored = [s for s in latest.values() if s.mean_penalized is not None]
        ax.scatter([s.token_length for s in scored],
                   [s.mean_penalized for s in scored], alpha=0.7)
        ax.set_xlabel("prompt token length")
        ax.set_ylabel("mean penalized dev score")
        fig.tight_layout()
        length_path = out / "length_vs_score.png"
        fig.savefig(length_path)
        plt.close(fig)
        artifacts["length_plot"] = length_path

    return artifacts
