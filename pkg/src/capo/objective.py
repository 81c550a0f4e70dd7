"""Answer extraction, scoring, prompt rendering, and the length-penalized objective.

A prompt's quality on a block is the mean instance score minus a length
penalty gamma * relative token length, applied per instance so that block
score vectors feed directly into the paired significance tests used by racing.
"""
from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from math import fsum
from typing import Sequence

from .core import Block, FewShotExample, Prompt
from .llm import BackendSpec, BudgetMeter, ChatRequest, ROLE_EVAL, complete, count_tokens

ANSWER_OPEN = "<final_answer>"
ANSWER_CLOSE = "</final_answer>"

_ANSWER_PAIR_RE = re.compile(re.escape(ANSWER_OPEN) + r".*?" + re.escape(ANSWER_CLOSE), re.DOTALL)


def extract_last_tagged(text: str, open_tag: str, close_tag: str) -> str | None:
    """Trimmed content of the last complete open/close tag pair, or None."""
    close_at = text.rfind(close_tag)
    if close_at < 0:
        return None
    open_at = text.rfind(open_tag, 0, close_at)
    if open_at < 0:
        return None
    return text[open_at + len(open_tag) : close_at].strip()


def extract_answer(text: str) -> str | None:
    """Answer between the last complete marker pair; None when no pair exists."""
    return extract_last_tagged(text, ANSWER_OPEN, ANSWER_CLOSE)


def _parse_decimal(text: str) -> Decimal | None:
    try:
        return Decimal(text.strip().replace(",", ""))
    except InvalidOperation:
        return None


def score(target: str, prediction: str | None, scorer: str) -> float:
    """Instance score in {0, 1}; a missing prediction scores 0."""
    if prediction is None:
        return 0.0
    if scorer == "exact":
        return 1.0 if prediction == target else 0.0
    if scorer == "case_insensitive_trim":
        return 1.0 if prediction.strip().casefold() == target.strip().casefold() else 0.0
    if scorer == "numeric":
        p, t = _parse_decimal(prediction), _parse_decimal(target)
        return 1.0 if p is not None and t is not None and p == t else 0.0
    raise ValueError(f"unknown scorer {scorer!r}")


def shot_is_consistent(shot: FewShotExample, scorer: str) -> bool:
    """True when the output has exactly one marker pair that scores 1 against the answer."""
    if len(_ANSWER_PAIR_RE.findall(shot.output)) != 1:
        return False
    return score(shot.answer, extract_answer(shot.output), scorer) == 1.0


def _shot_text(shot: FewShotExample) -> str:
    return f"Input: {shot.input}\nOutput: {shot.output}"


def render_prompt_text(prompt: Prompt) -> str:
    """Instruction and shots as shown to the eval model, without an instance stub."""
    parts = [prompt.instruction.text] + [_shot_text(s) for s in prompt.shots]
    return "\n\n".join(parts)


def assemble_eval_prompt(prompt: Prompt, instance_input: str) -> str:
    """Full user message: instruction, shots, then the unanswered instance stub."""
    return f"{render_prompt_text(prompt)}\n\nInput: {instance_input}\nOutput:"


@dataclass(frozen=True)
class LengthNormalizer:
    """Fixed per-run length reference: token count of the longest initial prompt."""

    reference_tokens: int

    def __post_init__(self) -> None:
        if self.reference_tokens < 1:
            raise ValueError("reference_tokens must be >= 1")

    @classmethod
    def from_initial_population(cls, population: Sequence[Prompt],
                                tokenizer: str) -> "LengthNormalizer":
        if not population:
            raise ValueError("cannot build a length reference from an empty population")
        ref = max(count_tokens(render_prompt_text(p), tokenizer) for p in population)
        return cls(reference_tokens=max(ref, 1))


def rel_token_length(prompt: Prompt, normalizer: LengthNormalizer, tokenizer: str) -> float:
    """Prompt token count relative to the run's fixed reference length."""
    return count_tokens(render_prompt_text(prompt), tokenizer) / normalizer.reference_tokens


@dataclass(frozen=True)
class ScoreVector:
    """Penalized per-instance scores of one prompt on one block."""

    prompt_id: int
    block_index: int
    per_instance: tuple[float, ...]
    raw_mean: float

    def __post_init__(self) -> None:
        if not self.per_instance:
            raise ValueError("per_instance must be non-empty")

    @property
    def mean_penalized(self) -> float:
        return fsum(self.per_instance) / len(self.per_instance)


def evaluate_block(prompt: Prompt, block: Block, backend: BackendSpec, meter: BudgetMeter,
                   gamma: float, normalizer: LengthNormalizer, scorer: str, *,
                   temperature: float = 0.0, max_output_tokens: int = 2048,
                   instruction_as_system: bool = False,
                   max_workers: int = 1) -> ScoreVector:
    """Score one prompt on every instance of a block.

    The length penalty gamma * rel_token_length(prompt) is subtracted from each
    instance score. Instance requests may fan out to a bounded thread pool;
    results are aggregated in instance order, so concurrency never changes the
    outcome. Any backend failure propagates and the block produces no vector.
    """
    penalty = gamma * rel_token_length(prompt, normalizer, backend.tokenizer)

    def score_instance(instance):
        if instruction_as_system:
            body = render_prompt_text(prompt).removeprefix(prompt.instruction.text).lstrip("\n")
            stub = f"Input: {instance.input}\nOutput:"
            user = f"{body}\n\n{stub}" if body else stub
            request = ChatRequest(user=user, system=prompt.instruction.text,
                                  max_output_tokens=max_output_tokens, temperature=temperature)
        else:
            request = ChatRequest(user=assemble_eval_prompt(prompt, instance.input),
                                  max_output_tokens=max_output_tokens, temperature=temperature)
        response = complete(backend, request, meter, ROLE_EVAL)
        return score(instance.target, extract_answer(response.text), scorer)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            raw = list(pool.map(score_instance, block.instances))
    else:
        raw = [score_instance(i) for i in block.instances]

    return ScoreVector(
        prompt_id=prompt.id,
        block_index=block.index,
        per_instance=tuple(s - penalty for s in raw),
        raw_mean=fsum(raw) / len(raw),
    )
