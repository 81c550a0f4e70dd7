"""Core data model: prompts, datasets, blocks, run configuration, seeded randomness.

Everything downstream (objective, operators, racing, runner) builds on the types
defined here. Domain types are frozen dataclasses; all randomness flows through
labeled sub-streams derived from a single root seed so that whole runs replay
bit-for-bit.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, fields, asdict
from importlib import resources
from typing import Iterable, Sequence


class ConfigError(ValueError):
    """Raised when a configuration or dataset violates a documented constraint."""


SCORERS = ("exact", "case_insensitive_trim", "numeric")


def _load_template(name: str) -> str:
    return resources.files("capo").joinpath("templates", name).read_text(encoding="utf-8")


def default_crossover_template() -> str:
    """Built-in meta-prompt for merging two parent instructions."""
    return _load_template("crossover.txt")


def default_mutation_template() -> str:
    """Built-in meta-prompt for rephrasing an instruction."""
    return _load_template("mutation.txt")


@dataclass(frozen=True)
class Instruction:
    """A task instruction; always non-empty after trimming."""

    text: str

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("instruction text must be non-empty")


@dataclass(frozen=True)
class FewShotExample:
    """One worked example: raw input, full model-style output, gold answer.

    The output is expected to carry exactly one answer-marker pair consistent
    with `answer`; that semantic check is scorer-aware and enforced where shots
    are created (see objective.shot_is_consistent), not here.
    """

    input: str
    output: str
    answer: str

    def __post_init__(self) -> None:
        if not self.input:
            raise ValueError("few-shot input must be non-empty")
        if not self.output:
            raise ValueError("few-shot output must be non-empty")
        if not self.answer:
            raise ValueError("few-shot answer must be non-empty")


@dataclass(frozen=True)
class Prompt:
    """A candidate prompt: instruction plus an ordered tuple of few-shot examples."""

    id: int
    instruction: Instruction
    shots: tuple[FewShotExample, ...] = ()


@dataclass(frozen=True)
class LabeledInstance:
    """A single task instance with its gold target."""

    input: str
    target: str

    def __post_init__(self) -> None:
        if not self.input:
            raise ValueError("instance input must be non-empty")


@dataclass(frozen=True)
class Block:
    """A contiguous slice of the dev split used as one racing evaluation unit."""

    index: int
    instances: tuple[LabeledInstance, ...]

    def __len__(self) -> int:
        return len(self.instances)


@dataclass
class DatasetSplits:
    """Few-shot pool, dev set for racing, and held-out test set."""

    few_shot: tuple[LabeledInstance, ...] = ()
    dev: tuple[LabeledInstance, ...] = ()
    test: tuple[LabeledInstance, ...] = ()

    def validate(self) -> None:
        """Check pairwise disjointness of the splits by (input, target) value."""
        fs = {(i.input, i.target) for i in self.few_shot}
        dv = {(i.input, i.target) for i in self.dev}
        ts = {(i.input, i.target) for i in self.test}
        if fs & dv or fs & ts or dv & ts:
            raise ConfigError("dataset splits must be pairwise disjoint")


def make_blocks(dev: Sequence[LabeledInstance], block_size: int) -> list[Block]:
    """Partition a prefix of the dev split into consecutive equal-size blocks.

    Instances beyond the last full block are dropped.
    """
    if block_size < 1:
        raise ConfigError("block_size must be >= 1")
    if len(dev) < block_size:
        raise ConfigError(
            f"dev split has {len(dev)} instances, need at least block_size={block_size}"
        )
    n_blocks = len(dev) // block_size
    return [
        Block(index=i, instances=tuple(dev[i * block_size : (i + 1) * block_size]))
        for i in range(n_blocks)
    ]


@dataclass
class CapoConfig:
    """Run configuration; field names double as the JSON config schema."""

    seed: int = 0
    mu: int = 10
    c: int = 4
    k_max: int = 5
    gamma: float = 0.05
    alpha: float = 0.2
    block_size: int = 30
    j_max: int = 10
    shuffle_blocks: bool = False
    token_budget: int = 5_000_000
    max_steps: int | None = None
    scorer: str = "exact"
    task_description: str = ""
    crossover_template: str = field(default_factory=default_crossover_template)
    mutation_template: str = field(default_factory=default_mutation_template)
    eval_temperature: float = 0.0
    meta_temperature: float = 0.0
    max_output_tokens: int = 2048

    def validate(self) -> None:
        if self.mu < 2:
            raise ConfigError("mu must be >= 2 (crossover needs two distinct parents)")
        if self.c < 1:
            raise ConfigError("c must be >= 1")
        if self.k_max < 0:
            raise ConfigError("k_max must be >= 0")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie strictly between 0 and 1")
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        if self.j_max < 1:
            raise ConfigError("j_max must be >= 1")
        if self.token_budget < 0:
            raise ConfigError("token_budget must be >= 0")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("max_steps must be None or >= 0")
        if self.scorer not in SCORERS:
            raise ConfigError(f"scorer must be one of {SCORERS}, got {self.scorer!r}")
        if not self.crossover_template or not self.mutation_template:
            raise ConfigError("meta-prompt templates must be non-empty")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CapoConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


class PromptIds:
    """Monotone per-run allocator of integer prompt ids."""

    def __init__(self, start: int = 0) -> None:
        self._next = start

    def next(self) -> int:
        value = self._next
        self._next += 1
        return value


class RngStreams:
    """Labeled deterministic random streams derived from one root seed.

    Each label maps to an independent `random.Random` whose seed is a digest of
    (root seed, label), so draws on one concern never shift another concern's
    sequence. Streams are cached: repeated calls with the same label return the
    same (stateful) generator.
    """

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        self._streams: dict[str, random.Random] = {}

    def stream(self, label: str) -> random.Random:
        if label not in self._streams:
            digest = hashlib.sha256(f"{self.seed}/{label}".encode("utf-8")).digest()
            self._streams[label] = random.Random(int.from_bytes(digest[:8], "big"))
        return self._streams[label]


def seeded_rng(seed: int) -> RngStreams:
    """Root of all randomness for a run."""
    return RngStreams(seed)


def instances_from_jsonl(lines: Iterable[str]) -> list[LabeledInstance]:
    """Parse dataset lines of the form {"input": ..., "target": ...}."""
    import json

    out = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            out.append(LabeledInstance(input=str(obj["input"]), target=str(obj["target"])))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"bad dataset line {lineno}: {exc}") from exc
    return out
