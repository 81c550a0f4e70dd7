"""Shared builders for scripted-mock scenarios used across the test suite."""
from __future__ import annotations

import pytest

from capo import CapoConfig, DatasetSplits, LabeledInstance, MockRule, mock_program

# Meta rules that echo the first parent (crossover) or the unmodified
# instruction (mutation) back inside <prompt> tags. They key off fixed lines of
# the default templates, so any template change shows up here.
META_ECHO_RULES = [
    MockRule(template="<prompt>\\1</prompt>", regex=r"(?s)\nPrompt 1: (.*)\nPrompt 2: "),
    MockRule(template="<prompt>\\1</prompt>", regex=r"(?s)\nPrompt: (.*)\n\nReturn the new prompt"),
]

# Eval rule that answers every instance correctly by echoing the target token
# embedded in the instance input as __T=<target>__.
EVAL_ECHO_RULE = MockRule(template="<final_answer>\\1</final_answer>",
                          regex=r"(?s)__T=(\w+)__\s*\nOutput:\s*$")

WRONG_CATCH_ALL = MockRule.catch_all("<final_answer>__wrong__</final_answer>")


def echo_backend(tokenizer: str = "approx_whitespace"):
    """Backend where every eval answer is correct and meta operators echo parents."""
    return mock_program([*META_ECHO_RULES, EVAL_ECHO_RULE, WRONG_CATCH_ALL],
                        tokenizer=tokenizer)


def make_instances(n: int, prefix: str = "q", tag: str = "t") -> tuple[LabeledInstance, ...]:
    """Instances whose target is recoverable from the input via __T=...__."""
    return tuple(
        LabeledInstance(input=f"{prefix}{i} __T={tag}{i}__", target=f"{tag}{i}")
        for i in range(n)
    )


def make_splits(n_dev: int, n_fs: int = 0, n_test: int = 0) -> DatasetSplits:
    return DatasetSplits(
        few_shot=make_instances(n_fs, prefix="f", tag="s"),
        dev=make_instances(n_dev, prefix="q", tag="t"),
        test=make_instances(n_test, prefix="h", tag="u"),
    )


def small_cfg(**overrides) -> CapoConfig:
    """A fast desk-scale configuration; override any field per test."""
    base = dict(seed=7, mu=4, c=2, k_max=2, gamma=0.05, alpha=0.2, block_size=5,
                j_max=4, token_budget=10_000_000, max_steps=3)
    base.update(overrides)
    return CapoConfig(**base)


def leveled_rules(instance_residues: int = 10) -> list[MockRule]:
    """Rules grading prompts by a LEVEL=NN tag: correct iff instance residue < level.

    Instance inputs must embed "RES=<r> __T=<target>__" with r in
    [0, instance_residues); instructions must embed exactly one LEVEL=NN tag
    (00..10). Crossover offspring drop to LEVEL=00; mutation preserves the level.
    """
    rules = [
        MockRule(template="<prompt>child LEVEL=00 prompt</prompt>",
                 contains="Please merge the two prompts"),
        MockRule(template="<prompt>variant LEVEL=\\1 prompt</prompt>",
                 regex=r"(?s)Please rephrase.*LEVEL=(\d\d)"),
    ]
    for level in range(1, 11):
        residues = "|".join(str(r) for r in range(min(level, instance_residues)))
        rules.append(MockRule(
            template="<final_answer>\\1</final_answer>",
            regex=rf"(?s)LEVEL={level:02d}.*RES=(?:{residues}) __T=(\w+)__\s*\nOutput:\s*$",
        ))
    rules.append(WRONG_CATCH_ALL)
    return rules


def leveled_instances(n: int) -> tuple[LabeledInstance, ...]:
    return tuple(
        LabeledInstance(input=f"item{i} RES={i % 10} __T=t{i}__", target=f"t{i}")
        for i in range(n)
    )


def leveled_instructions(levels: list[int]) -> list[str]:
    return [f"seed {i} LEVEL={level:02d} instruction" for i, level in enumerate(levels)]


@pytest.fixture
def echo_mock():
    return echo_backend()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance pass/fail lines after capture ends."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for name, passed in RESULTS:
            terminalreporter.write_line(
                f"ACCEPTANCE {name}: {'PASS' if passed else 'FAIL'}")
