"""Synthetic graded task for running the optimizer without an LLM server.

Every instance embeds a residue RES=r (0..9) and its target as __T=...__.
Instructions carry a LEVEL=NN tag; the scripted eval backend answers an
instance correctly iff r < level, so a level-N prompt scores N/10 on a
residue-balanced block. Meta rule sets decide how offspring levels move:
improving rules bump the level by one per mutation, degrading rules send
every offspring to level 0.
"""
from __future__ import annotations

from capo import LabeledInstance, MockRule

WRONG = MockRule.catch_all("<final_answer>__wrong__</final_answer>")


def graded_eval_rules() -> list[MockRule]:
    """One rule per level: correct iff the instance residue is below the level."""
    rules = []
    for level in range(1, 11):
        residues = "|".join(str(r) for r in range(level))
        rules.append(MockRule(
            template="<final_answer>\\1</final_answer>",
            regex=rf"(?s)LEVEL={level:02d}.*RES=(?:{residues}) __T=(\w+)__\s*\nOutput:\s*$",
        ))
    return rules


def improving_meta_rules() -> list[MockRule]:
    """Crossover keeps the mother's level; mutation bumps it by one (capped at 10)."""
    rules = [MockRule(template="<prompt>blend LEVEL=\\1 prompt</prompt>",
                      regex=r"(?s)\nPrompt 1: [^\n]*LEVEL=(\d\d)")]
    for level in range(10):
        rules.append(MockRule(
            template=f"<prompt>refined LEVEL={level + 1:02d} prompt</prompt>",
            regex=rf"(?s)Please rephrase.*LEVEL={level:02d}",
        ))
    rules.append(MockRule(template="<prompt>refined LEVEL=10 prompt</prompt>",
                          regex=r"(?s)Please rephrase.*LEVEL=10"))
    return rules


def degrading_meta_rules() -> list[MockRule]:
    """Crossover drops offspring to level 0; mutation preserves the level."""
    return [
        MockRule(template="<prompt>child LEVEL=00 prompt</prompt>",
                 contains="Please merge the two prompts"),
        MockRule(template="<prompt>variant LEVEL=\\1 prompt</prompt>",
                 regex=r"(?s)Please rephrase.*LEVEL=(\d\d)"),
    ]


def graded_instances(n: int, prefix: str = "example") -> tuple[LabeledInstance, ...]:
    return tuple(
        LabeledInstance(input=f"{prefix}{i} RES={i % 10} __T=t{i}__", target=f"t{i}")
        for i in range(n)
    )


def graded_instructions(levels: list[int]) -> list[str]:
    return [f"answer carefully variant {i} LEVEL={level:02d}"
            for i, level in enumerate(levels)]
