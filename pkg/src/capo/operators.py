"""Population initialization and the LLM-backed evolutionary operators.

Crossover merges two parent instructions through the meta LLM and inherits a
subsample of their combined shots; mutation rephrases the instruction and
perturbs the shot list by at most one example, then reshuffles it. Operators
are pure producers: parents are never modified and offspring get fresh ids.
"""
from __future__ import annotations

import logging
import random
from typing import Sequence

from .core import (
    CapoConfig,
    ConfigError,
    FewShotExample,
    Instruction,
    LabeledInstance,
    Prompt,
    PromptIds,
    RngStreams,
)
from .llm import BackendSpec, BudgetMeter, ChatRequest, ROLE_EVAL, ROLE_META, complete
from .objective import (
    ANSWER_CLOSE,
    ANSWER_OPEN,
    assemble_eval_prompt,
    extract_last_tagged,
    shot_is_consistent,
)

log = logging.getLogger(__name__)

PROMPT_OPEN = "<prompt>"
PROMPT_CLOSE = "</prompt>"


def extract_prompt(text: str) -> str | None:
    """Trimmed content of the last complete <prompt> pair, or None."""
    return extract_last_tagged(text, PROMPT_OPEN, PROMPT_CLOSE)


def fill_template(template: str, **values: str) -> str:
    """Substitute {name} placeholders literally (template text itself may hold braces)."""
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", value)
    return out


def _ask_meta(user: str, cfg: CapoConfig, meta_backend: BackendSpec,
              meter: BudgetMeter) -> str | None:
    """Request a rewritten instruction; one retry on malformed output, then None."""
    request = ChatRequest(user=user, max_output_tokens=cfg.max_output_tokens,
                          temperature=cfg.meta_temperature)
    for _ in range(2):
        response = complete(meta_backend, request, meter, ROLE_META)
        text = extract_prompt(response.text)
        if text:
            return text
    return None


def create_shots(fs_pool: Sequence[LabeledInstance], k: int, instruction_text: str,
                 cfg: CapoConfig, eval_backend: BackendSpec, meter: BudgetMeter,
                 rng: random.Random) -> tuple[FewShotExample, ...]:
    """Build k few-shot examples from instances sampled without replacement.

    Each sampled instance is answered by the eval model under the given
    instruction; the model's full output (reasoning included) becomes the shot
    when it contains exactly one marker pair scoring 1 against the target,
    otherwise the output falls back to the bare wrapped target.
    """
    if k == 0:
        return ()
    if k > len(fs_pool):
        raise ConfigError(f"need {k} few-shot instances but the pool has {len(fs_pool)}")
    scratch = Prompt(id=-1, instruction=Instruction(instruction_text))
    shots = []
    for instance in rng.sample(list(fs_pool), k):
        request = ChatRequest(user=assemble_eval_prompt(scratch, instance.input),
                              max_output_tokens=cfg.max_output_tokens,
                              temperature=cfg.eval_temperature)
        response = complete(eval_backend, request, meter, ROLE_EVAL)
        shot = None
        if response.text:
            candidate = FewShotExample(input=instance.input, output=response.text,
                                       answer=instance.target)
            if shot_is_consistent(candidate, cfg.scorer):
                shot = candidate
        if shot is None:
            shot = FewShotExample(input=instance.input,
                                  output=f"{ANSWER_OPEN}{instance.target}{ANSWER_CLOSE}",
                                  answer=instance.target)
        shots.append(shot)
    return tuple(shots)


def init_population(instruction_texts: Sequence[str], fs_pool: Sequence[LabeledInstance],
                    cfg: CapoConfig, eval_backend: BackendSpec, meter: BudgetMeter,
                    streams: RngStreams, ids: PromptIds) -> list[Prompt]:
    """One prompt per seed instruction, each with a uniform-random shot count."""
    shots_rng = streams.stream("shots")
    population = []
    for text in instruction_texts:
        k = shots_rng.randint(0, cfg.k_max)
        shots = create_shots(fs_pool, k, text, cfg, eval_backend, meter, shots_rng)
        population.append(Prompt(id=ids.next(), instruction=Instruction(text), shots=shots))
    return population


def crossover(population: Sequence[Prompt], cfg: CapoConfig, meta_backend: BackendSpec,
              meter: BudgetMeter, streams: RngStreams, ids: PromptIds) -> list[Prompt]:
    """Produce c offspring, each merging two distinct uniformly-drawn parents.

    The offspring instruction comes from the meta LLM (falling back to the
    first parent's instruction after one retry); its shots are a uniform
    subsample of floor((|K_a|+|K_b|)/2) drawn from both parents' shots pooled.
    """
    parent_rng = streams.stream("parents")
    shots_rng = streams.stream("shots")
    offspring = []
    for _ in range(cfg.c):
        mother, father = parent_rng.sample(list(population), 2)
        user = fill_template(cfg.crossover_template,
                             task_description=cfg.task_description,
                             mother=mother.instruction.text,
                             father=father.instruction.text)
        text = _ask_meta(user, cfg, meta_backend, meter)
        if text is None:
            log.warning("crossover meta output malformed twice; keeping parent %d instruction",
                        mother.id)
            text = mother.instruction.text
        pool = list(mother.shots) + list(father.shots)
        n_shots = len(pool) // 2
        shots = tuple(shots_rng.sample(pool, n_shots))
        offspring.append(Prompt(id=ids.next(), instruction=Instruction(text), shots=shots))
    return offspring


def mutate(offspring: Sequence[Prompt], fs_pool: Sequence[LabeledInstance], cfg: CapoConfig,
           eval_backend: BackendSpec, meta_backend: BackendSpec, meter: BudgetMeter,
           streams: RngStreams, ids: PromptIds) -> list[Prompt]:
    """Rephrase each offspring's instruction and perturb its shots by at most one.

    A uniform case r in {0, 1, 2} is drawn first: r=0 appends one newly created
    shot (when below k_max, using the mutated instruction), r=1 removes one
    uniformly (when any exist), r=2 keeps the list; blocked cases keep the list
    too. The shot order is reshuffled unconditionally.
    """
    mutation_rng = streams.stream("mutation")
    shots_rng = streams.stream("shots")
    shuffle_rng = streams.stream("shot_shuffle")
    mutated = []
    for prompt in offspring:
        user = fill_template(cfg.mutation_template,
                             task_description=cfg.task_description,
                             instruction=prompt.instruction.text)
        text = _ask_meta(user, cfg, meta_backend, meter)
        if text is None:
            log.warning("mutation meta output malformed twice; keeping prompt %d instruction",
                        prompt.id)
            text = prompt.instruction.text
        shots = list(prompt.shots)
        r = mutation_rng.randint(0, 2)
        if r == 0 and len(shots) < cfg.k_max:
            shots.extend(create_shots(fs_pool, 1, text, cfg, eval_backend, meter, shots_rng))
        elif r == 1 and shots:
            shots.pop(mutation_rng.randrange(len(shots)))
        shuffle_rng.shuffle(shots)
        mutated.append(Prompt(id=ids.next(), instruction=Instruction(text), shots=tuple(shots)))
    return mutated
