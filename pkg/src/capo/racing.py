"""Statistical racing: paired t-tests, an evaluation ledger, survival selection.

Candidates race over incrementally revealed dev blocks. After each pass a
candidate is eliminated when at least n_survive rivals are significantly
better under a one-sided paired t-test on the concatenated per-instance
scores; survivors carry their cached block scores into later steps.

The Student-t quantile is computed in-engine from the regularized incomplete
beta function (continued-fraction evaluation) so the engine has no runtime
dependency on a statistics library.
"""
from __future__ import annotations

import math
import random
from typing import Callable, Sequence

from .core import Block, CapoConfig, Prompt
from .llm import BackendSpec, BudgetMeter, count_tokens
from .objective import LengthNormalizer, ScoreVector, evaluate_block, render_prompt_text

Evaluator = Callable[[Prompt, Block], ScoreVector]


def paired_t_statistic(a: Sequence[float], b: Sequence[float]) -> tuple[float, int]:
    """One-sided paired t-statistic of a over b and its degrees of freedom.

    Positive t means a scores higher. Uses the sample standard deviation
    (n - 1); a bitwise-zero deviation vector degenerates to +/-inf by the sign
    of the mean difference, or 0 when the mean is zero too.
    """
    n = len(a)
    if n != len(b):
        raise ValueError("paired vectors must have equal length")
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = [x - y for x, y in zip(a, b)]
    mean = math.fsum(d) / n
    ss = math.fsum((x - mean) ** 2 for x in d)
    df = n - 1
    if ss == 0.0:
        if mean > 0:
            return math.inf, df
        if mean < 0:
            return -math.inf, df
        return 0.0, df
    sd = math.sqrt(ss / df)
    return mean / (sd / math.sqrt(n)), df


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    max_iter, eps, fpmin = 300, 3e-16, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def _betai(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    # The continued fraction converges fast only below the distribution mean;
    # use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) past it.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: float) -> float:
    """CDF of Student's t with df degrees of freedom."""
    if df <= 0:
        raise ValueError("df must be positive")
    if t == 0.0:
        return 0.5
    tail = 0.5 * _betai(0.5 * df, 0.5, df / (df + t * t))
    return 1.0 - tail if t > 0 else tail


def student_t_quantile(p: float, df: float) -> float:
    """Inverse CDF of Student's t, solved by bisection on the analytic CDF."""
    if df <= 0:
        raise ValueError("df must be positive")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -student_t_quantile(1.0 - p, df)
    lo, hi = 0.0, 1.0
    while student_t_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e300:
            raise ArithmeticError("t quantile bracket expansion failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if student_t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def critical_value(alpha: float, df: int) -> float:
    """One-sided rejection threshold t_{1-alpha, df}."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    if df < 1:
        raise ValueError("df must be >= 1")
    return student_t_quantile(1.0 - alpha, df)


class EvalLedger:
    """Write-once cache of ScoreVectors keyed by (prompt id, block index).

    The ledger is the single evaluation record of a run: racing reuses cached
    blocks across steps, and a prompt's reported quality is the mean of all its
    cached per-instance penalized scores.
    """

    def __init__(self) -> None:
        self._entries: dict[int, dict[int, ScoreVector]] = {}

    def has(self, prompt_id: int, block_index: int) -> bool:
        return block_index in self._entries.get(prompt_id, {})

    def get(self, prompt_id: int, block_index: int) -> ScoreVector:
        return self._entries[prompt_id][block_index]

    def put(self, vector: ScoreVector) -> None:
        per_prompt = self._entries.setdefault(vector.prompt_id, {})
        if vector.block_index in per_prompt:
            raise ValueError(
                f"ledger entry ({vector.prompt_id}, {vector.block_index}) already exists"
            )
        per_prompt[vector.block_index] = vector

    def blocks_evaluated(self, prompt_id: int) -> int:
        return len(self._entries.get(prompt_id, {}))

    def total_entries(self) -> int:
        return sum(len(v) for v in self._entries.values())

    def mean_penalized(self, prompt_id: int) -> float | None:
        """Mean penalized score over every cached instance, None when unevaluated."""
        per_prompt = self._entries.get(prompt_id)
        if not per_prompt:
            return None
        values = [s for v in per_prompt.values() for s in v.per_instance]
        return math.fsum(values) / len(values)

    def mean_raw(self, prompt_id: int) -> float | None:
        """Mean raw (unpenalized) block score, None when unevaluated."""
        per_prompt = self._entries.get(prompt_id)
        if not per_prompt:
            return None
        raws = [len(v.per_instance) for v in per_prompt.values()]
        total = math.fsum(v.raw_mean * len(v.per_instance) for v in per_prompt.values())
        return total / sum(raws)

    def paired_vector(self, prompt_id: int, block_order: Sequence[int]) -> list[float]:
        """Per-instance scores concatenated over the given blocks, in that order."""
        per_prompt = self._entries.get(prompt_id, {})
        missing = [b for b in block_order if b not in per_prompt]
        if missing:
            raise ValueError(f"prompt {prompt_id} has no scores for blocks {missing}")
        return [s for b in block_order for s in per_prompt[b].per_instance]


def racing_elimination(candidates: Sequence[Prompt], ledger: EvalLedger, alpha: float,
                       n_survive: int, block_order: Sequence[int]) -> list[Prompt]:
    """Drop every candidate that at least n_survive rivals significantly beat.

    All comparisons run against the same pass-start candidate list and all
    decisions apply simultaneously, so elimination is order-free. Candidates
    must share the evaluated block set given by block_order.
    """
    vectors = {p.id: ledger.paired_vector(p.id, block_order) for p in candidates}
    crit_cache: dict[int, float] = {}
    survivors = []
    for me in candidates:
        better = 0
        for rival in candidates:
            if rival.id == me.id:
                continue
            t, df = paired_t_statistic(vectors[rival.id], vectors[me.id])
            crit = crit_cache.get(df)
            if crit is None:
                crit = crit_cache[df] = critical_value(alpha, df)
            if t > crit:
                better += 1
                if better >= n_survive:
                    break
        if better < n_survive:
            survivors.append(me)
    return survivors


def _ranking_key(ledger: EvalLedger, tokenizer: str):
    def key(prompt: Prompt):
        mean = ledger.mean_penalized(prompt.id)
        if mean is None:
            mean = -math.inf
        return (-mean, count_tokens(render_prompt_text(prompt), tokenizer), prompt.id)

    return key


def do_racing(candidates: Sequence[Prompt], blocks: Sequence[Block], cfg: CapoConfig,
              ledger: EvalLedger, rng: random.Random, *,
              backend: BackendSpec | None = None, meter: BudgetMeter | None = None,
              normalizer: LengthNormalizer | None = None,
              evaluator: Evaluator | None = None, tokenizer: str | None = None,
              n_survive: int | None = None, max_workers: int = 1) -> list[Prompt]:
    """Race candidates over dev blocks and return the n_survive best.

    Blocks are revealed one per pass (their order optionally shuffled once per
    invocation); every pass evaluates all remaining candidates on the revealed
    prefix (ledger hits skip the LLM), then applies racing elimination. The
    race stops when at most n_survive candidates remain or j_max passes have
    run; remaining candidates are ranked by mean penalized score over all
    their cached blocks, ties broken by shorter prompt, then lower id.
    """
    if n_survive is None:
        n_survive = cfg.mu
    if evaluator is None:
        if backend is None or meter is None or normalizer is None:
            raise ValueError("do_racing needs backend+meter+normalizer or an evaluator")
        backend_ = backend

        def evaluator(prompt: Prompt, block: Block) -> ScoreVector:
            return evaluate_block(prompt, block, backend_, meter, cfg.gamma, normalizer,
                                  cfg.scorer, temperature=cfg.eval_temperature,
                                  max_output_tokens=cfg.max_output_tokens,
                                  max_workers=max_workers)

    if tokenizer is None:
        tokenizer = backend.tokenizer if backend is not None else "approx_whitespace"

    order = list(range(len(blocks)))
    if cfg.shuffle_blocks:
        rng.shuffle(order)

    pool = list(candidates)
    j = 0
    while len(pool) > n_survive and j < min(cfg.j_max, len(blocks)):
        j += 1
        for block_index in order[:j]:
            for prompt in pool:
                if not ledger.has(prompt.id, block_index):
                    ledger.put(evaluator(prompt, blocks[block_index]))
        pool = racing_elimination(pool, ledger, cfg.alpha, n_survive, order[:j])

    pool.sort(key=_ranking_key(ledger, tokenizer))
    return pool[:n_survive]
