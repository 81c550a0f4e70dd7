"""Paired t-statistics, the Student-t quantile, the ledger, and racing selection."""
from __future__ import annotations

import math
from math import fsum, inf, isclose

import pytest
from hypothesis import given, strategies as st

from capo import (
    EvalLedger,
    Instruction,
    Prompt,
    ScoreVector,
    critical_value,
    do_racing,
    make_blocks,
    paired_t_statistic,
    racing_elimination,
    student_t_cdf,
    student_t_quantile,
)

from conftest import make_instances, small_cfg

# frozen from an independent reference implementation before the build
T_EXAMPLE = 1.5811388300841895          # a=[1,0,1,1,0,1] vs b=[0,0,1,0,0,1]
CRIT_02_DF29 = 0.8541919858818559       # one-sided t_{0.8, 29}
CRIT_02_DF9 = 0.8834038596855205        # one-sided t_{0.8, 9}
NORMAL_095 = 1.6448536269514722


class TestPairedT:
    def test_worked_example(self):
        t, df = paired_t_statistic([1, 0, 1, 1, 0, 1], [0, 0, 1, 0, 0, 1])
        assert df == 5
        assert isclose(t, T_EXAMPLE, abs_tol=1e-9)

    def test_sign_convention(self):
        t, _ = paired_t_statistic([1, 1, 1, 0], [0, 1, 0, 0])
        assert t > 0
        t, _ = paired_t_statistic([0, 1, 0, 0], [1, 1, 1, 0])
        assert t < 0

    def test_identical_vectors_give_zero(self):
        t, df = paired_t_statistic([0.3, 0.7, 0.1], [0.3, 0.7, 0.1])
        assert t == 0.0
        assert df == 2

    def test_constant_positive_shift_degenerates_to_inf(self):
        t, _ = paired_t_statistic([1, 1, 1], [0, 0, 0])
        assert t == inf
        t, _ = paired_t_statistic([0, 0, 0], [1, 1, 1])
        assert t == -inf

    def test_constant_shift_with_offset_pairs(self):
        # differences all equal but nonzero across varying levels
        t, _ = paired_t_statistic([1, 2, 3, 4], [0, 1, 2, 3])
        assert t == inf

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            paired_t_statistic([1, 2], [1, 2, 3])

    def test_needs_two_pairs(self):
        with pytest.raises(ValueError):
            paired_t_statistic([1], [0])

    @given(st.lists(st.integers(0, 1), min_size=2, max_size=40))
    def test_self_comparison_is_always_zero(self, scores):
        t, df = paired_t_statistic(scores, scores)
        assert t == 0.0
        assert df == len(scores) - 1

    @given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)),
                    min_size=2, max_size=30))
    def test_antisymmetry(self, pairs):
        a = [p[0] for p in pairs]
        b = [p[1] for p in pairs]
        t_ab, _ = paired_t_statistic(a, b)
        t_ba, _ = paired_t_statistic(b, a)
        if math.isfinite(t_ab):
            assert isclose(t_ab, -t_ba, abs_tol=1e-9)
        else:
            assert t_ab == -t_ba


class TestStudentT:
    def test_median_is_zero(self):
        assert student_t_quantile(0.5, 7) == 0.0
        assert critical_value(0.5, 7) == 0.0

    def test_frozen_critical_values(self):
        assert isclose(critical_value(0.2, 29), CRIT_02_DF29, abs_tol=1e-8)
        assert isclose(critical_value(0.2, 9), CRIT_02_DF9, abs_tol=1e-8)

    def test_large_df_approaches_normal(self):
        assert isclose(critical_value(0.05, 10**6), NORMAL_095, abs_tol=1e-3)

    def test_cdf_basics(self):
        assert student_t_cdf(0.0, 5) == 0.5
        assert student_t_cdf(10.0, 5) > 0.999
        assert student_t_cdf(-10.0, 5) < 0.001

    def test_quantile_inverts_cdf(self):
        for p in (0.6, 0.8, 0.95, 0.99):
            for df in (1, 3, 9, 29, 120):
                q = student_t_quantile(p, df)
                assert isclose(student_t_cdf(q, df), p, abs_tol=1e-12)

    def test_symmetry(self):
        assert isclose(student_t_quantile(0.2, 9), -student_t_quantile(0.8, 9),
                       abs_tol=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            student_t_quantile(0.0, 5)
        with pytest.raises(ValueError):
            student_t_quantile(1.0, 5)
        with pytest.raises(ValueError):
            student_t_quantile(0.5, 0)
        with pytest.raises(ValueError):
            critical_value(0.0, 5)
        with pytest.raises(ValueError):
            critical_value(0.2, 0)

    @given(alpha=st.floats(0.01, 0.49), df=st.integers(1, 500))
    def test_smaller_alpha_needs_larger_t(self, alpha, df):
        assert critical_value(alpha / 2, df) > critical_value(alpha, df) > 0


def vec(pid: int, block: int, values) -> ScoreVector:
    values = tuple(float(v) for v in values)
    return ScoreVector(prompt_id=pid, block_index=block, per_instance=values,
                       raw_mean=fsum(values) / len(values))


class TestEvalLedger:
    def test_put_get_has(self):
        ledger = EvalLedger()
        v = vec(1, 0, [1, 0, 1])
        assert not ledger.has(1, 0)
        ledger.put(v)
        assert ledger.has(1, 0)
        assert ledger.get(1, 0) is v
        assert ledger.blocks_evaluated(1) == 1
        assert ledger.total_entries() == 1

    def test_write_once(self):
        ledger = EvalLedger()
        ledger.put(vec(1, 0, [1, 0]))
        with pytest.raises(ValueError, match="already exists"):
            ledger.put(vec(1, 0, [0, 0]))

    def test_running_mean_over_all_cached_instances(self):
        ledger = EvalLedger()
        ledger.put(vec(1, 0, [1.0, 0.0]))
        ledger.put(vec(1, 1, [1.0, 1.0]))
        assert isclose(ledger.mean_penalized(1), 0.75, abs_tol=1e-12)
        assert isclose(ledger.mean_raw(1), 0.75, abs_tol=1e-12)

    def test_mean_is_none_when_unevaluated(self):
        ledger = EvalLedger()
        assert ledger.mean_penalized(42) is None
        assert ledger.mean_raw(42) is None

    def test_raw_and_penalized_differ_under_penalty(self):
        ledger = EvalLedger()
        ledger.put(ScoreVector(prompt_id=1, block_index=0,
                               per_instance=(0.95, -0.05), raw_mean=0.5))
        assert isclose(ledger.mean_penalized(1), 0.45, abs_tol=1e-12)
        assert isclose(ledger.mean_raw(1), 0.5, abs_tol=1e-12)

    def test_paired_vector_respects_block_order(self):
        ledger = EvalLedger()
        ledger.put(vec(1, 0, [1.0, 0.0]))
        ledger.put(vec(1, 1, [0.5, 0.25]))
        assert ledger.paired_vector(1, [1, 0]) == [0.5, 0.25, 1.0, 0.0]

    def test_paired_vector_missing_block_is_error(self):
        ledger = EvalLedger()
        ledger.put(vec(1, 0, [1.0]))
        with pytest.raises(ValueError, match="no scores for blocks"):
            ledger.paired_vector(1, [0, 1])


def make_prompts(n: int, text: str = "same length instruction") -> list[Prompt]:
    return [Prompt(id=i, instruction=Instruction(text)) for i in range(n)]


def fill_ledger(rows: dict[int, list[list[float]]]) -> EvalLedger:
    """rows[pid] = per-block per-instance score lists."""
    ledger = EvalLedger()
    for pid, blocks in rows.items():
        for b, values in enumerate(blocks):
            ledger.put(vec(pid, b, values))
    return ledger


class TestRacingElimination:
    def test_identical_candidates_keep_everyone(self):
        prompts = make_prompts(5)
        ledger = fill_ledger({i: [[1, 0, 1, 0]] for i in range(5)})
        out = racing_elimination(prompts, ledger, alpha=0.2, n_survive=3, block_order=[0])
        assert out == prompts

    def test_dominated_candidate_is_dropped(self):
        prompts = make_prompts(4)
        rows = {0: [[1, 1, 1, 1]], 1: [[1, 1, 1, 1]], 2: [[1, 1, 1, 1]], 3: [[0, 0, 0, 0]]}
        out = racing_elimination(prompts, fill_ledger(rows), alpha=0.2, n_survive=3,
                                 block_order=[0])
        assert [p.id for p in out] == [0, 1, 2]

    def test_threshold_counts_significantly_better_rivals(self):
        prompts = make_prompts(4)
        rows = {0: [[1, 1, 1, 1]], 1: [[1, 1, 1, 1]], 2: [[1, 1, 1, 1]], 3: [[0, 0, 0, 0]]}
        # the weak candidate has exactly 3 better rivals: dropped at n_survive=3,
        # kept at n_survive=4
        dropped = racing_elimination(prompts, fill_ledger(rows), 0.2, 3, [0])
        kept = racing_elimination(prompts, fill_ledger(rows), 0.2, 4, [0])
        assert [p.id for p in dropped] == [0, 1, 2]
        assert kept == prompts

    def test_insignificant_differences_eliminate_nobody(self):
        prompts = make_prompts(2)
        # one mismatch out of 20: t ~ 1 < crit for alpha=0.05
        a = [1] * 20
        b = [1] * 19 + [0]
        out = racing_elimination(prompts, fill_ledger({0: [a], 1: [b]}),
                                 alpha=0.05, n_survive=1, block_order=[0])
        assert len(out) == 2

    def test_elimination_is_simultaneous_and_order_free(self):
        rows = {
            0: [[1, 1, 1, 1, 1, 1, 1, 1, 1, 1]],
            1: [[1, 1, 1, 1, 1, 1, 1, 1, 0, 0]],
            2: [[1, 1, 0, 0, 0, 0, 0, 0, 0, 0]],
            3: [[0, 0, 0, 0, 0, 0, 0, 0, 0, 0]],
        }
        prompts = make_prompts(4)
        forward = racing_elimination(prompts, fill_ledger(rows), 0.2, 2, [0])
        backward = racing_elimination(list(reversed(prompts)), fill_ledger(rows), 0.2, 2, [0])
        assert {p.id for p in forward} == {p.id for p in backward}

    def test_multi_block_pairing_uses_concatenation(self):
        prompts = make_prompts(2)
        # identical on block 0; consistently better on block 1
        rows = {0: [[1, 1, 1], [1, 1, 1]], 1: [[1, 1, 1], [0, 0, 0]]}
        one_block = racing_elimination(prompts, fill_ledger(rows), 0.2, 1, [0])
        both_blocks = racing_elimination(prompts, fill_ledger(rows), 0.2, 1, [0, 1])
        assert len(one_block) == 2
        assert [p.id for p in both_blocks] == [0]


def matrix_evaluator(matrix: dict[int, list[list[float]]], calls=None):
    def evaluate(prompt: Prompt, block) -> ScoreVector:
        if calls is not None:
            calls.append((prompt.id, block.index))
        return vec(prompt.id, block.index, matrix[prompt.id][block.index])

    return evaluate


def uniform_blocks(n_blocks: int, block_size: int):
    return make_blocks(make_instances(n_blocks * block_size), block_size)


class TestDoRacing:
    def test_survivor_count_and_dominance(self):
        cfg = small_cfg(alpha=0.2, j_max=3, gamma=0.0)
        prompts = make_prompts(6)
        matrix = {i: [[1.0] * 5 if i < 5 else [0.0] * 5 for _ in range(3)]
                  for i in range(6)}
        survivors = do_racing(prompts, uniform_blocks(3, 5), cfg, EvalLedger(),
                              seeded_rng_stream(), evaluator=matrix_evaluator(matrix),
                              n_survive=4)
        assert len(survivors) == 4
        assert all(p.id < 5 for p in survivors)

    def test_strong_separation_stops_after_one_block(self):
        cfg = small_cfg(alpha=0.2, j_max=4)
        prompts = make_prompts(6)
        matrix = {i: [[1.0 if i < 4 else 0.0] * 10 for _ in range(4)] for i in range(6)}
        ledger = EvalLedger()
        survivors = do_racing(prompts, uniform_blocks(4, 10), cfg, ledger,
                              seeded_rng_stream(), evaluator=matrix_evaluator(matrix),
                              n_survive=4)
        assert {p.id for p in survivors} == {0, 1, 2, 3}
        assert max(ledger.blocks_evaluated(p.id) for p in prompts) == 1

    def test_ties_run_to_j_max_then_rank(self):
        cfg = small_cfg(alpha=0.2, j_max=3)
        prompts = make_prompts(5)
        matrix = {i: [[1.0] * 4 for _ in range(3)] for i in range(5)}
        ledger = EvalLedger()
        survivors = do_racing(prompts, uniform_blocks(3, 4), cfg, ledger,
                              seeded_rng_stream(), evaluator=matrix_evaluator(matrix),
                              n_survive=2)
        assert max(ledger.blocks_evaluated(p.id) for p in prompts) == 3
        # exact ties fall back to prompt id
        assert [p.id for p in survivors] == [0, 1]

    def test_rank_ties_prefer_shorter_prompts(self):
        cfg = small_cfg(alpha=0.2, j_max=1)
        long = Prompt(id=0, instruction=Instruction("a much longer instruction text here"))
        short = Prompt(id=1, instruction=Instruction("short one"))
        matrix = {0: [[1.0] * 4], 1: [[1.0] * 4]}
        survivors = do_racing([long, short], uniform_blocks(1, 4), cfg, EvalLedger(),
                              seeded_rng_stream(), evaluator=matrix_evaluator(matrix),
                              n_survive=1)
        assert survivors == [short]

    def test_cached_blocks_are_not_reevaluated(self):
        cfg = small_cfg(alpha=0.2, j_max=2)
        prompts = make_prompts(4)
        matrix = {i: [[1.0] * 5, [1.0] * 5] for i in range(4)}
        calls: list = []
        ledger = EvalLedger()
        do_racing(prompts, uniform_blocks(2, 5), cfg, ledger, seeded_rng_stream(),
                  evaluator=matrix_evaluator(matrix, calls), n_survive=2)
        first_pass = len(calls)
        do_racing(prompts, uniform_blocks(2, 5), cfg, ledger, seeded_rng_stream(),
                  evaluator=matrix_evaluator(matrix, calls), n_survive=2)
        assert len(calls) == first_pass  # every block was a ledger hit

    def test_survivors_mean_over_all_evaluated_blocks(self):
        # candidate 1 is weaker only on the late block; ranking must use all
        # cached blocks, including ones from earlier invocations
        cfg = small_cfg(alpha=0.2, j_max=2)
        prompts = make_prompts(3)
        matrix = {
            0: [[1.0] * 4, [1.0] * 4],
            1: [[1.0] * 4, [0.0] * 4],
            2: [[1.0] * 4, [1.0] * 4],
        }
        ledger = EvalLedger()
        survivors = do_racing(prompts, uniform_blocks(2, 4), cfg, ledger,
                              seeded_rng_stream(), evaluator=matrix_evaluator(matrix),
                              n_survive=2)
        assert {p.id for p in survivors} == {0, 2}

    def test_shuffled_block_order_is_deterministic(self):
        from capo import seeded_rng

        cfg = small_cfg(alpha=0.2, j_max=2, shuffle_blocks=True, seed=123)
        prompts = make_prompts(5)
        matrix = {i: [[float(i < 3)] * 5 for _ in range(4)] for i in range(5)}

        def run_once():
            ledger = EvalLedger()
            calls: list = []
            out = do_racing(prompts, uniform_blocks(4, 5), cfg, ledger,
                            seeded_rng(cfg.seed).stream("block_shuffle"),
                            evaluator=matrix_evaluator(matrix, calls), n_survive=3)
            return [p.id for p in out], calls

        # identical seeds give identical evaluation traces and survivors
        ids_a, calls_a = run_once()
        ids_b, calls_b = run_once()
        assert ids_a == ids_b
        assert calls_a == calls_b

    def test_shuffle_actually_permutes_for_some_seed(self):
        from capo import seeded_rng

        prompts = make_prompts(12)
        matrix = {i: [[1.0] * 5 for _ in range(6)] for i in range(12)}
        orders = set()
        for seed in range(6):
            cfg = small_cfg(alpha=0.2, j_max=2, shuffle_blocks=True, seed=seed)
            calls: list = []
            do_racing(prompts, uniform_blocks(6, 5), cfg, EvalLedger(),
                      seeded_rng(seed).stream("block_shuffle"),
                      evaluator=matrix_evaluator(matrix, calls), n_survive=2)
            orders.add(tuple(b for pid, b in calls if pid == 0))
        assert len(orders) > 1

    def test_requires_backend_or_evaluator(self):
        cfg = small_cfg()
        with pytest.raises(ValueError, match="evaluator"):
            do_racing(make_prompts(3), uniform_blocks(1, 5), cfg, EvalLedger(),
                      seeded_rng_stream(), n_survive=2)


def seeded_rng_stream():
    from capo import seeded_rng

    return seeded_rng(0).stream("block_shuffle")
