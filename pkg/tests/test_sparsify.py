"""Accumulation, alpha draws, and TopK / random selection tests."""

import numpy as np
import pytest

from jwins.sparsify import (
    Accumulator,
    AlphaDistribution,
    accumulate_averaging_delta,
    accumulate_training_delta,
    draw_alpha,
    new_accumulator,
    random_indices,
    reset_selected,
    select_random,
    select_topk,
    selection_size,
    top_indices,
)
from jwins.wavelet import coeff_length, dwt, sym2_filters


class TestAccumulator:
    def test_zero_delta_leaves_scores(self):
        spec = sym2_filters()
        acc = new_accumulator(coeff_length(50, 4))
        acc.scores[:] = 7.0
        x = np.arange(50.0)
        accumulate_training_delta(acc, x, x, spec)
        np.testing.assert_array_equal(acc.scores, 7.0)

    def test_from_zero_vector_gives_dwt(self):
        spec = sym2_filters()
        x = np.random.default_rng(0).normal(size=64)
        acc = new_accumulator(coeff_length(64, 4))
        accumulate_training_delta(acc, np.zeros(64), x, spec)
        np.testing.assert_allclose(acc.scores, dwt(x, spec).data, atol=1e-12)

    def test_two_deltas_sum_linearly(self):
        """dwt(d1) + dwt(d2) = dwt(d1 + d2), computed both ways."""
        spec = sym2_filters()
        rng = np.random.default_rng(1)
        a, b, c = rng.normal(size=(3, 100))
        acc = new_accumulator(coeff_length(100, 4))
        accumulate_training_delta(acc, a, b, spec)
        accumulate_training_delta(acc, b, c, spec)
        np.testing.assert_allclose(acc.scores, dwt(c - a, spec).data,
                                   rtol=1e-9, atol=1e-12)

    def test_disabled_overwrites(self):
        spec = sym2_filters()
        rng = np.random.default_rng(2)
        a, b, c = rng.normal(size=(3, 30))
        acc = new_accumulator(coeff_length(30, 4), enabled=False)
        accumulate_training_delta(acc, a, b, spec)
        accumulate_training_delta(acc, b, c, spec)
        np.testing.assert_allclose(acc.scores, dwt(c - b, spec).data, atol=1e-12)

    def test_averaging_delta_adds(self):
        spec = sym2_filters()
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(2, 40))
        acc = new_accumulator(coeff_length(40, 4))
        accumulate_averaging_delta(acc, a, a, spec)
        np.testing.assert_array_equal(acc.scores, 0.0)
        accumulate_averaging_delta(acc, a, b, spec)
        np.testing.assert_allclose(acc.scores, dwt(b - a, spec).data, atol=1e-12)

    def test_localized_change_scores_locally(self):
        """Averaging one parameter changes scores only where its dwt lives."""
        spec = sym2_filters()
        n = 256
        acc = new_accumulator(coeff_length(n, 4))
        pre = np.zeros(n)
        post = np.zeros(n)
        post[130] = 1.0
        accumulate_averaging_delta(acc, pre, post, spec)
        oracle = dwt(post - pre, spec).data
        np.testing.assert_allclose(acc.scores, oracle, atol=1e-14)
        assert np.count_nonzero(np.abs(acc.scores) > 1e-12) < acc.scores.size // 4

    def test_raw_space_when_spec_none(self):
        acc = new_accumulator(10)
        accumulate_training_delta(acc, np.zeros(10), np.arange(10.0), None)
        np.testing.assert_array_equal(acc.scores, np.arange(10.0))

    def test_length_mismatch(self):
        acc = new_accumulator(5)
        with pytest.raises(ValueError):
            accumulate_training_delta(acc, np.zeros(5), np.zeros(6), None)
        with pytest.raises(ValueError):
            accumulate_training_delta(acc, np.zeros(6), np.zeros(6), None)


class TestAlpha:
    def test_default_mean_matches_support(self):
        dist = AlphaDistribution()
        assert dist.mean() == pytest.approx(2.4 / 7, abs=1e-12)

    def test_sample_mean_over_1e5_draws(self):
        """Mean of the default cut-off list is 0.342857 within 0.005."""
        dist = AlphaDistribution()
        rng = np.random.default_rng(4)
        draws = [draw_alpha(dist, rng) for _ in range(100_000)]
        assert np.mean(draws) == pytest.approx(0.342857, abs=0.005)

    def test_budget_20_percent_config(self):
        """support {1.0, 0.1} with probs {0.1, 0.9} has expected value 0.19."""
        dist = AlphaDistribution((1.0, 0.1), (0.1, 0.9))
        assert dist.mean() == pytest.approx(0.19, abs=1e-12)
        rng = np.random.default_rng(5)
        draws = [draw_alpha(dist, rng) for _ in range(50_000)]
        assert np.mean(draws) == pytest.approx(0.19, abs=0.01)

    def test_draw_consumes_one_uniform(self):
        dist = AlphaDistribution()
        rng1 = np.random.default_rng(6)
        rng2 = np.random.default_rng(6)
        draw_alpha(dist, rng1)
        rng2.random()
        assert rng1.random() == rng2.random()

    def test_deterministic_sequence(self):
        dist = AlphaDistribution()
        seq1 = [draw_alpha(dist, np.random.default_rng(7)) for _ in range(1)]
        seq2 = [draw_alpha(dist, np.random.default_rng(7)) for _ in range(1)]
        assert seq1 == seq2
        a = np.random.default_rng(8)
        b = np.random.default_rng(8)
        assert [draw_alpha(dist, a) for _ in range(50)] == \
               [draw_alpha(dist, b) for _ in range(50)]

    def test_only_support_values_drawn(self):
        dist = AlphaDistribution()
        rng = np.random.default_rng(9)
        support = set(dist.support)
        assert all(draw_alpha(dist, rng) in support for _ in range(1000))

    def test_validation(self):
        with pytest.raises(ValueError):
            AlphaDistribution((), ())
        with pytest.raises(ValueError):
            AlphaDistribution((0.5, 1.5), (0.5, 0.5))
        with pytest.raises(ValueError):
            AlphaDistribution((0.5, 0.6), (0.7, 0.7))
        with pytest.raises(ValueError):
            AlphaDistribution((0.0,), (1.0,))


class TestSelectionSize:
    def test_round_half_up(self):
        assert selection_size(0.25, 10) == 3  # 2.5 rounds up
        assert selection_size(0.05, 10) == 1
        assert selection_size(0.24, 10) == 2
        assert selection_size(1.0, 10) == 10
        assert selection_size(0.37, 100) == 37
        assert selection_size(0.37, 10**4) == 3700
        assert selection_size(0.1, 10009) == 1001

    def test_clamped(self):
        assert selection_size(0.0, 10) == 0
        with pytest.raises(ValueError):
            selection_size(1.5, 10)


class TestTopK:
    def test_two_largest_magnitudes(self):
        sel = select_topk(np.array([3.0, -5.0, 2.0, 0.0]), 0.5)
        np.testing.assert_array_equal(sel.indices, [0, 1])
        assert sel.k == 2

    def test_alpha_one_takes_everything(self):
        sel = select_topk(np.array([3.0, -5.0, 2.0, 0.0]), 1.0)
        np.testing.assert_array_equal(sel.indices, [0, 1, 2, 3])

    def test_tie_break_lower_index(self):
        sel = top_indices(np.array([1.0, -1.0, 1.0, 0.0]), 2)
        np.testing.assert_array_equal(sel, [0, 1])

    def test_accepts_accumulator(self):
        acc = Accumulator(np.array([0.0, 9.0, -1.0]))
        np.testing.assert_array_equal(select_topk(acc, 0.34).indices, [1])

    def test_matches_full_sort(self):
        """Selection-based result equals sort-then-take under the tie rule."""
        rng = np.random.default_rng(10)
        for _ in range(50):
            n = int(rng.integers(1, 400))
            k = int(rng.integers(0, n + 1))
            v = rng.choice([-2.0, -1.0, 0.0, 1.0, 2.0, 3.5], size=n)
            got = top_indices(v, k)
            order = np.lexsort((np.arange(n), -np.abs(v)))
            want = np.sort(order[:k])
            np.testing.assert_array_equal(got, want)

    def test_permutation_consistency(self):
        """Permuting scores permutes the selection (no hidden position bias)."""
        rng = np.random.default_rng(11)
        v = rng.normal(size=200)  # continuous, so ties have measure zero
        perm = rng.permutation(200)
        k = 40
        base = top_indices(v, k)
        permuted = top_indices(v[perm], k)
        np.testing.assert_array_equal(np.sort(perm[permuted]), base)

    def test_after_reset_zeroed_not_reselected(self):
        rng = np.random.default_rng(12)
        acc = Accumulator(np.abs(rng.normal(size=100)) + 0.1)
        first = select_topk(acc, 0.2)
        reset_selected(acc, first)
        second = select_topk(acc, 0.2)
        assert not set(first.indices.tolist()) & set(second.indices.tolist())


class TestReset:
    def test_reset_all(self):
        acc = Accumulator(np.arange(1.0, 6.0))
        reset_selected(acc, select_topk(acc, 1.0))
        np.testing.assert_array_equal(acc.scores, 0.0)

    def test_reset_none(self):
        acc = Accumulator(np.arange(1.0, 6.0))
        reset_selected(acc, select_topk(acc, 0.0))
        np.testing.assert_array_equal(acc.scores, np.arange(1.0, 6.0))

    def test_reset_subset(self):
        from jwins.sparsify import Selection
        acc = Accumulator(np.array([3.0, -5.0, 2.0]))
        reset_selected(acc, Selection(np.array([1]), 0.33))
        np.testing.assert_array_equal(acc.scores, [3.0, 0.0, 2.0])

    def test_out_of_range(self):
        from jwins.sparsify import Selection
        acc = Accumulator(np.zeros(3))
        with pytest.raises(ValueError):
            reset_selected(acc, Selection(np.array([5]), 0.5))


class TestRandomSelection:
    def test_alpha_one_all_indices(self):
        sel = select_random(10, 1.0, seed=123)
        np.testing.assert_array_equal(sel.indices, np.arange(10))

    def test_same_seed_same_set(self):
        a = select_random(1000, 0.37, seed=42)
        b = select_random(1000, 0.37, seed=42)
        np.testing.assert_array_equal(a.indices, b.indices)
        c = select_random(1000, 0.37, seed=43)
        assert not np.array_equal(a.indices, c.indices)

    def test_regenerable_from_k(self):
        """Receivers rebuild the set from (seed, K, len) without alpha."""
        sel = select_random(10**4, 0.37, seed=7)
        assert sel.k == 3700
        np.testing.assert_array_equal(sel.indices, random_indices(10**4, 3700, 7))

    def test_sorted_distinct(self):
        sel = select_random(500, 0.25, seed=1)
        assert np.all(np.diff(sel.indices) > 0)
        assert sel.indices.min() >= 0 and sel.indices.max() < 500
