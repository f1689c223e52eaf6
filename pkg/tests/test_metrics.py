import itertools
import math

import numpy as np
import pytest

from pipetune.metrics import (
    ndcg_at_k,
    pairwise_accuracy,
    recall_at_k,
    regret,
    spearman,
)
from pipetune.space import Configuration


# ------------------------- brute-force reference implementations ----------


def brute_ndcg(pred, true, k):
    true = list(true)
    lo, hi = min(true), max(true)
    if hi == lo:
        return 1.0
    rel = [(t - lo) / (hi - lo) for t in true]
    order = sorted(range(len(pred)), key=lambda i: -pred[i])
    dcg = sum(rel[i] / math.log2(r + 2) for r, i in enumerate(order[:k]))
    ideal = sorted(rel, reverse=True)
    idcg = sum(g / math.log2(r + 2) for r, g in enumerate(ideal[:k]))
    return dcg / idcg


def brute_pairwise(pred, true):
    correct = total = 0.0
    for i, j in itertools.combinations(range(len(pred)), 2):
        if true[i] == true[j]:
            continue
        total += 1
        if pred[i] == pred[j]:
            correct += 0.5
        elif (pred[i] > pred[j]) == (true[i] > true[j]):
            correct += 1
    return correct / total if total else None


def brute_spearman(pred, true):
    def midranks(vals):
        return [
            1 + sum(v < x for v in vals) + (sum(v == x for v in vals) - 1) / 2
            for x in vals
        ]

    rp, rt = midranks(list(pred)), midranks(list(true))
    n = len(rp)
    mp, mt = sum(rp) / n, sum(rt) / n
    sp = math.sqrt(sum((r - mp) ** 2 for r in rp) / n)
    st = math.sqrt(sum((r - mt) ** 2 for r in rt) / n)
    if sp == 0 or st == 0:
        return None
    cov = sum((a - mp) * (b - mt) for a, b in zip(rp, rt)) / n
    return cov / (sp * st)


class TestRegret:
    def test_zero_at_optimum(self):
        assert regret(0.5, 0.5) == 0.0

    def test_reported_gap(self):
        assert regret(0.628, 0.590) == pytest.approx(0.038)

    def test_negative_allowed(self):
        assert regret(0.5, 0.6) == pytest.approx(-0.1)


class TestRecall:
    def setup_method(self):
        self.pool = [Configuration((i,)) for i in range(8)]

    def test_top_ranked_hit(self):
        assert recall_at_k(self.pool, self.pool[0], 1) == 1

    def test_sixth_missed_at_five(self):
        assert recall_at_k(self.pool, self.pool[5], 5) == 0

    def test_k_beyond_pool_always_hits(self):
        assert recall_at_k(self.pool, self.pool[-1], 100) == 1

    def test_monotone_in_k(self):
        values = [recall_at_k(self.pool, self.pool[4], k) for k in range(1, 9)]
        assert values == sorted(values)

    def test_missing_optimum_rejected(self):
        with pytest.raises(ValueError):
            recall_at_k(self.pool, Configuration((99,)), 3)


class TestNdcg:
    def test_perfect_order_is_one(self):
        assert ndcg_at_k([3, 2, 1], [0.9, 0.5, 0.1], 3) == pytest.approx(1.0)

    def test_reversed_three_items(self):
        # relevances 1.0 / 0.5 / 0.0 fully reversed
        value = ndcg_at_k([1, 2, 3], [0.9, 0.5, 0.1], 3)
        dcg = 0.5 / math.log2(3) + 1.0 / 2
        idcg = 1.0 + 0.5 / math.log2(3)
        assert value == pytest.approx(dcg / idcg)
        assert value == pytest.approx(0.6199, abs=1e-4)

    def test_correct_top_pick_at_one(self):
        assert ndcg_at_k([9, 1, 5], [0.8, 0.1, 0.4], 1) == pytest.approx(1.0)

    def test_constant_truth_is_one(self):
        assert ndcg_at_k([1, 2, 3], [0.5, 0.5, 0.5], 2) == 1.0

    def test_bounded(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 12))
            v = ndcg_at_k(rng.normal(size=n), rng.random(size=n), int(rng.integers(1, n + 1)))
            assert 0.0 <= v <= 1.0 + 1e-12

    def test_matches_brute_force_all_permutations(self, rng):
        for n in range(2, 8):
            true = np.sort(rng.random(n))[::-1]
            for perm in itertools.permutations(range(n)):
                pred = np.empty(n)
                pred[list(perm)] = np.arange(n, 0, -1)
                for k in (1, 3, n):
                    assert ndcg_at_k(pred, true, k) == pytest.approx(
                        brute_ndcg(pred, true, k), abs=1e-12
                    )


class TestPairwiseAccuracy:
    def test_identical_order(self):
        assert pairwise_accuracy([1, 2, 3], [10, 20, 30]) == 1.0

    def test_reversed_order(self):
        assert pairwise_accuracy([3, 2, 1], [10, 20, 30]) == 0.0

    def test_adjacent_swap_of_three(self):
        assert pairwise_accuracy([2, 1, 3], [1, 2, 3]) == pytest.approx(2 / 3)

    def test_all_true_ties_undefined(self):
        assert pairwise_accuracy([1, 2, 3], [5, 5, 5]) is None

    def test_predicted_ties_count_half(self):
        assert pairwise_accuracy([1, 1], [0.1, 0.9]) == 0.5

    def test_matches_brute_force_all_permutations(self, rng):
        for n in range(2, 8):
            true = rng.random(n)
            for perm in itertools.permutations(range(n)):
                pred = np.asarray(perm, dtype=float)
                assert pairwise_accuracy(pred, true) == pytest.approx(
                    brute_pairwise(pred, true), abs=1e-12
                )


class TestSpearman:
    def test_identical_order(self):
        assert spearman([1, 2, 3], [5, 6, 7]) == pytest.approx(1.0)

    def test_reversed_order(self):
        assert spearman([3, 2, 1], [5, 6, 7]) == pytest.approx(-1.0)

    def test_single_swap_closed_form(self):
        # d = (1, -1, 0): rho = 1 - 6*2 / (3*8) = 0.5
        assert spearman([2, 1, 3], [1, 2, 3]) == pytest.approx(0.5)

    def test_constant_side_undefined(self):
        assert spearman([1, 1, 1], [1, 2, 3]) is None

    def test_ties_use_midranks(self):
        assert spearman([1, 1, 2], [1, 2, 3]) == pytest.approx(
            brute_spearman([1, 1, 2], [1, 2, 3])
        )

    def test_matches_brute_force_all_permutations(self, rng):
        for n in range(2, 8):
            true = rng.random(n)
            for perm in itertools.permutations(range(n)):
                pred = np.asarray(perm, dtype=float)
                assert spearman(pred, true) == pytest.approx(
                    brute_spearman(pred, true), abs=1e-12
                )

    def test_agrees_with_scipy(self, rng):
        from scipy.stats import spearmanr

        for _ in range(20):
            a, b = rng.normal(size=15), rng.normal(size=15)
            assert spearman(a, b) == pytest.approx(spearmanr(a, b).statistic, abs=1e-12)
