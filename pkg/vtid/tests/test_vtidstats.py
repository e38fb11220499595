"""Tests for the confusion-matrix metrics and the Wilcoxon signed-rank test"""

import itertools
import logging

import numpy as np
import pytest
from vtid import vtidstats


def binary_matrix():
    # rows are truth, columns predictions; "pos" is the positive class
    return vtidstats.ConfusionMatrix([[35, 5], [10, 50]], ["neg", "pos"])


class TestConfusionMatrix:

    def test_from_predictions(self):
        cm = vtidstats.ConfusionMatrix.from_predictions(
            ["a", "a", "b", "c"], ["a", "b", "b", "a"], ["a", "b", "c"])
        assert cm.counts.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 0]]
        assert cm.total == 4

    def test_unknown_label(self):
        with pytest.raises(ValueError):
            vtidstats.ConfusionMatrix.from_predictions(["a"], ["z"],
                                                       ["a", "b"])

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            vtidstats.ConfusionMatrix(np.zeros((2, 3)), ["a", "b"])
        with pytest.raises(ValueError):
            vtidstats.ConfusionMatrix(np.zeros((2, 2)), ["a"])
        with pytest.raises(ValueError):
            vtidstats.ConfusionMatrix([[1, -1], [0, 0]], ["a", "b"])

    def test_add(self):
        total = binary_matrix() + binary_matrix()
        assert total.counts.tolist() == [[70, 10], [20, 100]]
        with pytest.raises(ValueError):
            binary_matrix() + vtidstats.ConfusionMatrix([[1]], ["neg"])


class TestMetrics:

    def test_binary_example(self):
        cm = binary_matrix()
        assert vtidstats.accuracy(cm) == pytest.approx(0.85)
        assert vtidstats.positive_f1(cm) == pytest.approx(0.8696, abs=1e-4)
        assert vtidstats.positive_f1(cm) == pytest.approx(100 / 115)

    def test_perfect_and_hopeless(self):
        perfect = vtidstats.ConfusionMatrix(np.diag([3, 4, 5]), "abc")
        assert vtidstats.accuracy(perfect) == 1.0
        assert vtidstats.f1_score(perfect) == 1.0
        hopeless = vtidstats.ConfusionMatrix([[0, 3], [4, 0]], "ab")
        assert vtidstats.accuracy(hopeless) == 0.0
        assert vtidstats.f1_score(hopeless) == 0.0

    def test_absent_class_contributes_zero(self):
        cm = vtidstats.ConfusionMatrix([[5, 0, 0], [0, 5, 0], [0, 0, 0]],
                                       "abc")
        assert vtidstats.per_class_f1(cm).tolist() == [1.0, 1.0, 0.0]
        assert vtidstats.f1_score(cm) == pytest.approx(2 / 3)

    def test_empty_matrix(self):
        cm = vtidstats.ConfusionMatrix(np.zeros((2, 2)), "ab")
        with pytest.raises(ValueError):
            vtidstats.accuracy(cm)
        with pytest.raises(ValueError):
            vtidstats.f1_score(cm)

    def test_positive_f1_needs_two_classes(self):
        with pytest.raises(ValueError):
            vtidstats.positive_f1(
                vtidstats.ConfusionMatrix(np.eye(3, dtype=int), "abc"))

    def test_random_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            c = int(rng.integers(2, 7))
            counts = rng.integers(0, 30, size=(c, c))
            counts[0, 0] += 1
            cm = vtidstats.ConfusionMatrix(counts, [str(i) for i in range(c)])
            total = counts.sum()
            assert vtidstats.accuracy(cm) == pytest.approx(
                sum(counts[i, i] for i in range(c)) / total, abs=1e-12)
            f1s = []
            for i in range(c):
                tp = counts[i, i]
                fp = counts[:, i].sum() - tp
                fn = counts[i, :].sum() - tp
                precision = tp / (tp + fp) if tp + fp else 0.0
                recall = tp / (tp + fn) if tp + fn else 0.0
                f1s.append(2 * precision * recall /
                           (precision + recall) if precision + recall else 0.0)
            assert vtidstats.f1_score(cm) == pytest.approx(sum(f1s) / c,
                                                           abs=1e-12)

    def test_summarize(self):
        mean, std = vtidstats.summarize([1.0, 2.0, 3.0])
        assert mean == 2.0
        assert std == pytest.approx((2 / 3)**0.5)
        assert vtidstats.summarize([]) == [0.0, 0.0]


def brute_force_p(diffs):
    """Two-sided p by enumerating every sign assignment"""
    ranks = np.argsort(np.argsort(np.abs(diffs))) + 1.0
    # average tied ranks
    for magnitude in set(np.abs(diffs)):
        tied = np.abs(diffs) == magnitude
        ranks[tied] = ranks[tied].mean()
    r_plus = ranks[diffs > 0].sum()
    statistic = min(r_plus, ranks.sum() - r_plus)
    hits = sum(1 for signs in itertools.product((0, 1), repeat=len(diffs))
               if np.dot(signs, ranks) <= statistic + 1e-9)
    return min(1.0, 2 * hits / 2**len(diffs))


class TestWilcoxon:

    @pytest.fixture
    def one_loss(self):
        """12 paired scores; b wins only the pair with the smallest gap"""
        b = np.linspace(0.5, 0.6, 12)
        gaps = np.arange(1, 13) * 0.01
        a = b + gaps
        a[0] = b[0] - gaps[0]
        return a, b

    @pytest.mark.parametrize("method", ["exact", "normal", "auto"])
    def test_one_loss(self, one_loss, method):
        result = vtidstats.wilcoxon_signed_rank(*one_loss, method=method)
        assert result.r_plus == 77.0
        assert result.r_minus == 1.0
        assert result.n_effective == 12
        assert result.p_value < 0.01
        assert not result.undefined

    def test_auto_picks_exact_for_small_n(self, one_loss):
        assert vtidstats.wilcoxon_signed_rank(*one_loss).method == "exact"
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=30), rng.normal(size=30)
        assert vtidstats.wilcoxon_signed_rank(a, b).method == "normal"

    def test_rank_sums_add_up(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a, b = rng.uniform(size=12), rng.uniform(size=12)
            result = vtidstats.wilcoxon_signed_rank(a, b)
            assert result.r_plus + result.r_minus == 78.0

    def test_zero_differences_dropped(self):
        result = vtidstats.wilcoxon_signed_rank([1, 2, 3, 4], [1, 1, 1, 1])
        assert result.n_effective == 3
        assert (result.r_plus, result.r_minus) == (6.0, 0.0)

    def test_swapping_swaps_rank_sums(self, one_loss):
        a, b = one_loss
        forward = vtidstats.wilcoxon_signed_rank(a, b)
        backward = vtidstats.wilcoxon_signed_rank(b, a)
        assert (backward.r_plus, backward.r_minus) == (forward.r_minus,
                                                       forward.r_plus)
        assert backward.p_value == pytest.approx(forward.p_value)

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        a = rng.integers(0, 50, size=15).astype(float)
        b = rng.integers(0, 50, size=15).astype(float)
        for method in ("exact", "normal"):
            plain = vtidstats.wilcoxon_signed_rank(a, b, method)
            scaled = vtidstats.wilcoxon_signed_rank(a * 4, b * 4, method)
            assert plain == scaled

    def test_undefined(self, caplog):
        with caplog.at_level(logging.WARNING):
            result = vtidstats.wilcoxon_signed_rank([0.5, 0.7], [0.5, 0.7])
        assert result.undefined
        assert result.n_effective == 0
        assert result.p_value == 1.0
        assert "undefined" in caplog.text

    def test_exact_matches_enumeration(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            n = int(rng.integers(2, 11))
            # small integers so that tied magnitudes occur
            diffs = rng.integers(-4, 5, size=n).astype(float)
            diffs[diffs == 0] = 1.0
            result = vtidstats.wilcoxon_signed_rank(diffs, np.zeros(n),
                                                    "exact")
            assert result.p_value == pytest.approx(brute_force_p(diffs),
                                                   abs=1e-12)

    def test_normal_close_to_exact(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a = rng.normal(size=20)
            b = a + rng.normal(0.3, 1.0, size=20)
            exact = vtidstats.wilcoxon_signed_rank(a, b, "exact")
            normal = vtidstats.wilcoxon_signed_rank(a, b, "normal")
            assert abs(exact.p_value - normal.p_value) < 0.01 + 0.1 * min(
                exact.p_value, normal.p_value)

    @pytest.mark.parametrize("a,b,method", [
        ([1.0], [2.0], "auto"),
        ([1.0, 2.0], [1.0], "auto"),
        ([1.0, 2.0], [2.0, 1.0], "bogus"),
    ])
    def test_bad_input(self, a, b, method):
        with pytest.raises(ValueError):
            vtidstats.wilcoxon_signed_rank(a, b, method)
