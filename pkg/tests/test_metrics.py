import itertools

import numpy as np
import pytest
from sklearn.metrics import cohen_kappa_score, f1_score, roc_auc_score

from migraph.metrics import (
    accuracy,
    binary_auc,
    cohen_kappa,
    compute_metrics,
    confusion_matrix,
    macro_auc,
    macro_f1,
)


def one_hot_scores(preds, k=4):
    s = np.full((len(preds), k), 0.1)
    s[np.arange(len(preds)), preds] = 0.7
    return s


def pair_auc(pos, neg):
    wins = 0.0
    for p, n in itertools.product(pos, neg):
        wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


class TestConfusionBased:
    def test_perfect(self):
        labels = np.repeat(np.arange(4), 5)
        m = compute_metrics(labels, one_hot_scores(labels))
        assert m.accuracy == 1.0 and m.kappa == 1.0 and m.macro_f1 == 1.0
        assert m.confusion == np.diag([5, 5, 5, 5]).tolist()

    def test_constant_prediction_balanced(self):
        labels = np.repeat(np.arange(4), 5)
        m = compute_metrics(labels, one_hot_scores(np.zeros(20, dtype=int)))
        assert m.accuracy == pytest.approx(0.25)
        assert m.kappa == pytest.approx(0.0, abs=1e-12)

    def test_kappa_diagonal_iff_one(self):
        assert cohen_kappa(np.diag([3, 1, 2])) == 1.0
        assert cohen_kappa(np.array([[3, 1], [0, 2]])) < 1.0

    def test_single_class_both_sides(self):
        assert cohen_kappa(np.array([[4, 0], [0, 0]])) == 1.0

    def test_hand_kappa(self):
        cm = np.array([[20, 5], [10, 15]])
        p_o = 35 / 50
        p_e = (25 * 30 + 25 * 20) / 2500
        assert cohen_kappa(cm) == pytest.approx((p_o - p_e) / (1 - p_e))

    def test_f1_absent_class_counts_zero(self):
        cm = confusion_matrix([0, 0, 1, 1], [0, 0, 1, 1], 3)
        assert macro_f1(cm) == pytest.approx(2 / 3)

    def test_sklearn_cross_check(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 4, 200)
        preds = np.where(rng.uniform(size=200) < 0.6, labels, rng.integers(0, 4, 200))
        cm = confusion_matrix(labels, preds, 4)
        assert accuracy(cm) == pytest.approx((labels == preds).mean())
        assert cohen_kappa(cm) == pytest.approx(cohen_kappa_score(labels, preds))
        assert macro_f1(cm) == pytest.approx(f1_score(labels, preds, average="macro"))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 4, 80)
        scores = rng.dirichlet(np.ones(4), size=80)
        perm = np.array([2, 0, 3, 1])  # class c becomes perm[c]
        base = compute_metrics(labels, scores)
        relabel = np.empty_like(scores)
        relabel[:, perm] = scores
        moved = compute_metrics(perm[labels], relabel)
        for key in ("accuracy", "kappa", "macro_f1", "macro_auc"):
            assert getattr(moved, key) == pytest.approx(getattr(base, key))


class TestAuc:
    def test_scripted_six_samples(self):
        positive = np.array([1, 1, 1, 0, 0, 0], dtype=bool)
        scores = np.array([0.9, 0.8, 0.4, 0.5, 0.3, 0.2])
        enumerated = pair_auc(scores[positive], scores[~positive])
        assert enumerated == pytest.approx(8 / 9)
        assert binary_auc(scores, positive) == pytest.approx(8 / 9)

    def test_ties_count_half(self):
        assert binary_auc([0.5, 0.5], [True, False]) == 0.5

    def test_single_class_undefined(self):
        assert np.isnan(binary_auc([0.1, 0.2], [True, True]))

    def test_ovr_macro_matches_sklearn(self):
        rng = np.random.default_rng(2)
        labels = np.tile(np.arange(4), 30)
        scores = rng.dirichlet(np.ones(4), size=120)
        scores[np.arange(120), labels] += 0.3
        scores /= scores.sum(axis=1, keepdims=True)
        assert macro_auc(labels, scores) == pytest.approx(roc_auc_score(labels, scores, multi_class="ovr"))

    def test_matches_pair_enumeration_random(self):
        rng = np.random.default_rng(3)
        scores = np.round(rng.uniform(size=30), 1)  # rounding forces ties
        positive = rng.uniform(size=30) < 0.4
        assert binary_auc(scores, positive) == pytest.approx(pair_auc(scores[positive], scores[~positive]))


def test_empty_partition_rejected():
    with pytest.raises(ValueError):
        compute_metrics(np.array([], dtype=int), np.zeros((0, 4)))
