"""Classification metrics: accuracy, Cohen's kappa, macro-F1, one-vs-rest macro-AUC."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass
class Metrics:
    accuracy: float
    kappa: float
    macro_f1: float
    macro_auc: float
    confusion: list[list[int]]

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_matrix(labels, preds, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(preds)), 1)
    return cm


def accuracy(cm: np.ndarray) -> float:
    return float(np.trace(cm) / cm.sum())


def cohen_kappa(cm: np.ndarray) -> float:
    n = cm.sum()
    p_o = np.trace(cm) / n
    p_e = float((cm.sum(axis=1) * cm.sum(axis=0)).sum()) / float(n * n)
    if p_e == 1.0:
        # a single class on both sides: agreement is total but chance-level
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def macro_f1(cm: np.ndarray) -> float:
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)
    return float(f1.mean())


def binary_auc(scores, positive) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties count half)."""
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def macro_auc(labels, scores: np.ndarray) -> float:
    """Mean one-vs-rest AUC over classes that have both positives and negatives."""
    labels = np.asarray(labels)
    aucs = [binary_auc(scores[:, k], labels == k) for k in range(scores.shape[1])]
    aucs = [a for a in aucs if not np.isnan(a)]
    return float(np.mean(aucs)) if aucs else float("nan")


def compute_metrics(labels, scores: np.ndarray) -> Metrics:
    """Metrics for class-probability ``scores[n, K]``; predictions are the argmax."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot score an empty partition")
    preds = scores.argmax(axis=1)
    cm = confusion_matrix(labels, preds, scores.shape[1])
    return Metrics(
        accuracy=accuracy(cm),
        kappa=cohen_kappa(cm),
        macro_f1=macro_f1(cm),
        macro_auc=macro_auc(labels, scores),
        confusion=cm.tolist(),
    )
