"""Detection/localization metrics: ROC AUC, balanced-accuracy calibration, MCC.

Conventions:
- a prediction is positive when score >= threshold;
- AUC follows the Mann-Whitney pair statistic with ties counted 0.5;
- accuracy is the macro (balanced) average of per-class accuracies;
- undefined MCC (zero denominator) is reported as 0 and counted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DataError


def _validate_binary(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError("scores/labels must be 1-D arrays of equal length")
    if not np.isfinite(scores).all():
        raise DataError("scores must be finite")
    if labels.all() or not labels.any():
        raise DataError("both classes must be present")
    return scores, labels


def auc_score(scores, labels) -> float:
    """P(score_pos > score_neg) with ties counted 1/2, via midranks."""
    scores, labels = _validate_binary(scores, labels)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = rankdata(scores)  # average method handles ties
    r_pos = ranks[labels].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def balanced_accuracy_at(scores, labels, threshold: float) -> float:
    """Mean of per-class accuracies when predicting positive at score >= threshold."""
    scores, labels = _validate_binary(scores, labels)
    pred = scores >= threshold
    tpr = (pred & labels).sum() / labels.sum()
    tnr = (~pred & ~labels).sum() / (~labels).sum()
    return float(0.5 * (tpr + tnr))


def calibrate_threshold(scores, labels) -> tuple[float, float]:
    """Threshold maximizing balanced accuracy; smallest maximizer wins ties.

    Candidates are the midpoints between consecutive distinct scores plus two
    sentinels (below the minimum and above the maximum) so the all-positive
    and all-negative decisions are reachable.
    """
    scores, labels = _validate_binary(scores, labels)
    uniq = np.unique(scores)
    candidates = np.concatenate(([uniq[0] - 1.0], (uniq[:-1] + uniq[1:]) / 2.0, [uniq[-1] + 1.0]))
    best_thr = float(candidates[0])
    best_acc = -1.0
    for thr in candidates:
        acc = balanced_accuracy_at(scores, labels, float(thr))
        if acc > best_acc + 1e-12:
            best_acc = acc
            best_thr = float(thr)
    return best_thr, best_acc


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def confusion_counts(pred, truth) -> ConfusionCounts:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise DataError(f"prediction/truth shape mismatch: {pred.shape} vs {truth.shape}")
    return ConfusionCounts(
        tp=int((pred & truth).sum()),
        fp=int((pred & ~truth).sum()),
        tn=int((~pred & ~truth).sum()),
        fn=int((~pred & truth).sum()),
    )


def mcc(counts: ConfusionCounts) -> tuple[float, bool]:
    """Matthews correlation in [-1, 1]; (0, True) when the denominator vanishes."""
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0, True
    num = tp * tn - fp * fn
    return float(num / math.sqrt(denom)), False


def mcc_from_masks(pred_mask, truth_mask) -> tuple[float, bool]:
    return mcc(confusion_counts(pred_mask, truth_mask))
