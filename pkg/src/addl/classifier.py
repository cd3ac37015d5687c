"""Inference and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from addl.model import AddlModel


@dataclass(frozen=True)
class SoftLabels:
    scores: np.ndarray  # c x M


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def _check_dim(model: AddlModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != model.dim:
        raise ValueError(f"test data has dim {X.shape[0]}, model expects {model.dim}")
    return X


def soft_labels(model: AddlModel, X_test) -> SoftLabels:
    """Scores ``W P x`` for every column of ``X_test``."""
    X = _check_dim(model, X_test)
    return SoftLabels(model.W_full @ (model.P_full @ X))


def predict(model: AddlModel, X_test) -> np.ndarray:
    """Hard labels: row of the largest soft-label score (ties go to the lower class)."""
    return np.argmax(soft_labels(model, X_test).scores, axis=0)


def residuals(model: AddlModel, X_test) -> np.ndarray:
    """``||x - D_l P_l x||`` for every class ``l`` (rows) and sample (columns)."""
    X = _check_dim(model, X_test)
    return np.vstack([np.linalg.norm(X - D @ (P @ X), axis=0)
                      for D, P in zip(model.D, model.P)])


def predict_residual(model: AddlModel, X_test) -> np.ndarray:
    """Class whose sub-dictionary pair reconstructs the sample best.

    Used for models trained without the classifier terms (``lam = 0``).
    """
    return np.argmin(residuals(model, X_test), axis=0)


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size == 0:
        raise ValueError("empty label vectors")
    return float(np.mean(pred == truth))


def per_class_accuracy(pred, truth, c: int) -> list:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    return [float(np.mean(pred[truth == l] == l)) if np.any(truth == l) else float("nan")
            for l in range(c)]


def roc_one_vs_rest(scores: SoftLabels, truth, positive_class: int) -> RocCurve:
    """ROC for ``positive_class`` against the rest, scored by its soft label.

    A sample is called positive when its score is ``>=`` the threshold.
    Thresholds run from ``+inf`` through every distinct score to ``-inf``,
    so the curve starts at (0, 0) and ends at (1, 1).  AUC is the
    trapezoidal area.
    """
    S = np.asarray(scores.scores)
    truth = np.asarray(truth)
    if not 0 <= positive_class < S.shape[0]:
        raise ValueError(f"positive_class {positive_class} out of range")
    s = S[positive_class]
    pos = truth == positive_class
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs at least one positive and one negative sample")
    distinct = np.unique(s)[::-1]
    thresholds = np.concatenate(([np.inf], distinct, [-np.inf]))
    # counts of samples with score >= each distinct threshold
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp_cum = np.cumsum(pos[order])
    fp_cum = np.cumsum(~pos[order])
    last = np.searchsorted(-s_sorted, -distinct, side="right") - 1
    tpr = np.concatenate(([0.0], tp_cum[last] / n_pos, [1.0]))
    fpr = np.concatenate(([0.0], fp_cum[last] / n_neg, [1.0]))
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=auc)
