import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from addl.classifier import (SoftLabels, accuracy, per_class_accuracy, predict,
                             predict_residual, residuals, roc_one_vs_rest, soft_labels)
from addl.model import AddlModel, Hyperparams


def identity_model(n=3):
    """W P x = x: class l keeps coordinate l only."""
    eye = np.eye(n)
    P = [np.diag(eye[l]) for l in range(n)]
    W = [np.outer(eye[l], eye[l]) for l in range(n)]
    return AddlModel(D=[eye] * n, P=P, W=W, hyper=Hyperparams(k=n))


def test_soft_labels_recover_coordinate():
    model = identity_model()
    X = np.array([[0.1, 0.9, 0.0], [0.8, 0.05, 0.0], [0.1, 0.05, 1.0]])
    np.testing.assert_allclose(soft_labels(model, X).scores, X)
    assert predict(model, X).tolist() == [1, 0, 2]


def test_predict_ties_go_low():
    model = identity_model()
    assert predict(model, np.array([[0.5], [0.5], [0.1]])).tolist() == [0]


def test_dim_mismatch():
    with pytest.raises(ValueError, match="dim"):
        soft_labels(identity_model(), np.zeros((4, 2)))


def test_residual_rule():
    # class 0 reconstructs along e0, class 1 along e1
    e = np.eye(2)
    model = AddlModel(D=[e[:, [0]], e[:, [1]]], P=[e[[0]], e[[1]]],
                      W=[np.zeros((2, 1))] * 2, hyper=Hyperparams(k=1))
    X = np.array([[2.0, 0.1], [0.1, 3.0]])
    np.testing.assert_allclose(residuals(model, X), [[0.1, 3.0], [2.0, 0.1]])
    assert predict_residual(model, X).tolist() == [0, 1]


def test_accuracy():
    assert accuracy([0, 1, 2, 2], [0, 1, 1, 2]) == 0.75
    assert per_class_accuracy([0, 1, 2, 2], [0, 1, 1, 2], 3) == [1.0, 0.5, 1.0]
    with pytest.raises(ValueError):
        accuracy([0], [0, 1])


def test_roc_perfect_separation():
    roc = roc_one_vs_rest(SoftLabels(np.array([[0.9, 0.8, 0.2, 0.1]])), [0, 0, 1, 1], 0)
    assert roc.auc == 1.0
    assert (roc.fpr[0], roc.tpr[0], roc.fpr[-1], roc.tpr[-1]) == (0, 0, 1, 1)
    assert roc.thresholds[0] == np.inf and roc.thresholds[-1] == -np.inf


def test_roc_needs_both_classes():
    with pytest.raises(ValueError):
        roc_one_vs_rest(SoftLabels(np.array([[0.1, 0.2]])), [0, 0], 0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(2, 40), levels=st.integers(2, 10))
def test_roc_auc_matches_rank_statistic(seed, m, levels):
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, 2, m)
    truth[:2] = [0, 1]
    s = rng.integers(0, levels, m).astype(float)  # ties on purpose
    roc = roc_one_vs_rest(SoftLabels(s[None, :]), truth, 0)
    pos, neg = s[truth == 0], s[truth != 0]
    diff = pos[:, None] - neg[None, :]
    mw = (np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / diff.size
    assert roc.auc == pytest.approx(mw, abs=1e-12)
    assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
