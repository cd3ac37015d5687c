"""Train/evaluate pipelines shared by the CLI and the test-suite.

Preprocessing (unit-norm scaling, then PCA fitted on the training split)
is recorded in ``model.preprocess`` so that evaluation replays exactly
the transform the model was trained under.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from addl import classifier as clf
from addl.dataset import (LabeledDataset, PcaTransform, add_gaussian_noise,
                          normalize_unit_l2, pca_fit)
from addl.diagnostics import mutual_coherence
from addl.model import AddlModel, Hyperparams
from addl.trainer import TrainOptions, train

ABLATIONS = (
    ("full", {}),
    ("alpha0", {"alpha": 0.0}),
    ("tau0", {"tau": 0.0}),
    ("lambda0", {"lam": 0.0}),
)


def fit_preprocess(ds: LabeledDataset, unit_norm: bool = False,
                   pca_energy: float | None = None):
    """Fit the preprocessing chain on training data.

    Returns the transformed dataset and a JSON-ready description.
    """
    prep = {"input_dim": ds.dim, "unit_norm": bool(unit_norm), "pca": None}
    if unit_norm:
        ds = normalize_unit_l2(ds)
    if pca_energy is not None:
        pca = pca_fit(ds, pca_energy)
        ds = pca.apply(ds)
        prep["pca"] = {
            "energy": float(pca_energy),
            "retained_energy": pca.retained_energy,
            "mean": pca.mean.tolist(),
            "basis": pca.basis.tolist(),
        }
    return ds, prep


def apply_preprocess(ds: LabeledDataset, prep: dict) -> LabeledDataset:
    if not prep:
        return ds
    if ds.dim != prep["input_dim"]:
        raise ValueError(
            f"dataset has dim {ds.dim} but the model was trained on dim {prep['input_dim']}")
    if prep["unit_norm"]:
        ds = normalize_unit_l2(ds)
    if prep["pca"] is not None:
        p = prep["pca"]
        pca = PcaTransform(mean=np.asarray(p["mean"]), basis=np.asarray(p["basis"]),
                           retained_energy=p["retained_energy"])
        ds = pca.apply(ds)
    return ds


def fit(train_ds: LabeledDataset, hyper: Hyperparams, unit_norm: bool = False,
        pca_energy: float | None = None, opts: TrainOptions | None = None):
    """Preprocess, train, and attach the preprocessing to the model."""
    ds, prep = fit_preprocess(train_ds, unit_norm, pca_energy)
    model, trace = train(ds, hyper, opts)
    return model.replace(preprocess=prep), trace


@dataclass
class Evaluation:
    accuracy: float
    per_class: list
    predictions: np.ndarray
    truth: np.ndarray
    scores: np.ndarray
    rule: str


def evaluate(model: AddlModel, test_ds: LabeledDataset, rule: str | None = None) -> Evaluation:
    """Classify ``test_ds`` (raw features; the stored preprocessing is replayed).

    ``rule`` is ``"soft_label"`` or ``"residual"``; by default models
    trained with ``lam == 0`` use the residual rule since their classifier
    is never fitted.
    """
    if test_ds.class_count > model.class_count:
        raise ValueError(
            f"test data has {test_ds.class_count} classes, model has {model.class_count}")
    ds = apply_preprocess(test_ds, model.preprocess)
    if ds.dim != model.dim:
        raise ValueError(f"dataset has dim {ds.dim} but the model expects dim {model.dim}")
    if rule is None:
        rule = "residual" if model.hyper.lam == 0 else "soft_label"
    scores = clf.soft_labels(model, ds.features).scores
    if rule == "soft_label":
        pred = np.argmax(scores, axis=0)
    elif rule == "residual":
        pred = clf.predict_residual(model, ds.features)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return Evaluation(
        accuracy=clf.accuracy(pred, ds.labels),
        per_class=clf.per_class_accuracy(pred, ds.labels, model.class_count),
        predictions=pred, truth=np.asarray(ds.labels), scores=scores, rule=rule,
    )


def ablation(train_ds, test_ds, hyper: Hyperparams, unit_norm=False, pca_energy=None,
             opts=None) -> list:
    """Train the full model and the three single-term ablations on the same data and seed."""
    rows = []
    for name, change in ABLATIONS:
        hp = hyper.replace(**change)
        model, trace = fit(train_ds, hp, unit_norm, pca_energy, opts)
        ev = evaluate(model, test_ds)
        rows.append({
            "variant": name, "alpha": hp.alpha, "tau": hp.tau, "lambda": hp.lam,
            "classifier": ev.rule, "accuracy": ev.accuracy,
            "mu": mutual_coherence(model).mu, "iterations": trace.iterations,
            "stop_reason": trace.stop_reason,
        })
    return rows


def noise_sweep(train_ds, test_ds, hyper: Hyperparams, variances, seed: int,
                unit_norm=False, pca_energy=None, opts=None) -> list:
    """Accuracy after corrupting both splits with Gaussian noise of each variance."""
    rows = []
    for v in variances:
        tr = add_gaussian_noise(train_ds, v, seed, part=0)
        te = add_gaussian_noise(test_ds, v, seed, part=1)
        model, _ = fit(tr, hyper, unit_norm, pca_energy, opts)
        rows.append({"variance": float(v), "accuracy": evaluate(model, te).accuracy})
    return rows
