"""Labeled feature data: I/O, synthetic generation, preprocessing, splits.

Features are stored as an ``n x N`` matrix whose columns are samples.
Labels are 0-based integers in ``{0, ..., c-1}`` and every class must be
represented.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from addl._rng import stream

DATASET_MAGIC = b"ADDLDS1\0"


class DatasetError(ValueError):
    """Raised for malformed datasets or invalid preprocessing requests."""


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with integer class labels.

    Parameters
    ----------
    features : ndarray, shape (n, N)
        One sample per column.
    labels : ndarray of int, shape (N,)
    class_count : int
        Number of classes ``c``; every class in ``0..c-1`` must occur.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64, order="F", copy=True)
        y = np.array(self.labels, dtype=np.int64, copy=True)
        if X.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[1]:
            raise DatasetError(
                f"labels length {y.shape} does not match sample count {X.shape[1]}")
        c = int(self.class_count)
        if c < 1:
            raise DatasetError("class_count must be >= 1")
        if y.size and (y.min() < 0 or y.max() >= c):
            bad = int(y[(y < 0) | (y >= c)][0])
            raise DatasetError(f"label {bad} out of range [0, {c - 1}]")
        counts = np.bincount(y, minlength=c)
        if np.any(counts == 0):
            raise DatasetError(f"empty class {int(np.flatnonzero(counts == 0)[0])}")
        if not np.all(np.isfinite(X)):
            j = int(np.flatnonzero(~np.all(np.isfinite(X), axis=0))[0])
            raise DatasetError(f"non-finite value in sample {j}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_count", c)

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    @property
    def size(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)

    def with_features(self, features: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(features, self.labels, self.class_count)


@dataclass(frozen=True)
class ClassPartition:
    """Column index sets per class, in label order."""

    features: np.ndarray
    indices: tuple
    complements: tuple = field(repr=False)

    @property
    def class_count(self) -> int:
        return len(self.indices)

    def block(self, l: int) -> np.ndarray:
        """Samples of class ``l`` (``n x N_l``)."""
        return self.features[:, self.indices[l]]

    def complement(self, l: int) -> np.ndarray:
        """Samples of every other class (``n x (N - N_l)``)."""
        return self.features[:, self.complements[l]]


@dataclass(frozen=True)
class LabelMatrix:
    """One-hot targets ``H`` (``c x N``) plus the per-class blocks ``H_l``."""

    H: np.ndarray
    blocks: tuple


@dataclass(frozen=True)
class PcaTransform:
    mean: np.ndarray
    basis: np.ndarray
    retained_energy: float

    @property
    def rank(self) -> int:
        return self.basis.shape[0]

    def apply(self, ds: LabeledDataset) -> LabeledDataset:
        if ds.dim != self.mean.shape[0]:
            raise DatasetError(
                f"PCA fitted on dim {self.mean.shape[0]}, dataset has dim {ds.dim}")
        return ds.with_features(self.basis @ (ds.features - self.mean[:, None]))


# ---------------------------------------------------------------------------
# file formats

def load_dataset(path, format: str | None = None) -> LabeledDataset:
    """Read a dataset in ``csv`` or ``bin`` format.

    The format is inferred from the suffix when not given (``.bin`` is
    binary, anything else CSV).
    """
    path = Path(path)
    fmt = format or ("bin" if path.suffix == ".bin" else "csv")
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "bin":
        return _load_bin(path)
    raise DatasetError(f"unknown dataset format {fmt!r}")


def save_dataset(ds: LabeledDataset, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = format or ("bin" if path.suffix == ".bin" else "csv")
    if fmt == "csv":
        # repr() gives the shortest string that round-trips exactly
        lines = []
        for j in range(ds.size):
            vals = ",".join(repr(float(v)) for v in ds.features[:, j])
            lines.append(f"{int(ds.labels[j])},{vals}\n")
        path.write_text("".join(lines), newline="\n")
    elif fmt == "bin":
        n, N = ds.features.shape
        with open(path, "wb") as fh:
            fh.write(DATASET_MAGIC)
            fh.write(struct.pack("<QQQ", n, N, ds.class_count))
            fh.write(ds.labels.astype("<u4").tobytes())
            fh.write(np.asarray(ds.features, dtype="<f8").tobytes(order="F"))
    else:
        raise DatasetError(f"unknown dataset format {fmt!r}")


def _load_csv(path: Path) -> LabeledDataset:
    labels = []
    rows = []
    width = None
    with open(path, "r", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split(",")
            if len(fields) < 2:
                raise DatasetError(f"line {lineno}: expected label and features")
            try:
                lab = int(fields[0])
                vals = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DatasetError(
                    f"line {lineno}: expected {width} features, got {len(vals)}")
            if lab < 0:
                raise DatasetError(f"line {lineno}: negative label {lab}")
            if not all(np.isfinite(vals)):
                raise DatasetError(f"line {lineno}: non-finite value")
            labels.append(lab)
            rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: no samples")
    y = np.asarray(labels, dtype=np.int64)
    c = int(y.max()) + 1
    return LabeledDataset(np.asarray(rows, dtype=np.float64).T, y, c)


def _load_bin(path: Path) -> LabeledDataset:
    raw = path.read_bytes()
    if raw[:8] != DATASET_MAGIC:
        raise DatasetError(f"{path}: not an ADDL dataset (bad magic)")
    if len(raw) < 32:
        raise DatasetError(f"{path}: truncated header")
    n, N, c = struct.unpack_from("<QQQ", raw, 8)
    need = 32 + 4 * N + 8 * n * N
    if len(raw) != need:
        raise DatasetError(
            f"{path}: payload is {len(raw)} bytes, header declares {need}")
    y = np.frombuffer(raw, dtype="<u4", count=N, offset=32).astype(np.int64)
    X = np.frombuffer(raw, dtype="<f8", count=n * N, offset=32 + 4 * N)
    return LabeledDataset(X.reshape((n, N), order="F"), y, c)


# ---------------------------------------------------------------------------
# generation and preprocessing

def synth_generate(c: int, k_true: int, n: int, per_class: int,
                   noise_sigma: float, seed: int, shift: float = 0.0) -> LabeledDataset:
    """Union-of-subspaces data.

    Class ``l`` emits ``B_l z + eps`` with ``B_l`` an ``n x k_true``
    orthonormal basis (see :func:`synth_bases`), ``z ~ N(m, I)`` and
    ``eps ~ N(0, noise_sigma^2 I)``, where ``m = shift / sqrt(k_true) * 1``;
    ``shift`` is therefore the norm of the class mean inside its subspace.
    With ``shift = 0`` every class is symmetric about the origin and no
    linear score separates the classes; a positive shift makes them
    linearly separable.
    """
    if c < 1 or k_true < 1 or n < 1 or per_class < 1:
        raise DatasetError("c, k_true, n and per_class must all be >= 1")
    if k_true > n:
        raise DatasetError(f"k_true={k_true} exceeds ambient dim n={n}")
    if noise_sigma < 0:
        raise DatasetError("noise_sigma must be >= 0")
    blocks = []
    for l, B in enumerate(synth_bases(c, k_true, n, seed)):
        rng = stream(seed, "synth", l, 1)
        Z = rng.standard_normal((k_true, per_class)) + shift / np.sqrt(k_true)
        E = rng.standard_normal((n, per_class))
        blocks.append(B @ Z + noise_sigma * E)
    y = np.repeat(np.arange(c), per_class)
    return LabeledDataset(np.hstack(blocks), y, c)


def synth_bases(c: int, k_true: int, n: int, seed: int) -> list[np.ndarray]:
    """Orthonormal class bases ``B_l`` used by :func:`synth_generate`."""
    out = []
    for l in range(c):
        Q, R = np.linalg.qr(stream(seed, "synth", l, 0).standard_normal((n, k_true)))
        # sign-fix so the basis does not depend on the QR implementation
        out.append(Q * np.where(np.diag(R) < 0, -1.0, 1.0))
    return out


def normalize_unit_l2(ds: LabeledDataset) -> LabeledDataset:
    """Scale every sample to unit Euclidean norm."""
    norms = np.linalg.norm(ds.features, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DatasetError(f"cannot normalize zero sample at column {int(zero[0])}")
    return ds.with_features(ds.features / norms)


def pca_fit(ds: LabeledDataset, energy: float) -> PcaTransform:
    """Fit a PCA keeping the leading components that hold ``energy`` of the variance.

    Eigenvalues are sorted by value (descending) and then by index, so ties
    resolve deterministically.  Eigenvalues below ``n * eps * max`` are
    treated as exact zeros; this makes ``energy=1`` return the numerical
    rank of the centred data.
    """
    if not 0 < energy <= 1:
        raise DatasetError(f"energy must lie in (0, 1], got {energy}")
    if ds.size < 2:
        raise DatasetError("PCA needs at least 2 samples")
    X = ds.features
    mean = X.mean(axis=1)
    Xc = X - mean[:, None]
    evals, evecs = np.linalg.eigh(Xc @ Xc.T)
    top = evals.max(initial=0.0)
    if top <= 0:
        raise DatasetError("degenerate covariance: all samples are equal")
    evals = np.where(evals > X.shape[0] * np.finfo(float).eps * top, evals, 0.0)
    order = np.lexsort((np.arange(evals.size), -evals))
    evals = evals[order]
    evecs = evecs[:, order]
    total = evals.sum()
    r = int(np.searchsorted(np.cumsum(evals), energy * total * (1 - 1e-12))) + 1
    r = min(r, int(np.count_nonzero(evals)))
    basis = evecs[:, :r].T.copy()
    # sign convention: largest-magnitude entry of each component is positive
    pivot = np.abs(basis).argmax(axis=1)
    basis *= np.sign(basis[np.arange(r), pivot])[:, None]
    return PcaTransform(mean=mean, basis=basis,
                        retained_energy=float(evals[:r].sum() / total))


def pca_fit_transform(ds: LabeledDataset, energy: float):
    """Fit :func:`pca_fit` on ``ds`` and return ``(projected, transform)``."""
    pca = pca_fit(ds, energy)
    return pca.apply(ds), pca


def add_gaussian_noise(ds: LabeledDataset, variance: float, seed: int,
                       part: int = 0) -> LabeledDataset:
    """Return ``features + sqrt(variance) * G`` with ``G`` i.i.d. standard normal.

    ``part`` selects an independent noise stream for the same seed (e.g.
    train and test copies).
    """
    if variance < 0:
        raise DatasetError(f"variance must be >= 0, got {variance}")
    if variance == 0:
        return ds
    G = stream(seed, "noise", part).standard_normal(ds.features.shape)
    return ds.with_features(ds.features + np.sqrt(variance) * G)


def split_train_test(ds: LabeledDataset, per_class_train: int, seed: int):
    """Random per-class split; ``per_class_train`` samples of each class go to train.

    Both halves keep the original column order.
    """
    if per_class_train < 1:
        raise DatasetError("per_class_train must be >= 1")
    rng = stream(seed, "split")
    train_idx = []
    for l in range(ds.class_count):
        idx = np.flatnonzero(ds.labels == l)
        if idx.size <= per_class_train:
            raise DatasetError(
                f"class {l} has {idx.size} samples; need more than {per_class_train}")
        train_idx.append(rng.permutation(idx)[:per_class_train])
    train_idx = np.sort(np.concatenate(train_idx))
    mask = np.zeros(ds.size, dtype=bool)
    mask[train_idx] = True
    X, y = ds.features, ds.labels
    return (LabeledDataset(X[:, mask], y[mask], ds.class_count),
            LabeledDataset(X[:, ~mask], y[~mask], ds.class_count))


def one_hot(ds: LabeledDataset) -> LabelMatrix:
    c = ds.class_count
    H = np.zeros((c, ds.size))
    H[ds.labels, np.arange(ds.size)] = 1.0
    blocks = tuple(H[:, ds.labels == l] for l in range(c))
    return LabelMatrix(H=H, blocks=blocks)


def partition(ds: LabeledDataset) -> ClassPartition:
    idx = tuple(np.flatnonzero(ds.labels == l) for l in range(ds.class_count))
    comp = tuple(np.flatnonzero(ds.labels != l) for l in range(ds.class_count))
    return ClassPartition(features=ds.features, indices=idx, complements=comp)
