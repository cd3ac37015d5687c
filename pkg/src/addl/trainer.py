"""Alternating closed-form training.

One iteration updates, in order, the codes ``S``, the row weights
``Lambda``, the projections ``P``, the classifier ``W`` and the dictionary
``D``.  Every update is independent across classes, so the per-class
solves may run on a thread pool; no reduction crosses classes, hence the
serial and parallel paths give identical bits.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from addl.dataset import LabeledDataset, one_hot, partition
from addl.model import (AddlModel, Codes, Hyperparams, ObjectiveBreakdown,
                        init_model, l21_norm, objective)

TRACE_HEADER = ("iter", "total", "recon", "incoh", "code_fit", "code_null",
                "sparsity", "label_fit", "label_null", "dP_fro", "millis")


class TrainingError(RuntimeError):
    """Numerical failure during training."""


class ProjectionUndefinedError(TrainingError):
    pass


class DivergenceError(TrainingError):
    def __init__(self, iteration: int, block: str):
        super().__init__(f"non-finite values in {block} at iteration {iteration}")
        self.iteration = iteration
        self.block = block


@dataclass
class TrainOptions:
    record_trace: bool = True
    parallel_classes: bool = False
    max_workers: int | None = None


@dataclass
class IterationRecord:
    iteration: int
    objective: ObjectiveBreakdown
    dP_fro: float
    millis: float
    block_millis: dict


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    stop_reason: str = "max_iter"
    iterations: int = 0
    final_codes: Codes | None = None

    @property
    def totals(self) -> np.ndarray:
        return np.array([r.objective.total for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for r in self.records:
                w.writerow([r.iteration, *(repr(v) for v in r.objective.as_row()),
                            repr(r.dP_fro), f"{r.millis:.3f}"])


# ---------------------------------------------------------------------------
# linear algebra

def _spd_factor(A: np.ndarray, what: str):
    try:
        return sla.cho_factor(A, lower=False, check_finite=False)
    except np.linalg.LinAlgError:
        raise TrainingError(f"{what}: matrix is not positive definite") from None


def _right_solve(B: np.ndarray, factor) -> np.ndarray:
    """``B @ inv(A)`` for a Cholesky-factored symmetric ``A``."""
    return sla.cho_solve(factor, B.T, check_finite=False).T


def _psd_pinv_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Minimum-norm solution of ``A X = B`` for symmetric PSD ``A``."""
    w, V = np.linalg.eigh(A)
    cut = max(A.shape[0] * np.finfo(float).eps * max(w.max(initial=0.0), 0.0), 0.0)
    inv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
    return V @ (inv[:, None] * (V.T @ B))


class _Runner:
    """Serial or thread-pooled map over class indices."""

    def __init__(self, parallel: bool, max_workers=None):
        self.pool = ThreadPoolExecutor(max_workers) if parallel else None

    def map(self, fn, c: int) -> list:
        if self.pool is None:
            return [fn(l) for l in range(c)]
        return list(self.pool.map(fn, range(c)))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


_SERIAL = _Runner(False)


# ---------------------------------------------------------------------------
# block updates

def update_codes(model: AddlModel, codes: Codes, part, runner=_SERIAL) -> Codes:
    """Closed-form code update with ``Lambda`` frozen.

    Solves, per class,

        (D_l' D_l + a * sum_{j != l} D_j' D_j + tau I + tau Lambda_l) S_l
            = tau P_l X_l + D_l' X_l

    where ``a = alpha`` when ``hyper.couple_codes`` and ``0`` otherwise.
    The coupled form is the exact minimiser of the objective in ``S_l``
    because ``S_l`` also appears in the incoherence terms of the other
    classes (``||D_j S-bar_j||``).
    """
    hp = model.hyper
    k = model.atoms_per_class
    grams = [D.T @ D for D in model.D]
    a = hp.alpha if hp.couple_codes else 0.0
    all_grams = sum(grams) if a else None

    def solve(l):
        Xl = part.block(l)
        A = grams[l] + hp.tau * np.diag(1.0 + codes.lam_diag[l])
        if a:
            A = A + a * (all_grams - grams[l])
        rhs = hp.tau * (model.P[l] @ Xl) + model.D[l].T @ Xl
        if Xl.shape[1] == 0:
            return np.zeros((k, 0))
        return sla.cho_solve(_spd_factor(A, f"code update (class {l})"), rhs,
                             check_finite=False)

    return Codes(S=runner.map(solve, model.class_count),
                 lam_diag=[d.copy() for d in codes.lam_diag])


def update_row_weights(codes: Codes, eps_row: float) -> Codes:
    """IRLS weights ``Lambda_ii = 1 / (2 max(||row i of S_l||, eps_row))``."""
    lam = [1.0 / (2.0 * np.maximum(np.linalg.norm(S, axis=1), eps_row))
           for S in codes.S]
    return Codes(S=[s.copy() for s in codes.S], lam_diag=lam)


def gram_factor(part, gamma: float):
    """Cholesky factor of ``X X' + gamma I`` (shared by every class)."""
    X = part.features
    return _spd_factor(X @ X.T + gamma * np.eye(X.shape[0]), "X X' + gamma I")


def update_projection(model: AddlModel, codes: Codes, part, H,
                      factor=None, runner=_SERIAL) -> list:
    """Closed-form projection update.

        P_l = (tau I + lam W_l'W_l)^-1 (tau S_l X_l' + lam W_l' H_l X_l')
              (X X' + gamma I)^-1

    ``X_l X_l' + Xbar_l Xbar_l' = X X'`` for every class, so the right
    factor is shared.  When ``tau == 0`` the left factor ``lam W_l'W_l`` is
    rank deficient as soon as ``k`` exceeds ``rank(W_l)``; the
    minimum-norm solution is used then.
    """
    hp = model.hyper
    if hp.tau == 0 and hp.lam == 0:
        raise ProjectionUndefinedError(
            "projection update undefined: tau and lam are both zero")
    if factor is None:
        factor = gram_factor(part, hp.gamma)
    k = model.atoms_per_class

    def solve(l):
        Xl = part.block(l)
        Wl = model.W[l]
        left = hp.tau * np.eye(k) + hp.lam * (Wl.T @ Wl)
        rhs = hp.tau * (codes.S[l] @ Xl.T) + hp.lam * (Wl.T @ (H.blocks[l] @ Xl.T))
        if hp.tau > 0:
            Z = sla.cho_solve(_spd_factor(left, "projection left factor"), rhs,
                              check_finite=False)
        else:
            Z = _psd_pinv_solve(left, rhs)
        return _right_solve(Z, factor)

    return runner.map(solve, model.class_count)


def update_classifier(model: AddlModel, part, H, runner=_SERIAL) -> list:
    """Closed-form classifier update.

    With ``A_l = P_l X_l`` and ``B_l = P_l Xbar_l``::

        W_l = H_l A_l' (A_l A_l' + B_l B_l' + gamma I)^-1

    which zeroes the gradient of
    ``||H_l - W_l A_l||^2 + ||W_l B_l||^2 + gamma ||W_l||^2``.
    """
    gamma = model.hyper.gamma
    k = model.atoms_per_class

    def solve(l):
        A = model.P[l] @ part.block(l)
        B = model.P[l] @ part.complement(l)
        M = A @ A.T + B @ B.T + gamma * np.eye(k)
        return _right_solve(H.blocks[l] @ A.T, _spd_factor(M, "classifier system"))

    return runner.map(solve, model.class_count)


def update_dictionary(model: AddlModel, codes: Codes, part, runner=_SERIAL) -> list:
    """``D_l = X_l S_l' (S_l S_l' + alpha Sbar_l Sbar_l' + gamma I)^-1``.

    With ``hyper.project_atoms`` any atom longer than 1 is rescaled to
    unit length afterwards.
    """
    hp = model.hyper
    k = model.atoms_per_class

    def solve(l):
        Sl, Sb = codes.S[l], codes.complement(l)
        M = Sl @ Sl.T + hp.alpha * (Sb @ Sb.T) + hp.gamma * np.eye(k)
        Dl = _right_solve(part.block(l) @ Sl.T, _spd_factor(M, "dictionary system"))
        if hp.project_atoms:
            Dl = Dl / np.maximum(1.0, np.linalg.norm(Dl, axis=0))
        return Dl

    return runner.map(solve, model.class_count)


def code_objective(model: AddlModel, codes: Codes, part) -> float:
    """The function the code update descends.

    ``sum_l ||X_l - D_l S_l||^2 + tau ||P_l X_l - S_l||^2 + tau ||S_l||_{2,1}``
    plus ``alpha * sum_l ||D_l Sbar_l||^2`` when the code update is coupled.
    """
    hp = model.hyper
    total = 0.0
    for l in range(model.class_count):
        Xl, Sl = part.block(l), codes.S[l]
        total += np.sum((Xl - model.D[l] @ Sl) ** 2)
        total += hp.tau * (np.sum((model.P[l] @ Xl - Sl) ** 2) + l21_norm(Sl))
        if hp.couple_codes and hp.alpha:
            total += hp.alpha * np.sum((model.D[l] @ codes.complement(l)) ** 2)
    return float(total)


# ---------------------------------------------------------------------------
# training loop

def _check_finite(blocks, iteration: int, name: str):
    for b in blocks:
        if not np.all(np.isfinite(b)):
            raise DivergenceError(iteration, name)


def train(ds: LabeledDataset, hyper: Hyperparams, opts: TrainOptions | None = None,
          init: tuple | None = None):
    """Fit a model by alternating block updates.

    Stops when the relative change of the objective drops below
    ``hyper.tol_obj``, when ``||P(t) - P(t-1)||_F < hyper.tol_p`` or after
    ``hyper.max_iter`` iterations.

    Parameters
    ----------
    ds : LabeledDataset
        Training data.
    hyper : Hyperparams
    opts : TrainOptions, optional
    init : (AddlModel, Codes), optional
        Starting point; defaults to :func:`~addl.model.init_model`.

    Returns
    -------
    model : AddlModel
    trace : TrainTrace
    """
    opts = opts or TrainOptions()
    part = partition(ds)
    H = one_hot(ds)
    c = ds.class_count
    if init is None:
        model, codes = init_model(c, ds.dim, hyper, class_sizes=ds.class_counts())
    else:
        model, codes = init
        model = model.replace(hyper=hyper)
        if model.dim != ds.dim or model.class_count != c:
            raise ValueError("initial model does not match the dataset")
    trace = TrainTrace()
    if hyper.max_iter == 0:
        return model.replace(iterations=0, stop_reason="max_iter"), trace

    runner = _Runner(opts.parallel_classes, opts.max_workers)
    try:
        factor = gram_factor(part, hyper.gamma)
        prev_total = None
        for t in range(1, hyper.max_iter + 1):
            t0 = time.perf_counter()

            codes = update_codes(model, codes, part, runner)
            _check_finite(codes.S, t, "S")
            t1 = time.perf_counter()
            codes = update_row_weights(codes, hyper.eps_row)
            t2 = time.perf_counter()

            P_old = model.P_full
            P = update_projection(model, codes, part, H, factor, runner)
            _check_finite(P, t, "P")
            model = model.replace(P=P)
            t3 = time.perf_counter()

            W = update_classifier(model, part, H, runner)
            _check_finite(W, t, "W")
            model = model.replace(W=W)
            t4 = time.perf_counter()

            D = update_dictionary(model, codes, part, runner)
            _check_finite(D, t, "D")
            model = model.replace(D=D)
            t5 = time.perf_counter()

            ticks = {"S": t1 - t0, "Lambda": t2 - t1, "P": t3 - t2,
                     "W": t4 - t3, "D": t5 - t4}
            obj = objective(model, codes, part, H)
            dP = float(np.linalg.norm(model.P_full - P_old))
            if not np.isfinite(obj.total):
                raise DivergenceError(t, "objective")
            if opts.record_trace:
                trace.records.append(IterationRecord(
                    iteration=t, objective=obj, dP_fro=dP,
                    millis=1e3 * (time.perf_counter() - t0),
                    block_millis={k: 1e3 * v for k, v in ticks.items()}))
            trace.iterations = t

            if prev_total is not None:
                scale = abs(prev_total) if prev_total != 0 else 1.0
                if abs(prev_total - obj.total) / scale < hyper.tol_obj:
                    trace.stop_reason = "obj_tol"
                    break
            if dP < hyper.tol_p:
                trace.stop_reason = "p_tol"
                break
            prev_total = obj.total
    finally:
        runner.close()
    model = model.replace(iterations=trace.iterations, stop_reason=trace.stop_reason)
    trace.final_codes = codes
    return model, trace
