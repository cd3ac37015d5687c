"""Model state, hyperparameters, the training objective and the model bundle.

The model is held per class: ``D_l`` (``n x k``) reconstructs class ``l``,
``P_l`` (``k x n``) extracts its codes and ``W_l`` (``c x k``) maps codes to
soft labels.  The concatenations are ``D = [D_1 .. D_c]`` (``n x K``),
``P = [P_1; ..; P_c]`` (``K x n``) and ``W = [W_1 .. W_c]`` (``c x K``).
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from addl._rng import stream

BUNDLE_MAGIC = b"ADDLM1\0\0"
BUNDLE_VERSION = 1


class BundleError(ValueError):
    """Raised when a model bundle cannot be read."""


@dataclass(frozen=True)
class Hyperparams:
    """Training hyperparameters.

    ``alpha`` weights the incoherence term, ``tau`` the code-extraction and
    row-sparsity terms and ``lam`` the classifier terms.  ``gamma`` is the
    ridge added to the projection, classifier and dictionary solves.

    ``couple_codes`` keeps the incoherence term in the code update (the
    exact block minimiser); with ``False`` the code update ignores it, which
    coincides with the exact update only when ``alpha == 0``.
    """

    alpha: float = 0.1
    tau: float = 0.05
    lam: float = 0.001
    gamma: float = 1e-4
    k: int = 5
    max_iter: int = 50
    tol_obj: float = 1e-3
    tol_p: float = 1e-3
    eps_row: float = 1e-8
    project_atoms: bool = False
    couple_codes: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha", "tau", "lam"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if int(self.k) < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if int(self.max_iter) < 0:
            raise ValueError("max_iter must be >= 0")
        for name in ("tol_obj", "tol_p", "eps_row"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if int(self.seed) < 0:
            raise ValueError("seed must be >= 0")

    def replace(self, **changes) -> "Hyperparams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class AddlModel:
    D: tuple
    P: tuple
    W: tuple
    hyper: Hyperparams
    # bookkeeping carried in the bundle manifest
    iterations: int = 0
    stop_reason: str = "init"
    preprocess: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        D = tuple(np.array(b, dtype=np.float64) for b in self.D)
        P = tuple(np.array(b, dtype=np.float64) for b in self.P)
        W = tuple(np.array(b, dtype=np.float64) for b in self.W)
        c = len(D)
        if not (len(P) == len(W) == c) or c == 0:
            raise ValueError("D, P and W must hold the same non-zero number of blocks")
        n, k = D[0].shape
        for l in range(c):
            if D[l].shape != (n, k) or P[l].shape != (k, n) or W[l].shape != (c, k):
                raise ValueError(f"inconsistent block shapes for class {l}")
        for b in D + P + W:
            b.setflags(write=False)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "W", W)

    @property
    def class_count(self) -> int:
        return len(self.D)

    @property
    def dim(self) -> int:
        return self.D[0].shape[0]

    @property
    def atoms_per_class(self) -> int:
        return self.D[0].shape[1]

    @property
    def D_full(self) -> np.ndarray:
        return np.hstack(self.D)

    @property
    def P_full(self) -> np.ndarray:
        return np.vstack(self.P)

    @property
    def W_full(self) -> np.ndarray:
        return np.hstack(self.W)

    def replace(self, **changes) -> "AddlModel":
        return dataclasses.replace(self, **changes)

    def blocks_equal(self, other: "AddlModel") -> bool:
        """Bit-exact comparison of every block."""
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.D + self.P + self.W, other.D + other.P + other.W)
        ) and self.class_count == other.class_count


@dataclass
class Codes:
    """Per-class codes ``S_l`` (``k x N_l``) and IRLS row weights.

    ``lam_diag[l]`` is the diagonal of ``Lambda_l``.
    """

    S: list
    lam_diag: list

    def complement(self, l: int) -> np.ndarray:
        """``S-bar_l``: every other class's codes side by side."""
        others = [s for j, s in enumerate(self.S) if j != l]
        if not others:
            return np.zeros((self.S[l].shape[0], 0))
        return np.hstack(others)

    def copy(self) -> "Codes":
        return Codes([s.copy() for s in self.S], [d.copy() for d in self.lam_diag])


@dataclass(frozen=True)
class ObjectiveBreakdown:
    recon: float
    incoh: float
    code_fit: float
    code_null: float
    sparsity: float
    label_fit: float
    label_null: float
    total: float

    FIELDS = ("total", "recon", "incoh", "code_fit", "code_null",
              "sparsity", "label_fit", "label_null")

    def as_row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def l21_norm(S: np.ndarray) -> float:
    """Sum of the Euclidean norms of the rows of ``S``."""
    return float(np.linalg.norm(S, axis=1).sum())


def _unit_fro(rng: np.random.Generator, shape) -> np.ndarray:
    M = rng.standard_normal(shape)
    return M / np.linalg.norm(M)


def init_model(c: int, n: int, hyper: Hyperparams, class_sizes=None):
    """Random start: every block i.i.d. normal, scaled to unit Frobenius norm.

    Each block is drawn from its own stream keyed by ``(seed, block, l)``,
    so the initial ``D_l`` does not depend on how many classes precede it.
    Codes start at zero with ``Lambda_l = I``.  ``class_sizes`` sets the
    column counts of the zero codes (empty codes when omitted).

    Returns
    -------
    model : AddlModel
    codes : Codes
    """
    k = int(hyper.k)
    s = int(hyper.seed)
    D = [_unit_fro(stream(s, "init", "D", l), (n, k)) for l in range(c)]
    P = [_unit_fro(stream(s, "init", "P", l), (k, n)) for l in range(c)]
    W = [_unit_fro(stream(s, "init", "W", l), (c, k)) for l in range(c)]
    sizes = list(class_sizes) if class_sizes is not None else [0] * c
    codes = Codes(S=[np.zeros((k, m)) for m in sizes],
                  lam_diag=[np.ones(k) for _ in range(c)])
    return AddlModel(D=D, P=P, W=W, hyper=hyper), codes


def objective(model: AddlModel, codes: Codes, part, H) -> ObjectiveBreakdown:
    """Evaluate every term of the training objective.

    ``part`` is a :class:`~addl.dataset.ClassPartition` and ``H`` a
    :class:`~addl.dataset.LabelMatrix`.  Sparsity uses the true l2,1 norm.
    """
    c = model.class_count
    if part.class_count != c or len(codes.S) != c:
        raise ValueError("class count mismatch between model, codes and data")
    if part.features.shape[0] != model.dim:
        raise ValueError(f"data dim {part.features.shape[0]} != model dim {model.dim}")
    hp = model.hyper
    terms = dict.fromkeys(ObjectiveBreakdown.FIELDS[1:], 0.0)
    for l in range(c):
        Xl, Xb = part.block(l), part.complement(l)
        Sl, Sb = codes.S[l], codes.complement(l)
        if Sl.shape != (model.atoms_per_class, Xl.shape[1]):
            raise ValueError(f"codes for class {l} have shape {Sl.shape}")
        Dl, Pl, Wl = model.D[l], model.P[l], model.W[l]
        PXl, PXb = Pl @ Xl, Pl @ Xb
        terms["recon"] += _sq(Xl - Dl @ Sl)
        terms["incoh"] += _sq(Dl @ Sb)
        terms["code_fit"] += _sq(PXl - Sl)
        terms["code_null"] += _sq(PXb)
        terms["sparsity"] += l21_norm(Sl)
        terms["label_fit"] += _sq(H.blocks[l] - Wl @ PXl)
        terms["label_null"] += _sq(Wl @ PXb)
    total = (terms["recon"] + hp.alpha * terms["incoh"]
             + hp.tau * (terms["code_fit"] + terms["code_null"] + terms["sparsity"])
             + hp.lam * (terms["label_fit"] + terms["label_null"]))
    return ObjectiveBreakdown(total=total, **terms)


def _sq(M: np.ndarray) -> float:
    return float(np.sum(M * M))


# ---------------------------------------------------------------------------
# bundle I/O

def save_model(model: AddlModel, path) -> None:
    """Write the model bundle.

    Layout: magic, u64 manifest length, UTF-8 JSON manifest, then
    ``D_1..D_c, P_1..P_c, W_1..W_c`` as little-endian f64, column-major.
    """
    payload = b"".join(
        np.asarray(b, dtype="<f8").tobytes(order="F")
        for b in model.D + model.P + model.W
    )
    manifest = {
        "format": "ADDLM1",
        "version": BUNDLE_VERSION,
        "c": model.class_count,
        "n": model.dim,
        "k": model.atoms_per_class,
        "hyper": model.hyper.to_dict(),
        "seed": model.hyper.seed,
        "iterations": model.iterations,
        "stop_reason": model.stop_reason,
        "preprocess": model.preprocess,
        "payload_bytes": len(payload),
    }
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BUNDLE_MAGIC)
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        fh.write(payload)


def load_model(path) -> AddlModel:
    raw = Path(path).read_bytes()
    if raw[:8] != BUNDLE_MAGIC:
        raise BundleError("not an ADDL bundle")
    if len(raw) < 16:
        raise BundleError("truncated bundle header")
    (mlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + mlen > len(raw):
        raise BundleError("truncated bundle manifest")
    try:
        man = json.loads(raw[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleError(f"corrupt bundle manifest: {exc}") from None
    if man.get("version") != BUNDLE_VERSION:
        raise BundleError(f"unsupported bundle version {man.get('version')}")
    c, n, k = int(man["c"]), int(man["n"]), int(man["k"])
    expected = 8 * (2 * c * n * k + c * c * k)
    payload = raw[16 + mlen:]
    if man["payload_bytes"] != expected or len(payload) != expected:
        raise BundleError(
            f"payload length mismatch: declared {man['payload_bytes']}, "
            f"expected {expected}, found {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f8")
    pos = 0

    def take(shape):
        nonlocal pos
        size = shape[0] * shape[1]
        block = flat[pos:pos + size].reshape(shape, order="F").astype(np.float64)
        pos += size
        return block

    D = [take((n, k)) for _ in range(c)]
    P = [take((k, n)) for _ in range(c)]
    W = [take((c, k)) for _ in range(c)]
    return AddlModel(D=D, P=P, W=W, hyper=Hyperparams(**man["hyper"]),
                     iterations=int(man["iterations"]),
                     stop_reason=man["stop_reason"],
                     preprocess=man.get("preprocess", {}))
