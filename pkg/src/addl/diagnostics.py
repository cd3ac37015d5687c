"""Dictionary and projection diagnostics: coherence, atom norms, block energy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from addl.dataset import LabeledDataset
from addl.model import AddlModel


class DiagnosticsError(ValueError):
    pass


@dataclass(frozen=True)
class CoherenceReport:
    mu: float
    argmax_pair: tuple  # (class a, atom i, class b, atom j)
    skipped_atoms: int = 0


@dataclass(frozen=True)
class BlockEnergyReport:
    on: np.ndarray
    off: np.ndarray
    ratio: float
    degenerate: bool = False


def atom_norms(model: AddlModel) -> np.ndarray:
    return np.linalg.norm(model.D_full, axis=0)


def mutual_coherence(model: AddlModel) -> CoherenceReport:
    """Largest ``|cos|`` between two atoms of different classes.

    Zero atoms are left out and counted in ``skipped_atoms``.  Among equal
    maxima the lexicographically first ``(a, i, b, j)`` with ``a < b`` wins.
    """
    D = model.D_full
    k = model.atoms_per_class
    owner = np.repeat(np.arange(model.class_count), k)
    norms = np.linalg.norm(D, axis=0)
    alive = norms > 0
    if not alive.any():
        raise DiagnosticsError("every atom is zero")
    U = np.zeros_like(D)
    U[:, alive] = D[:, alive] / norms[alive]
    C = np.abs(U.T @ U)
    # keep pairs with owner(a) < owner(b) and both atoms alive
    valid = (owner[:, None] < owner[None, :]) & alive[:, None] & alive[None, :]
    if not valid.any():
        return CoherenceReport(mu=0.0, argmax_pair=(), skipped_atoms=int((~alive).sum()))
    C = np.where(valid, C, -1.0)
    flat = int(np.argmax(C))
    u, v = divmod(flat, C.shape[1])
    return CoherenceReport(
        mu=float(min(C[u, v], 1.0)),
        argmax_pair=(int(owner[u]), int(u % k), int(owner[v]), int(v % k)),
        skipped_atoms=int((~alive).sum()),
    )


def block_energy(model: AddlModel, ds: LabeledDataset, which: str = "PX") -> BlockEnergyReport:
    """On/off-class energy of the projected data.

    For ``which="PX"``, ``on[l] = ||P_l X_l||^2`` and
    ``off[l] = ||P_l Xbar_l||^2``; ``"WPX"`` uses ``W_l P_l`` instead of
    ``P_l``.  ``ratio = sum(off) / sum(on)``, and 0 (flagged degenerate)
    when there is no on-block energy.
    """
    if ds.dim != model.dim:
        raise DiagnosticsError(f"dataset dim {ds.dim} != model dim {model.dim}")
    if ds.class_count != model.class_count:
        raise DiagnosticsError("dataset and model disagree on the class count")
    if which not in ("PX", "WPX"):
        raise DiagnosticsError(f"unknown block map {which!r}")
    on = np.zeros(model.class_count)
    off = np.zeros(model.class_count)
    for l in range(model.class_count):
        M = model.P[l] if which == "PX" else model.W[l] @ model.P[l]
        Y = M @ ds.features
        mask = ds.labels == l
        on[l] = np.sum(Y[:, mask] ** 2)
        off[l] = np.sum(Y[:, ~mask] ** 2)
    total_on = on.sum()
    if total_on == 0:
        return BlockEnergyReport(on=on, off=off, ratio=0.0, degenerate=True)
    return BlockEnergyReport(on=on, off=off, ratio=float(off.sum() / total_on))


def report(model: AddlModel, ds: LabeledDataset) -> dict:
    """JSON-ready summary of every diagnostic."""
    coh = mutual_coherence(model)
    norms = atom_norms(model)
    px = block_energy(model, ds, "PX")
    wpx = block_energy(model, ds, "WPX")
    return {
        "mu": coh.mu,
        "argmax_pair": list(coh.argmax_pair),
        "skipped_atoms": coh.skipped_atoms,
        "atom_norm_min": float(norms.min()),
        "atom_norm_max": float(norms.max()),
        "atom_norm_mean": float(norms.mean()),
        "block_ratio_PX": px.ratio,
        "block_ratio_WPX": wpx.ratio,
        "block_degenerate_PX": px.degenerate,
        "block_degenerate_WPX": wpx.degenerate,
    }
