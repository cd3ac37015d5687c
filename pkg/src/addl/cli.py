"""Command-line front end.

Subcommands: ``synth``, ``train``, ``eval``, ``ablate``, ``noise-sweep``
and ``diagnose``.  Every command writes a ``manifest.json`` beside its
outputs recording the full argument set, so a run can be repeated
exactly.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from addl import __version__
from addl import experiments as exp
from addl.classifier import roc_one_vs_rest, SoftLabels
from addl.dataset import (DatasetError, load_dataset, save_dataset,
                          split_train_test, synth_generate)
from addl.diagnostics import block_energy, report as diagnostics_report
from addl.model import BundleError, Hyperparams, load_model, save_model
from addl.trainer import TrainingError, TrainOptions

log = logging.getLogger("addl")


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument helpers

def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative number, got {text}")
    return v


def _energy(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"energy must lie in (0, 1], got {text}")
    return v


def _variances(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad variance list {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("variances must be a non-empty list of values >= 0")
    return vals


def _add_data(p, required=True):
    p.add_argument("--data", type=Path, required=required, help="dataset file")
    p.add_argument("--format", choices=("csv", "bin"), default=None,
                   help="dataset format (default: from the file suffix)")


def _add_hyper(p):
    g = p.add_argument_group("hyperparameters")
    g.add_argument("--alpha", type=_nonneg_float, default=0.1)
    g.add_argument("--tau", type=_nonneg_float, default=0.05)
    g.add_argument("--lambda", dest="lam", type=_nonneg_float, default=0.001)
    g.add_argument("--gamma", type=_positive_float, default=1e-4)
    g.add_argument("--atoms-per-class", type=int, default=5)
    g.add_argument("--max-iter", type=int, default=50)
    g.add_argument("--tol-obj", type=_positive_float, default=1e-3)
    g.add_argument("--tol-p", type=_positive_float, default=1e-3)
    g.add_argument("--project-atoms", action="store_true")
    g.add_argument("--decoupled-codes", action="store_true",
                   help="drop the incoherence term from the code update")
    g.add_argument("--unit-norm", action="store_true",
                   help="scale every sample to unit l2 norm before training")
    g.add_argument("--pca-energy", type=_energy, default=None,
                   help="keep this fraction of the training-set energy with PCA")
    g.add_argument("--parallel", action="store_true",
                   help="solve the per-class blocks on a thread pool")


def _add_split(p):
    p.add_argument("--per-class-train", type=int, default=None,
                   help="split --data, keeping this many samples per class for training")
    p.add_argument("--test", type=Path, default=None,
                   help="separate test dataset (instead of --per-class-train)")


def _hyper(args) -> Hyperparams:
    return Hyperparams(
        alpha=args.alpha, tau=args.tau, lam=args.lam, gamma=args.gamma,
        k=args.atoms_per_class, max_iter=args.max_iter, tol_obj=args.tol_obj,
        tol_p=args.tol_p, project_atoms=args.project_atoms,
        couple_codes=not args.decoupled_codes, seed=args.seed,
    )


def _opts(args) -> TrainOptions:
    return TrainOptions(parallel_classes=args.parallel)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, **extra):
    rec = {"addl_version": __version__, "command": args.command}
    for key, val in sorted(vars(args).items()):
        if key in ("func", "command"):
            continue
        rec[key] = str(val) if isinstance(val, Path) else val
    rec.update(extra)
    (out / "manifest.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")


def _splits(args):
    ds = load_dataset(args.data, args.format)
    if args.test is not None:
        return ds, load_dataset(args.test, args.format)
    if args.per_class_train is None:
        raise CliError("give either --per-class-train or --test")
    return split_train_test(ds, args.per_class_train, args.seed)


def _write_rows(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args):
    ds = synth_generate(args.classes, args.subspace, args.dim, args.per_class,
                        args.noise, args.seed, shift=args.shift)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out, args.format)
    _write_manifest(out.parent, args, n=ds.dim, N=ds.size, c=ds.class_count)
    print(f"n={ds.dim} N={ds.size} c={ds.class_count} -> {out}")


def cmd_train(args):
    out = _out_dir(args)
    ds = load_dataset(args.data, args.format)
    extra = {}
    if args.per_class_train is not None:
        ds, test = split_train_test(ds, args.per_class_train, args.seed)
        save_dataset(ds, out / "train.csv")
        save_dataset(test, out / "test.csv")
        extra["split"] = {"train": "train.csv", "test": "test.csv"}
    model, trace = exp.fit(ds, _hyper(args), args.unit_norm, args.pca_energy, _opts(args))
    save_model(model, out / "model.addl")
    trace.write_csv(out / "trace.csv")
    _write_manifest(out, args, stop_reason=trace.stop_reason,
                    iterations=trace.iterations, **extra)
    final = trace.records[-1].objective.total if trace.records else float("nan")
    print(f"stop={trace.stop_reason} iterations={trace.iterations} objective={final:.6g}")


def cmd_eval(args):
    out = _out_dir(args)
    model = load_model(args.model)
    ds = load_dataset(args.data, args.format)
    ev = exp.evaluate(model, ds, rule=args.rule)
    c = model.class_count
    _write_rows(out / "predictions.csv",
                ["index", "predicted", "true"] + [f"score_{l}" for l in range(c)],
                [[j, int(ev.predictions[j]), int(ev.truth[j]),
                  *(repr(float(v)) for v in ev.scores[:, j])]
                 for j in range(ev.truth.size)])
    aucs = {}
    for l in range(c):
        pos = ev.truth == l
        if pos.all() or not pos.any():
            continue
        roc = roc_one_vs_rest(SoftLabels(ev.scores), ev.truth, l)
        aucs[str(l)] = roc.auc
        _write_rows(out / f"roc_class{l}.csv", ["threshold", "fpr", "tpr"],
                    [[repr(float(t)), repr(float(f)), repr(float(p))]
                     for t, f, p in zip(roc.thresholds, roc.fpr, roc.tpr)])
    metrics = {"accuracy": ev.accuracy, "per_class_accuracy": ev.per_class,
               "rule": ev.rule, "n_test": int(ev.truth.size), "auc": aucs}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    _write_manifest(out, args, accuracy=ev.accuracy)
    print(f"accuracy={ev.accuracy:.4f} rule={ev.rule} N={ev.truth.size}")


def cmd_ablate(args):
    out = _out_dir(args)
    train_ds, test_ds = _splits(args)
    rows = exp.ablation(train_ds, test_ds, _hyper(args), args.unit_norm,
                        args.pca_energy, _opts(args))
    header = ["variant", "alpha", "tau", "lambda", "classifier", "accuracy", "mu",
              "iterations", "stop_reason"]
    _write_rows(out / "ablation.csv", header, [[r[h] for h in header] for r in rows])
    _write_manifest(out, args)
    for r in rows:
        print(f"{r['variant']:8s} accuracy={r['accuracy']:.4f} mu={r['mu']:.4f}")


def cmd_noise_sweep(args):
    out = _out_dir(args)
    train_ds, test_ds = _splits(args)
    rows = exp.noise_sweep(train_ds, test_ds, _hyper(args), args.variances, args.seed,
                           args.unit_norm, args.pca_energy, _opts(args))
    _write_rows(out / "noise.csv", ["variance", "accuracy"],
                [[repr(r["variance"]), repr(r["accuracy"])] for r in rows])
    _write_manifest(out, args)
    for r in rows:
        print(f"variance={r['variance']:g} accuracy={r['accuracy']:.4f}")


def cmd_diagnose(args):
    out = _out_dir(args)
    model = load_model(args.model)
    ds = exp.apply_preprocess(load_dataset(args.data, args.format), model.preprocess)
    if ds.dim != model.dim:
        raise CliError(f"dataset has dim {ds.dim} but the model expects dim {model.dim}")
    rep = diagnostics_report(model, ds)
    (out / "diagnostics.json").write_text(json.dumps(rep, indent=2) + "\n")
    PX = model.P_full @ ds.features
    np.savetxt(out / "px.csv", PX, delimiter=",", fmt="%.17g")
    rows = []
    for which in ("PX", "WPX"):
        be = block_energy(model, ds, which)
        rows += [[which, l, repr(float(be.on[l])), repr(float(be.off[l]))]
                 for l in range(model.class_count)]
    _write_rows(out / "block_energy.csv", ["map", "class", "on", "off"], rows)
    _write_manifest(out, args)
    print(f"mu={rep['mu']:.4f} block_ratio_PX={rep['block_ratio_PX']:.4f}")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="addl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic union-of-subspaces dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--subspace", type=int, required=True)
    p.add_argument("--noise", type=_nonneg_float, default=0.0)
    p.add_argument("--shift", type=_nonneg_float, default=0.0,
                   help="norm of each class mean inside its subspace")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True, help="output dataset file")
    p.add_argument("--format", choices=("csv", "bin"), default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _add_data(p)
    _add_hyper(p)
    p.add_argument("--per-class-train", type=int, default=None,
                   help="split --data first and train on this many samples per class")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model bundle on a dataset")
    p.add_argument("--model", type=Path, required=True)
    _add_data(p)
    p.add_argument("--rule", choices=("soft_label", "residual"), default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="full model against alpha=0, tau=0 and lambda=0")
    _add_data(p)
    _add_hyper(p)
    _add_split(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("noise-sweep", help="accuracy against additive noise variance")
    _add_data(p)
    _add_hyper(p)
    _add_split(p)
    p.add_argument("--variances", type=_variances, required=True,
                   help="comma-separated variances, e.g. 0,200,400")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("diagnose", help="coherence, atom norms and block energy")
    p.add_argument("--model", type=Path, required=True)
    _add_data(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, DatasetError, BundleError, TrainingError, ValueError, OSError) as exc:
        print(f"addl {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
