"""Command-line surface: fit, calibrate, evaluate, sweep, synthetic.

Exit codes are a stable scripting contract: 0 on success, 2 for input or
validation problems, 3 for numeric/optimization failures. All randomness
flows from --seed (ensemble member u uses seed + u). Set PCE_CAL_LOG to
debug/info/warning/quiet to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import report
from .dataio import (
    SplitRole,
    assemble_dataset,
    load_npy,
    save_labels_npy,
    save_npy,
)
from .errors import InvalidInputError, NumericError
from .grouping import GcTrainConfig
from .metrics import BinningScheme
from .optim import OptimizerConfig
from .pipeline import (
    PartitionEnsemble,
    SyntheticSpec,
    calibrate,
    evaluate,
    fit_ensemble,
    generate_synthetic,
    learned_partitions,
    repeated_trials,
)
from .tensor import argmax_rows

log = logging.getLogger("pce_cal")


def _add_split_args(parser, split, required=True, labels_required=True):
    parser.add_argument(f"--{split}-features", required=required, metavar="PATH")
    parser.add_argument(f"--{split}-logits", required=required, metavar="PATH")
    parser.add_argument(
        f"--{split}-labels", required=required and labels_required, metavar="PATH"
    )


def _load_split(args, split, role):
    return assemble_dataset(
        getattr(args, f"{split}_features"),
        getattr(args, f"{split}_logits"),
        getattr(args, f"{split}_labels"),
        role,
    )


def _optimizer_config(args) -> OptimizerConfig:
    cfg = OptimizerConfig()
    if getattr(args, "opt_max_iter", None) is not None:
        cfg.max_iterations = args.opt_max_iter
    if getattr(args, "opt_tol", None) is not None:
        cfg.gradient_tolerance = args.opt_tol
    return cfg


def _train_config(args) -> GcTrainConfig:
    return GcTrainConfig(
        num_groups=args.k,
        l2_penalty=getattr(args, "lambda_"),
        seed=args.seed,
        init_scale=args.init_scale,
        optimizer=_optimizer_config(args),
    )


def _scheme(args) -> BinningScheme:
    return BinningScheme(args.bins, args.bin_mode)


def _parse_floats(text) -> tuple:
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise InvalidInputError(f"expected a comma-separated float list, got {text!r}")


def _parse_ints(text) -> tuple:
    try:
        return tuple(int(v) for v in str(text).split(","))
    except ValueError:
        raise InvalidInputError(f"expected a comma-separated int list, got {text!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    d_val = _load_split(args, "val", SplitRole.VALIDATION)
    d_ho = _load_split(args, "ho", SplitRole.HOLDOUT)
    ensemble = fit_ensemble(
        d_val,
        d_ho,
        _train_config(args),
        num_partitions=args.u,
        base=args.base,
        min_group_size=args.min_group_size,
        jobs=args.jobs,
    )
    ensemble.save(args.model)
    for u, member in enumerate(ensemble.members):
        taus = ", ".join(f"{c.tau:.4f}" for c in member.calibrators if hasattr(c, "tau"))
        print(f"member {u}: train_loss={member.train_loss:.6f} taus=[{taus}]")
    print(f"model written to {args.model}")
    return 0


def cmd_calibrate(args) -> int:
    ensemble = PartitionEnsemble.load(args.model)
    d_test = _load_split(args, "test", SplitRole.TEST)
    probs = calibrate(ensemble, d_test)
    save_npy(probs, args.out)
    print(f"calibrated probabilities written to {args.out}")
    if d_test.labels is not None:
        raw_pred = argmax_rows(d_test.logits)
        cal_pred = argmax_rows(probs)
        changes = int(np.sum(raw_pred != cal_pred))
        acc = float(np.mean(cal_pred == d_test.labels))
        print(f"accuracy {acc:.4f}, argmax changes {changes} of {d_test.n}")
    return 0


def cmd_evaluate(args) -> int:
    if (args.probs is None) == (args.model is None):
        raise InvalidInputError("evaluate needs exactly one of --probs or --model")
    d_test = _load_split(args, "test", SplitRole.TEST)
    if d_test.labels is None:
        raise InvalidInputError("evaluation needs --test-labels")
    scheme = _scheme(args)
    metric_names = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    ensemble = None
    if args.model is not None:
        ensemble = PartitionEnsemble.load(args.model)
        subject = ensemble
        probs = calibrate(ensemble, d_test)
    else:
        probs = load_npy(args.probs)
        subject = probs

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = evaluate(subject, d_test, metric_names, scheme)
    report.write_reports_json(reports, out_dir / "metrics.json")

    from .tensor import softmax_rows  # local to keep module import light

    rows_after = report.reliability_table(probs, d_test.labels, scheme)
    rows_before = report.reliability_table(
        softmax_rows(d_test.logits), d_test.labels, scheme
    )
    report.save_reliability_csv(rows_after, out_dir / "reliability.csv")
    if args.figures:
        report.render_reliability_figure(
            {"before": rows_before, "after": rows_after},
            out_dir / "reliability.png",
        )

    if ensemble is not None:
        parts = learned_partitions(ensemble, d_test.features)
        comp = report.group_composition(parts, d_test.labels, d_test.num_classes)
        report.save_group_composition_csv(
            comp, d_test.num_classes, out_dir / "group_composition.csv"
        )
        if args.figures:
            report.render_group_composition_figure(
                comp, d_test.num_classes, out_dir / "group_composition.png"
            )

    if args.compare is not None:
        result = repeated_trials(
            probs,
            load_npy(args.compare),
            d_test,
            trials=args.trials,
            fraction=args.trial_fraction,
            seed=args.seed,
            metric="ece",
            scheme=scheme,
        )
        (out_dir / "trials.json").write_text(
            json.dumps(result.to_dict(), sort_keys=True, indent=1)
        )

    for rep in reports:
        print(f"{rep.metric}: {rep.value:.6f}")
    print(f"reports written to {out_dir}")
    return 0


def cmd_sweep(args) -> int:
    d_val = _load_split(args, "val", SplitRole.VALIDATION)
    d_ho = _load_split(args, "ho", SplitRole.HOLDOUT)
    d_test = _load_split(args, "test", SplitRole.TEST)
    if d_test.labels is None:
        raise InvalidInputError("sweep needs labeled test data")
    scheme = _scheme(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for k in _parse_ints(args.k_grid):
        for u in _parse_ints(args.u_grid):
            for lam in _parse_floats(args.lambda_grid):
                cfg = GcTrainConfig(
                    num_groups=k,
                    l2_penalty=lam,
                    seed=args.seed,
                    init_scale=args.init_scale,
                    optimizer=_optimizer_config(args),
                )
                ensemble = fit_ensemble(
                    d_val, d_ho, cfg, num_partitions=u, base=args.base, jobs=args.jobs
                )
                reports = evaluate(ensemble, d_test, ("ece", "nll"), scheme)
                row = (
                    k,
                    u,
                    lam,
                    report.metric_value(reports, "ece.after"),
                    report.metric_value(reports, "nll.after"),
                    report.metric_value(reports, "accuracy.after"),
                )
                rows.append(row)
                log.info("sweep point k=%d u=%d lambda=%g ece=%.5f", k, u, lam, row[3])
    report.save_sweep_csv(rows, out_dir / "sweep.csv")
    if args.figures:
        report.render_sweep_figure(rows, out_dir / "sweep.png")
    print(f"{len(rows)} sweep rows written to {out_dir / 'sweep.csv'}")
    return 0


def cmd_synthetic(args) -> int:
    spec = SyntheticSpec(
        n_val=args.n_val,
        n_ho=args.n_ho,
        n_test=args.n_test,
        num_classes=args.classes,
        feature_dim=args.feature_dim,
        distortions=_parse_floats(args.distortions),
        cluster_sep=args.cluster_sep,
        logit_scale=args.logit_scale,
        seed=args.seed,
    )
    d_val, d_ho, d_test, latent = generate_synthetic(spec)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, ds in (("val", d_val), ("ho", d_ho), ("test", d_test)):
        save_npy(ds.features, out_dir / f"features_{name}.npy")
        save_npy(ds.logits, out_dir / f"logits_{name}.npy")
        save_labels_npy(ds.labels, out_dir / f"labels_{name}.npy")
    save_labels_npy(latent.group_ids, out_dir / "latent_groups_test.npy")
    print(f"synthetic datasets written to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pce-cal",
        description="Group calibration of classifier logits with partition-based error metrics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="train a partition ensemble")
    _add_split_args(fit, "val")
    _add_split_args(fit, "ho")
    fit.add_argument("--model", required=True, help="output model JSON path")
    fit.add_argument("--k", type=int, default=2, help="groups per partition")
    fit.add_argument("--u", type=int, default=20, help="number of partitions")
    fit.add_argument("--lambda", dest="lambda_", type=float, default=0.1)
    fit.add_argument("--base", choices=("ts", "ets"), default="ts")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--init-scale", type=float, default=0.01)
    fit.add_argument("--min-group-size", type=int, default=10)
    fit.add_argument("--jobs", type=int, default=1)
    fit.add_argument("--opt-max-iter", type=int, default=None)
    fit.add_argument("--opt-tol", type=float, default=None)
    fit.set_defaults(func=cmd_fit)

    cal = sub.add_parser("calibrate", help="apply a fitted model to test logits")
    cal.add_argument("--model", required=True)
    _add_split_args(cal, "test", labels_required=False)
    cal.add_argument("--out", required=True, help="output NPY probabilities path")
    cal.set_defaults(func=cmd_calibrate)

    ev = sub.add_parser("evaluate", help="metric reports, tables and figures")
    ev.add_argument("--probs", default=None, help="calibrated probabilities NPY")
    ev.add_argument("--model", default=None, help="model JSON (alternative to --probs)")
    _add_split_args(ev, "test", labels_required=False)
    ev.add_argument("--out", required=True, help="output directory")
    ev.add_argument("--bins", type=int, default=15)
    ev.add_argument("--bin-mode", choices=("width", "mass"), default="width")
    ev.add_argument("--metrics", default="ece,classwise-ece,nll,brier,pce")
    ev.add_argument("--compare", default=None, help="second probabilities NPY for paired trials")
    ev.add_argument("--trials", type=int, default=100)
    ev.add_argument("--trial-fraction", type=float, default=0.5)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    ev.set_defaults(func=cmd_evaluate)

    sw = sub.add_parser("sweep", help="grid over K / U / lambda")
    _add_split_args(sw, "val")
    _add_split_args(sw, "ho")
    _add_split_args(sw, "test")
    sw.add_argument("--out", required=True)
    sw.add_argument("--k-grid", default="1,2")
    sw.add_argument("--u-grid", default="1,5,20")
    sw.add_argument("--lambda-grid", default="0.1")
    sw.add_argument("--base", choices=("ts", "ets"), default="ts")
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--init-scale", type=float, default=0.01)
    sw.add_argument("--bins", type=int, default=15)
    sw.add_argument("--bin-mode", choices=("width", "mass"), default="width")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--opt-max-iter", type=int, default=None)
    sw.add_argument("--opt-tol", type=float, default=None)
    sw.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    sw.set_defaults(func=cmd_sweep)

    syn = sub.add_parser("synthetic", help="generate latent-group benchmark data")
    syn.add_argument("--out", required=True)
    syn.add_argument("--n-val", type=int, default=5000)
    syn.add_argument("--n-ho", type=int, default=5000)
    syn.add_argument("--n-test", type=int, default=10000)
    syn.add_argument("--classes", type=int, default=5)
    syn.add_argument("--feature-dim", type=int, default=10)
    syn.add_argument("--distortions", default="2.0,0.5")
    syn.add_argument("--cluster-sep", type=float, default=8.0)
    syn.add_argument("--logit-scale", type=float, default=2.0)
    syn.add_argument("--seed", type=int, default=0)
    syn.set_defaults(func=cmd_synthetic)

    return parser


def _setup_logging():
    level = os.environ.get("PCE_CAL_LOG", "warning").lower()
    levels = {
        "debug": logging.DEBUG,
        "info": logging.INFO,
        "warning": logging.WARNING,
        "quiet": logging.CRITICAL,
    }
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidInputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
