"""``dperm`` command-line interface.

Exit codes: 0 success, 2 bad input or violated precondition, 3 audit failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from dperm import audit, experiments
from dperm.dataset_io import Schema, builtin_schema, load_dataset, load_table, preprocess
from dperm.erm import TrainedModel, predict, predict_labels, train
from dperm.errors import PreconditionError
from dperm.kernel import DEFAULT_FEATURES_D, NORM_MODES, train_kernel_private
from dperm.losses import KINDS, LossSpec
from dperm.rng import derive_seed
from dperm.tuning import TuningConfig, linear_trainer, tune

EXIT_OK, EXIT_PRECONDITION, EXIT_AUDIT = 0, 2, 3


def _load_data(args):
    if args.data is None:
        raise PreconditionError("--data is required")
    if args.data == "synthetic":
        return experiments.synthetic_dataset(args.n, args.dim, derive_seed(args.seed, 7))
    if args.schema:
        path = Path(args.schema)
        schema = Schema.load(path) if path.suffix == ".json" else builtin_schema(args.schema)
        data, _ = preprocess(load_table(args.data, schema))
        return data
    return load_dataset(args.data)


def _loss(kind, h):
    return LossSpec(kind.replace("-", "_"), None if kind == "logistic" else h)


def _write(text: str, out):
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def cmd_train(args) -> int:
    data = _load_data(args)
    loss = _loss(args.loss, args.h)
    kw = {"grad_tol": args.grad_tol, "max_iters": args.max_iters}
    eps = args.epsilon[0] if args.epsilon else None
    lam = args.lam[0]
    if args.method != "nonprivate" and eps is None:
        raise PreconditionError("--epsilon is required for private methods")
    if args.kernel_gamma is not None:
        model = train_kernel_private(data, loss, lam, eps, args.features_D, args.kernel_gamma, args.method,
                                     args.seed, norm_mode=args.norm_mode, **kw)
    else:
        model = train(args.method, data, loss, lam, eps, args.seed, **kw)
    _write(model.to_json(), args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = TrainedModel.load(args.model)
    if args.x is not None:
        x = np.array([float(v) for v in args.x.split(",")])
        _write(json.dumps(predict(model, x)), args.out)
        return EXIT_OK
    data = _load_data(args)
    pred = predict_labels(model, data.features)
    errors = int(np.sum(pred != data.labels))
    doc = {"n": data.n, "errors": errors, "error_rate": errors / data.n, "labels": [int(p) for p in pred]}
    _write(json.dumps(doc, indent=1), args.out)
    return EXIT_OK


def cmd_tune(args) -> int:
    data = _load_data(args)
    if args.method == "nonprivate":
        raise PreconditionError("tune selects among private models; use output or objective")
    if not args.epsilon:
        raise PreconditionError("--epsilon is required")
    trainer = linear_trainer(args.method, _loss(args.loss, args.h), grad_tol=args.grad_tol, max_iters=args.max_iters)
    cfg = TuningConfig(args.lam, args.epsilon[0], trainer, audit=args.audit_scores)
    _write(tune(data, cfg, args.seed).to_json(), args.out)
    return EXIT_OK


def cmd_audit(args) -> int:
    reports = audit.run_audits(args.tests, args.seed, repeats=args.repeats)
    _write(json.dumps([r.to_dict() for r in reports], indent=1, default=float), args.out)
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: worst={r.worst:.6g} bound={r.bound:.6g}", file=sys.stderr)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_AUDIT


def cmd_experiment(args) -> int:
    data = _load_data(args)
    folds = args.folds or (experiments.DESK_FOLDS if args.desk else experiments.DEFAULT_FOLDS)
    repeats = args.repeats or (experiments.DESK_REPEATS if args.desk else experiments.DEFAULT_REPEATS)
    grid = experiments.ExperimentGrid(
        methods=tuple(args.method_list),
        losses=tuple(_loss(k, args.h) for k in args.loss_list),
        epsilons=tuple(args.epsilon or ()),
        lambdas=tuple(args.lam),
        folds=folds,
        repeats=repeats,
        seed=args.seed,
        workers=args.workers,
        time_budget=args.time_budget,
        grad_tol=args.grad_tol,
        dataset=args.data,
    )
    if args.kind == "learning-curve":
        if not args.n_schedule:
            raise PreconditionError("--n-schedule is required for learning curves")
        result = experiments.run_learning_curve(grid, data, args.n_schedule)
    else:
        result = experiments.run_privacy_accuracy(grid, data)
    if args.out:
        experiments.emit_results(result, args.out, args.format, include_timing=args.include_timing)
    for row in experiments.summarize(result):
        print(json.dumps(row))
    if result.partial:
        print("time budget exhausted: results are partial", file=sys.stderr)
    return EXIT_OK


def _common(p):
    p.add_argument("--data", help="dataset file, or 'synthetic'")
    p.add_argument("--schema", help="builtin schema name (adult, kddcup99) or schema JSON path for raw tables")
    p.add_argument("--n", type=int, default=2000, help="synthetic size")
    p.add_argument("--dim", type=int, default=10, help="synthetic dimension")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--grad-tol", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=100_000)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dperm", description="Differentially private ERM classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)
    loss_choices = list(KINDS) + ["smoothed-hinge"]

    p = sub.add_parser("train", help="train one model and write it as JSON")
    _common(p)
    p.add_argument("--method", choices=["nonprivate", "output", "objective"], default="objective")
    p.add_argument("--loss", choices=loss_choices, default="logistic")
    p.add_argument("--h", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, nargs=1, required=True)
    p.add_argument("--epsilon", type=float, nargs=1)
    p.add_argument("--kernel-gamma", type=float, help="train on random Fourier features of this width")
    p.add_argument("--features-D", dest="features_D", type=int, default=DEFAULT_FEATURES_D)
    p.add_argument("--norm-mode", choices=NORM_MODES, default="rescale_half")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score a dataset or a single vector with a saved model")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--x", help="comma-separated feature vector")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("tune", help="privately choose lambda among candidates")
    _common(p)
    p.add_argument("--method", choices=["output", "objective"], default="objective")
    p.add_argument("--loss", choices=loss_choices, default="logistic")
    p.add_argument("--h", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, nargs="+", required=True)
    p.add_argument("--epsilon", type=float, nargs=1)
    p.add_argument("--audit-scores", action="store_true", help="record candidate scores in the model")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("audit", help="run empirical privacy audits")
    p.add_argument("tests", nargs="*", default=list(audit.AUDIT_NAMES), help=f"any of {', '.join(audit.AUDIT_NAMES)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=100_000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("experiment", help="run a privacy-accuracy grid or a learning curve")
    _common(p)
    p.add_argument("--kind", choices=["privacy-accuracy", "learning-curve"], default="privacy-accuracy")
    p.add_argument("--method", dest="method_list", nargs="+", default=["nonprivate", "output", "objective"],
                   choices=["nonprivate", "output", "objective"])
    p.add_argument("--loss", dest="loss_list", nargs="+", default=["logistic"], choices=loss_choices)
    p.add_argument("--h", type=float, default=0.5)
    p.add_argument("--lambda", dest="lam", type=float, nargs="+", required=True)
    p.add_argument("--epsilon", type=float, nargs="+")
    p.add_argument("--folds", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--desk", action="store_true", help="reduced folds/repeats preset")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--time-budget", type=float)
    p.add_argument("--n-schedule", type=int, nargs="+")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--include-timing", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_PRECONDITION
    try:
        return args.func(args)
    except (PreconditionError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
