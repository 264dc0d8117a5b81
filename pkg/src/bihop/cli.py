"""Command-line harness.

Subcommands write CSV to ``--out`` (or standard output) and, when ``--out``
is given, a ``<out>.json`` sidecar holding the resolved run specification
and a summary.  Exit status: 0 on success, 2 on a specification error, 3 on
a numerical failure.
"""
import argparse
import csv
import dataclasses
import json
import sys
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import hypergrad as hg
from .bilevel import (MODELS, BilevelAbort, CrossValObjective, OuterConfig,
                      first_order, grid_search, lambda_bounds, random_search)
from .criteria import CRITERION_KINDS, DualCriterion, HoldoutCriterion
from .data_io import (ParseError, Task, dump_libsvm, holdout_split,
                      kfold_split, load_libsvm, make_synthetic_classification,
                      make_synthetic_regression)
from .datafit import Datafit
from .prox import DomainError, Penalty, lambda_max
from .solvers import SolverConfig

EXIT_SPEC = 2
EXIT_NUMERIC = 3

SYNTHETIC_KEYS = {"n", "p", "density", "snr", "seed", "task", "n_classes"}


class SpecError(ValueError):
    pass


@dataclass
class RunSpec:
    command: str
    model: str = "lasso"
    engines: list = field(default_factory=lambda: ["implicit"])
    data: Optional[str] = None
    val_data: Optional[str] = None
    synthetic: Optional[dict] = None
    criterion: Optional[str] = None
    method: str = "first_order"
    lam: Optional[list] = None
    grid: Optional[int] = None
    draws: int = 30
    k_folds: int = 5
    tol: Optional[float] = None
    max_iters: Optional[int] = None
    seed: int = 0
    out: Optional[str] = None
    timing: bool = True

    def to_json(self):
        return dataclasses.asdict(self)


def _task_for(model):
    return Task.REGRESSION if MODELS[model][0] == "quadratic" else Task.BINARY


def _load(spec):
    task = _task_for(spec.model)
    if spec.data is not None:
        try:
            ds = load_libsvm(spec.data, task)
        except OSError as e:
            raise SpecError(f"cannot read {spec.data}: {e}") from e
        return ds
    if spec.synthetic is None:
        raise SpecError("one of --data or --synthetic is required")
    return _synthetic(spec.synthetic, task)


def _synthetic(params, task=None):
    if not isinstance(params, dict) or not {"n", "p"} <= params.keys():
        raise SpecError("--synthetic needs a JSON object with at least n, p")
    unknown = params.keys() - SYNTHETIC_KEYS
    if unknown:
        raise SpecError(f"unknown synthetic keys {sorted(unknown)}")
    kw = {k: params[k] for k in ("n", "p", "density", "snr", "seed")
          if k in params}
    if "snr" in kw:
        kw["snr"] = float(kw["snr"])
    task = Task(params.get("task", task or "regression"))
    try:
        if task is Task.REGRESSION:
            return make_synthetic_regression(**kw)
        n_classes = 2 if task is Task.BINARY else int(params.get(
            "n_classes", 3))
        return make_synthetic_classification(**kw, n_classes=n_classes)
    except (TypeError, ValueError) as e:
        raise SpecError(f"bad synthetic spec: {e}") from e


def _holdout(spec, ds):
    """Train/validation pair: ``--val-data`` if given, else a seeded split."""
    if spec.val_data is not None:
        try:
            val = load_libsvm(spec.val_data, _task_for(spec.model),
                              n_features=ds.X.p)
        except OSError as e:
            raise SpecError(f"cannot read {spec.val_data}: {e}") from e
        return ds.X, ds.y, val.X, val.y
    split = holdout_split(ds, 0.5, spec.seed)
    return split.X_train, split.y_train, split.X_val, split.y_val


def _problem(spec, X, y, X_val, y_val):
    df_kind, pen_kind, default_crit = MODELS[spec.model]
    df = Datafit(df_kind, X, y)
    crit = HoldoutCriterion(spec.criterion or default_crit, X_val, y_val)
    if df_kind == "svm_dual":
        crit = DualCriterion(crit, df)
    return df, Penalty(pen_kind), crit


def _default_lam(spec, df, pen):
    if spec.lam is not None:
        if len(spec.lam) != pen.r:
            raise SpecError(f"--lam needs {pen.r} value(s) for {spec.model}")
        return np.array(spec.lam, dtype=float)
    if df.kind.value == "svm_dual":
        return np.zeros(pen.r)
    return np.full(pen.r, lambda_max(df.kind, df.X, df.y) - np.log(10.))


def _lam_columns(r):
    return ["lambda"] if r == 1 else [f"lambda_{i + 1}" for i in range(r)]


def _fmt(x):
    return repr(float(x))


def _ms(spec, t0):
    return _fmt(1e3 * (time.perf_counter() - t0)) if spec.timing else "0.0"


def cmd_hypergrad(spec):
    ds = _load(spec)
    df, pen, crit = _problem(spec, *_holdout(spec, ds))
    lam = _default_lam(spec, df, pen)
    tol = spec.tol or 1e-12
    cfg = SolverConfig(tol=tol, max_epochs=spec.max_iters or 200_000)
    oracle = hg.finite_diff_hypergrad(df, pen, lam, crit)
    header = ["engine", *_lam_columns(pen.r), "wall_ms",
              *[f"hypergrad_{i + 1}" for i in range(pen.r)],
              "abs_err_vs_oracle"]
    rows = []
    for engine in spec.engines:
        t0 = time.perf_counter()
        rep = hg.compute(engine, df, pen, lam, crit, cfg)
        wall = _ms(spec, t0)
        if not rep.diagnostics["inner_converged"]:
            raise hg.NonConvergenceError(
                f"{engine}: inner solver did not reach tol={tol}")
        err = float(np.max(np.abs(rep.hypergrad - oracle)))
        rows.append([engine, *map(_fmt, lam), wall,
                     *map(_fmt, rep.hypergrad), _fmt(err)])
    summary = {"oracle": oracle.tolist(), "lambda": lam.tolist()}
    return header, rows, summary


def cmd_trace(spec):
    engine = spec.engines[0]
    if engine not in ("forward_pgd", "forward_pcd") or len(spec.engines) != 1:
        raise SpecError("trace needs exactly one of forward_pgd, forward_pcd")
    ds = _load(spec)
    df, pen, crit = _problem(spec, *_holdout(spec, ds))
    lam = _default_lam(spec, df, pen)
    ref = hg.implicit(df, pen, lam, crit,
                      SolverConfig(tol=1e-14, max_epochs=1_000_000))
    if not ref.converged:
        raise hg.NonConvergenceError("reference solve did not reach 1e-14")
    cfg = SolverConfig(tol=spec.tol or 1e-14,
                       max_epochs=spec.max_iters or 100_000)
    rep = hg.compute(engine, df, pen, lam, crit, cfg, beta_ref=ref.beta,
                     jac_ref=ref.jacobian)
    ident = rep.diagnostics["identified_at"] or 0
    header = ["epoch", "beta_err", "jac_err", "support_size", "identified"]
    rows = [[row["epoch"], _fmt(row["beta_err"]), _fmt(row["jac_err"]),
             row["support_size"], str(row["epoch"] >= ident).lower()]
            for row in rep.diagnostics["trace"]]
    summary = {"identified_at": ident, "epochs": rep.diagnostics["epochs"],
               "lambda": lam.tolist(), "support_size": int(ref.support.size)}
    return header, rows, summary


def cmd_bilevel(spec):
    ds = _load(spec)
    if spec.k_folds == 1:
        split = holdout_split(ds, 0.5, spec.seed)
    elif spec.k_folds >= 2:
        try:
            split = kfold_split(ds, spec.k_folds, spec.seed)
        except ValueError as e:
            raise SpecError(str(e)) from e
    else:
        raise SpecError("--k-folds must be >= 1")
    obj = CrossValObjective.from_cv_spec(split, spec.model, spec.criterion)
    if spec.method == "first_order":
        n_iter = spec.max_iters or 30
        sched = None if spec.tol is None else [spec.tol] * n_iter
        cfg = OuterConfig(max_outer_iters=n_iter, tol_schedule=sched,
                          lam0=spec.lam, engine=spec.engines[0],
                          seed=spec.seed)
        try:
            trace = first_order(obj, cfg)
        except BilevelAbort as e:
            _write_partial(spec, e.trace, obj.r)
            raise
    elif spec.method == "grid":
        grid_spec = None
        if spec.grid is not None:
            if spec.grid < 1:
                raise SpecError("--grid must be >= 1")
            grid_spec = [(spec.grid, lo, hi) for lo, hi in lambda_bounds(obj)]
        trace = grid_search(obj, grid_spec, tol=spec.tol or 1e-6)
    else:
        if spec.draws < 1:
            raise SpecError("--draws must be >= 1")
        trace = random_search(obj, spec.draws, seed=spec.seed,
                              tol=spec.tol or 1e-6)
    header, rows = _trace_table(spec, trace, obj.r)
    best_lam, best_val = trace.best
    summary = {"best_lambda": np.asarray(best_lam).tolist(),
               "best_L": best_val, "evaluations": len(trace.iterations)}
    return header, rows, summary


def _trace_table(spec, trace, r):
    header = ["method", "iter", *_lam_columns(r), "L", "wall_ms",
              "grad_norm", "step", "inner_tol", "epochs"]
    rows = []
    for i, it in enumerate(trace.iterations):
        wall = _fmt(it["wall_ms"]) if spec.timing else "0.0"
        rows.append([trace.method, i, *map(_fmt, it["lam"]),
                     _fmt(it["value"]), wall, _fmt(it["grad_norm"]),
                     _fmt(it["step"]), _fmt(it["tol"]), it["epochs"]])
    return header, rows


def _write_partial(spec, trace, r):
    if spec.out is not None:
        header, rows = _trace_table(spec, trace, r)
        _emit(spec, header, rows, {"aborted": True,
                                   "evaluations": len(trace.iterations)})


def cmd_datagen(spec):
    if spec.synthetic is None:
        raise SpecError("datagen needs --synthetic")
    ds = _synthetic(spec.synthetic)
    text = dump_libsvm(ds)
    if spec.out is None:
        sys.stdout.write(text)
    else:
        with open(spec.out, "w") as fh:
            fh.write(text)
        _sidecar(spec, {"n": ds.X.n, "p": ds.X.p, "nnz": ds.X.nnz,
                        "task": ds.task.value})
    return None


COMMANDS = {"hypergrad": cmd_hypergrad, "trace": cmd_trace,
            "bilevel": cmd_bilevel, "datagen": cmd_datagen}


def _sidecar(spec, summary):
    with open(spec.out + ".json", "w") as fh:
        json.dump({"runspec": spec.to_json(), "summary": summary}, fh,
                  indent=2, default=float)


def _emit(spec, header, rows, summary):
    if spec.out is None:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return
    with open(spec.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    _sidecar(spec, summary)


def _parse_engines(text):
    if text == "all":
        return list(hg.ENGINES)
    engines = [e.strip() for e in text.split(",") if e.strip()]
    bad = [e for e in engines if e not in hg.ENGINES]
    if bad or not engines:
        raise argparse.ArgumentTypeError(
            f"unknown engine(s) {bad}; choose from {hg.ENGINES} or 'all'")
    return engines


def _parse_json(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise argparse.ArgumentTypeError(f"invalid JSON: {e}") from e


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bihop", description="Hyperparameter selection for sparse "
        "linear models by bilevel optimization.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [("hypergrad", "compare hypergradient engines"),
                        ("trace", "per-epoch convergence of a forward engine"),
                        ("bilevel", "run an outer optimizer"),
                        ("datagen", "write a synthetic libsvm dataset")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--synthetic", type=_parse_json,
                       help='JSON, e.g. \'{"n": 50, "p": 100, "density": 0.3,'
                       ' "snr": 10, "seed": 0}\'')
        p.add_argument("--out", help="CSV path (standard output if omitted)")
        p.add_argument("--seed", type=int, default=0)
        if name == "datagen":
            continue
        p.add_argument("--model", choices=sorted(MODELS), default="lasso")
        p.add_argument("--data", help="libsvm training file")
        p.add_argument("--val-data", help="libsvm validation file")
        p.add_argument("--criterion", choices=CRITERION_KINDS)
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--lam", type=float, nargs="+",
                       help="log-hyperparameter(s); defaults depend on the "
                       "command")
        p.add_argument("--no-timing", action="store_true",
                       help="write wall_ms as 0 for byte-reproducible output")
        if name == "bilevel":
            p.add_argument("--method", default="first_order",
                           choices=("first_order", "grid", "random"))
            p.add_argument("--engine", type=_parse_engines,
                           default=["implicit"])
            p.add_argument("--grid", type=int, help="points per axis")
            p.add_argument("--draws", type=int, default=30)
            p.add_argument("--k-folds", type=int, default=5,
                           help="1 means a single 50/50 hold-out split")
        else:
            p.add_argument("--engines", "--engine", dest="engine",
                           type=_parse_engines,
                           default=["implicit"] if name == "hypergrad"
                           else ["forward_pcd"])
    return parser


def _spec_from_args(args):
    spec = RunSpec(command=args.command, synthetic=args.synthetic,
                   out=args.out, seed=args.seed)
    if args.command == "datagen":
        return spec
    spec.model = args.model
    spec.engines = args.engine
    spec.data = args.data
    spec.val_data = args.val_data
    spec.criterion = args.criterion
    spec.tol = args.tol
    spec.max_iters = args.max_iters
    spec.lam = args.lam
    spec.timing = not args.no_timing
    if args.command == "bilevel":
        spec.method = args.method
        spec.grid = args.grid
        spec.draws = args.draws
        spec.k_folds = args.k_folds
    if spec.data is not None and spec.synthetic is not None:
        raise SpecError("--data and --synthetic are mutually exclusive")
    if spec.tol is not None and not spec.tol > 0:
        raise SpecError("--tol must be positive")
    return spec


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        spec = _spec_from_args(args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", hg.RestrictedInjectivityWarning)
            result = COMMANDS[spec.command](spec)
        if result is not None:
            _emit(spec, *result)
    except (hg.NonConvergenceError, BilevelAbort, np.linalg.LinAlgError,
            FloatingPointError) as e:
        print(f"bihop: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SpecError, ParseError, DomainError, ValueError) as e:
        # ValueError covers dataset/label validation of user-supplied input
        print(f"bihop: error: {e}", file=sys.stderr)
        return EXIT_SPEC
    return 0


if __name__ == "__main__":
    sys.exit(main())
