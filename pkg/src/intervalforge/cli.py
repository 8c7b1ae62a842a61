"""Command-line entry point: ``intervalforge <command> [flags]``.

Commands: train, predict, evaluate, sweep, compare, synth, oracle-check.
Exit codes are 0 on success, 1 on a runtime or convergence failure and 2 on
a usage error. Every command that writes files also writes a manifest with
its flags, seed and the SHA-256 digests of its inputs and outputs.

All randomness derives from ``--seed`` through the named streams of
:mod:`intervalforge.seeding`.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import oracle, serialization
from .data import (
    Dataset,
    DataError,
    MaxFsInstance,
    NoiseProfile,
    load_csv,
    load_features,
    maxfs_instance,
    save_dataset,
    synth_heteroskedastic,
)
from .evaluation import (
    DEFAULT_ALPHAS,
    DEFAULT_LAMBDAS,
    FIXED_BUDGET_METHODS,
    METHODS,
    MethodError,
    Preprocessor,
    SweepOptions,
    budget_sweep,
    compare_methods,
    cross_validate,
    default_grid,
    evaluate,
    fit_method,
)
from .seeding import sub_seed
from .solver import SolverError, TrainConfig, assemble_budget_program, solve

log = logging.getLogger("intervalforge")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
SUITES = ("erm", "vc", "growth", "all")


class UsageError(Exception):
    pass


# -- flag parsing --------------------------------------------------------------


def _floats(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one number")
    return values


def _methods(text: str) -> tuple[str, ...]:
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [n for n in names if n not in METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown method {', '.join(bad) or text!r}; valid methods: {', '.join(METHODS)}")
    return names


def _method(text: str) -> str:
    if text not in METHODS:
        raise argparse.ArgumentTypeError(f"unknown method {text!r}; valid methods: {', '.join(METHODS)}")
    return text


def _add_data(p, label_required=True):
    p.add_argument("--data", required=True, help="headered numeric CSV")
    p.add_argument("--label", required=label_required, help="label column name or zero-based index")


def _add_solver(p):
    p.add_argument("--lambda-w", type=float, default=None, help="center regularization (disables CV when set)")
    p.add_argument("--lambda-v", type=float, default=None, help="width regularization (disables CV when set)")
    p.add_argument("--tol", type=float, default=None, help="solver optimality tolerance")
    p.add_argument("--merged-constraint", action="store_true", help="use the merged width/budget constraint form")
    p.add_argument("--augment", action="store_true", help="append pairwise feature products before scaling")
    p.add_argument("--calibration-fraction", type=float, default=0.5, help="split-conformal calibration share")


def _add_cv(p):
    p.add_argument("--folds", type=int, default=5, help="CV folds (default 5)")
    p.add_argument("--lambdas", type=_floats, default=DEFAULT_LAMBDAS, help="CV grid of regularization strengths")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intervalforge", description="Budget-constrained prediction intervals.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit one method and write a model file")
    _add_data(p)
    p.add_argument("--method", required=True, type=_method)
    p.add_argument("--budget", type=float, help="mean width budget (fixed-budget methods)")
    p.add_argument("--alpha", type=float, help="significance level (fixed-error methods)")
    _add_cv(p)
    _add_solver(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--dump-program", metavar="PATH", help="write the assembled program as text (intpred only)")

    p = sub.add_parser("predict", help="write interval bounds for a CSV")
    p.add_argument("--model", required=True)
    _add_data(p, label_required=False)
    p.add_argument("--out", help="CSV path (default stdout)")

    p = sub.add_parser("evaluate", help="test error and mean width of a model file")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--per-example", action="store_true")
    p.add_argument("--out", help="JSON path (default stdout)")

    for name, help_text in (("sweep", "budget-error curve of one method"), ("compare", "compare methods per budget")):
        p = sub.add_parser(name, help=help_text)
        _add_data(p)
        p.add_argument("--method", required=True, type=_methods, help="method name" + ("s, comma-separated" if name == "compare" else ""))
        p.add_argument("--budgets", required=True, type=_floats, help="strictly increasing, comma-separated")
        p.add_argument("--alphas", type=_floats, default=DEFAULT_ALPHAS, help="alpha grid for fixed-error methods")
        p.add_argument("--reps", type=int, default=1)
        _add_cv(p)
        _add_solver(p)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")
        if name == "compare":
            p.add_argument("--normalize-budgets", action="store_true", help="rescale so intpred error 0.1 maps to 1")

    p = sub.add_parser("synth", help="write a heteroskedastic synthetic CSV")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--intercept", type=float, default=1.0, help="noise scale at x = 0")
    p.add_argument("--slopes", type=_floats, default=(), help="noise-scale slopes per feature")
    p.add_argument("--absolute", action="store_true", help="noise scale grows with |x|")
    p.add_argument("--noise", choices=("gaussian", "uniform"), default="gaussian")
    p.add_argument("--low", type=float, default=-1.0)
    p.add_argument("--high", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path; a .json sidecar is written next to it")

    p = sub.add_parser("oracle-check", help="run the brute-force reference checks")
    p.add_argument("--suite", choices=SUITES, default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON path (default stdout)")
    return parser


# -- shared helpers ------------------------------------------------------------


def _check_calibration(args):
    if not 0 < args.calibration_fraction < 1:
        raise UsageError("--calibration-fraction must lie in (0, 1)")


def _train_config(args, budget: float = 1.0) -> TrainConfig:
    if hasattr(args, "calibration_fraction"):
        _check_calibration(args)
    config = TrainConfig(budget=budget, merged_constraint=bool(getattr(args, "merged_constraint", False)))
    if getattr(args, "tol", None) is not None:
        if args.tol <= 0:
            raise UsageError("--tol must be positive")
        config = replace(config, tol_opt=args.tol)
    return config


def _fixed_params(method: str, args) -> dict | None:
    """Explicit regularization from --lambda-w/--lambda-v, or None to cross-validate."""
    if args.lambda_w is None and args.lambda_v is None:
        return None
    lam_w = args.lambda_w if args.lambda_w is not None else args.lambda_v
    lam_v = args.lambda_v if args.lambda_v is not None else args.lambda_w
    if lam_w < 0 or lam_v < 0:
        raise UsageError("regularization strengths must be nonnegative")
    if method == "intpred":
        return {"lambda_w": lam_w, "lambda_v": lam_v}
    if method == "gaussian":
        return {"reg": 0.0}
    return {"reg": lam_w}


def _flags(args) -> dict:
    return dict(sorted(vars(args).items()))


def _write_manifest(path: Path, args, argv, inputs, outputs, started):
    doc = serialization.build_manifest(args.command, argv, _flags(args), getattr(args, "seed", None), inputs, outputs, started)
    path.write_text(serialization.dumps(doc), encoding="utf-8")
    return path


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.stem + ".manifest.json")


def _emit(text: str, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- commands ------------------------------------------------------------------


def cmd_train(args, argv) -> int:
    method = args.method
    fixed_budget = method in FIXED_BUDGET_METHODS
    if args.budget is not None and args.alpha is not None:
        raise UsageError("--budget and --alpha are mutually exclusive: pass --budget to fixed-budget methods "
                         f"({', '.join(FIXED_BUDGET_METHODS)}) and --alpha to the others")
    if fixed_budget and args.budget is None:
        raise UsageError(f"{method} is a fixed-budget method and needs --budget")
    if not fixed_budget and args.alpha is None:
        raise UsageError(f"{method} is a fixed-error method and needs --alpha")
    if args.budget is not None and args.budget < 0:
        raise UsageError("--budget must be nonnegative")
    if args.alpha is not None and not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if args.dump_program and method != "intpred":
        raise UsageError("--dump-program applies to intpred only")

    started = serialization.now()
    data = load_csv(args.data, args.label)
    solver = _train_config(args)
    setting = {"budget": args.budget} if fixed_budget else {"alpha": args.alpha}
    params = _fixed_params(method, args)
    cv = None
    if params is None:
        grid = default_grid(method, args.lambdas)
        if len(grid) == 1 or args.folds < 2:
            params = grid[0]
        else:
            cv = cross_validate(data, method, grid, args.folds, sub_seed(args.seed, "cv"), augment=args.augment,
                                solver=solver, calibration_fraction=args.calibration_fraction, **setting)
            params = cv.best
    fitted = fit_method(method, data, params=params, augment=args.augment, seed=sub_seed(args.seed, "conformal"),
                        solver=solver, calibration_fraction=args.calibration_fraction, **setting)
    report = evaluate(fitted, data)
    train_stats = {"train_error": report.test_error, "train_mean_width": report.mean_width}
    if fitted.stats is not None:
        train_stats["solver"] = fitted.stats.to_dict()
    if cv is not None:
        train_stats["cv"] = {"mean_errors": cv.mean_errors, "mean_widths": cv.mean_widths, "best_index": cv.best_index}
    out = Path(args.out)
    doc = serialization.model_to_dict(fitted, solver, train_stats, data.feature_names)
    serialization.save_model(out, doc)
    outputs = [out]
    if args.dump_program:
        prep, z = Preprocessor.fit(data, args.augment)
        config = replace(solver, budget=args.budget / prep.scaling.label_std, **params)
        dump = Path(args.dump_program)
        dump.write_text(assemble_budget_program(z, config).to_text(), encoding="utf-8")
        outputs.append(dump)
    _write_manifest(_manifest_path(out), args, argv, [args.data], outputs, started)
    print(f"train_error={report.test_error:.6f} mean_width={report.mean_width:.6f}")
    if not fitted.converged:
        print(f"solver did not converge: {fitted.stats.status}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_predict(args, argv) -> int:
    fitted, doc = serialization.load_model(args.model)
    if args.label is not None:
        X = load_csv(args.data, args.label).features
    else:
        X = load_features(args.data, doc.get("feature_names"))
    lower, upper = fitted.predict_bounds(X)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["lower", "upper"])
    writer.writerows([[repr(float(lo)), repr(float(hi))] for lo, hi in zip(lower, upper)])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_evaluate(args, argv) -> int:
    fitted, doc = serialization.load_model(args.model)
    data = load_csv(args.data, args.label)
    report = evaluate(fitted, data, fitted.method, {"setting": fitted.setting, "params": fitted.params})
    _emit(serialization.dumps(report.to_dict(per_example=args.per_example)), args.out)
    print(f"test_error={report.test_error:.6f} mean_width={report.mean_width:.6f}", file=sys.stderr)
    return EXIT_OK


def _sweep_options(args) -> SweepOptions:
    grids = None
    if args.lambda_w is not None or args.lambda_v is not None:
        grids = {m: [_fixed_params(m, args)] for m in args.method}
    if args.reps < 1:
        raise UsageError("--reps must be at least 1")
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    if any(not 0 < a < 1 for a in args.alphas):
        raise UsageError("--alphas must lie in (0, 1)")
    b = np.asarray(args.budgets)
    if (b < 0).any() or (np.diff(b) <= 0).any():
        raise UsageError("--budgets must be nonnegative and strictly increasing")
    return SweepOptions(
        lambdas=tuple(args.lambdas),
        grids=grids,
        folds=args.folds,
        alphas=tuple(sorted(args.alphas)),
        augment=args.augment,
        solver=_train_config(args),
        calibration_fraction=args.calibration_fraction,
    )


def cmd_sweep(args, argv) -> int:
    if len(args.method) != 1:
        raise UsageError("sweep takes a single --method; use compare for several")
    opts = _sweep_options(args)
    started = serialization.now()
    data = load_csv(args.data, args.label)
    method = args.method[0]
    points = budget_sweep(data, method, args.budgets, args.reps, args.seed, opts)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "budget", "error", "stderr", "mean_width", "status"])
    for p in points:
        writer.writerow([method, repr(p.budget), repr(p.error), repr(p.stderr), repr(p.mean_width), p.status])
    curves = out / "curves.csv"
    curves.write_text(buf.getvalue(), encoding="utf-8")
    summary = out / "sweep.json"
    summary.write_text(
        serialization.dumps({"method": method, "points": [{**vars(p), "status": p.status} for p in points]}),
        encoding="utf-8",
    )
    _write_manifest(out / "manifest.json", args, argv, [args.data], [curves, summary], started)
    sys.stdout.write(buf.getvalue())
    return EXIT_FAILURE if all(p.status == "unconverged" for p in points) else EXIT_OK


def cmd_compare(args, argv) -> int:
    opts = _sweep_options(args)
    started = serialization.now()
    data = load_csv(args.data, args.label)
    table = compare_methods(data, args.method, args.budgets, args.reps, args.seed, opts, args.normalize_budgets)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "comparison.csv": table.to_csv(),
        "curves.csv": table.curves_csv(),
        "comparison.json": table.to_json(),
        "comparison.txt": table.to_text(),
    }
    written = []
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8")
        written.append(out / name)
    _write_manifest(out / "manifest.json", args, argv, [args.data], written, started)
    sys.stdout.write(table.to_text())
    return EXIT_OK


def cmd_synth(args, argv) -> int:
    if args.m < 1 or args.d < 1:
        raise UsageError("--m and --d must be positive")
    if args.low >= args.high:
        raise UsageError("--low must be below --high")
    started = serialization.now()
    profile = NoiseProfile(args.intercept, tuple(args.slopes), args.absolute, args.noise, args.low, args.high)
    data = synth_heteroskedastic(args.m, args.d, profile, sub_seed(args.seed, "synth"))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sidecar = save_dataset(data, out)
    _write_manifest(_manifest_path(out), args, argv, [], [out, sidecar], started)
    return EXIT_OK


# -- oracle checks -------------------------------------------------------------


def _random_instance(rng, m: int) -> tuple:
    x = rng.normal(size=m)
    y = 1.5 * x + rng.normal(size=m) * (0.3 + np.abs(x))
    return Dataset(x.reshape(-1, 1), y), float(rng.uniform(0.0, 2.0))


def _erm_suite(rng) -> list[dict]:
    checks = []
    data, budget = maxfs_instance(MaxFsInstance([[1.0], [2.0]], [1.0, 1.0]))
    sol = oracle.brute_force_erm_1d(data, budget)
    m = sol.model
    structure = abs(m.c_l) < 1e-7 and abs(m.c_u) < 1e-7 and abs(float(m.w_l[0] - m.w_u[0])) < 1e-7
    checks.append({"name": "maxfs_A=[[1],[2]]", "error": sol.error, "expected": 0.2,
                   "pass": sol.error == 0.2 and structure, "zero_biases_equal_weights": structure})
    for k in range(20):
        train, B = _random_instance(rng, int(rng.integers(3, 11)))
        sol = oracle.brute_force_erm_1d(train, B)
        config = TrainConfig(budget=B, lambda_w=0.0, lambda_v=0.0)
        model, _ = solve(assemble_budget_program(train, config), config)
        lower, upper = model.predict_bounds(train.features)
        solver_error = float(np.mean((train.labels < lower) | (train.labels > upper)))
        checks.append({"name": f"sandwich_{k}", "m": train.m, "budget": B, "oracle_error": sol.error,
                       "solver_error": solver_error, "pass": sol.error <= solver_error})
    for k in range(10):
        train, B = _random_instance(rng, int(rng.integers(3, 9)))
        lam = float(rng.choice([0.0, 1e-3, 1e-1]))
        config = TrainConfig(budget=B, lambda_w=lam, lambda_v=lam)
        program = assemble_budget_program(train, config)
        _, stats = solve(program, config)
        ref = oracle.reference_solve(program)
        checks.append({"name": f"reference_{k}", "solver": stats.objective, "reference": ref,
                       "pass": abs(ref - stats.objective) <= 1e-4})
    return checks


def _vc_suite(rng) -> list[dict]:
    classes = [("thresholds_5", oracle.thresholds_1d(np.arange(5.0))), ("all_labelings_3", oracle.all_labelings(3))]
    for k in range(20):
        n = int(rng.integers(2, 7))
        classes.append((f"random_{k}", oracle.random_binary_class(n, int(rng.integers(1, 2**n + 1)), rng)))
    checks = []
    for name, cls in classes:
        vc_h, vc_loss, equal = oracle.loss_class_vc_equality(cls)
        checks.append({"name": name, "vc_h": vc_h, "vc_loss": vc_loss, "pass": bool(equal)})
    return checks


def _growth_suite(rng) -> list[dict]:
    checks = []
    for k in range(20):
        n = int(rng.integers(1, 9))
        base = oracle.random_real_class(n, int(rng.integers(1, 25)), rng)
        ys = rng.integers(0, 5, size=n).astype(float)
        g = oracle.growth_product_bound_check(base, ys)
        checks.append({"name": f"growth_{k}", "lhs": g.lhs, "rhs": g.rhs, "sauer_bound": g.sauer_bound,
                       "pass": bool(g.holds and g.sauer_holds)})
    return checks


def run_oracle_suites(suite: str, seed: int) -> dict:
    runners = {"erm": _erm_suite, "vc": _vc_suite, "growth": _growth_suite}
    selected = list(runners) if suite == "all" else [suite]
    results = {}
    for name in selected:
        rng = np.random.default_rng([seed & 0xFFFFFFFF, 100 + list(runners).index(name)])
        results[name] = runners[name](rng)
    passed = all(c["pass"] for checks in results.values() for c in checks)
    return {
        "suite": suite,
        "seed": seed,
        "pass": passed,
        "constants": {
            "eta": oracle.ETA,
            "budget_slack": oracle.BUDGET_SLACK,
            "max_erm_rows": oracle.MAX_ERM_ROWS,
            "max_reference_vars": oracle.MAX_REFERENCE_VARS,
            "max_vc_domain": oracle.MAX_VC_DOMAIN,
            "max_vc_class": oracle.MAX_VC_CLASS,
            "max_growth_sample": oracle.MAX_GROWTH_SAMPLE,
        },
        "checks": results,
    }


def cmd_oracle_check(args, argv) -> int:
    report = run_oracle_suites(args.suite, args.seed)
    _emit(serialization.dumps(report), args.out)
    return EXIT_OK if report["pass"] else EXIT_FAILURE


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
    "synth": cmd_synth,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except (UsageError, MethodError) as exc:
        parser.print_usage(sys.stderr)
        print(f"intervalforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SolverError, serialization.ModelFormatError, ValueError, RuntimeError, OSError) as exc:
        print(f"intervalforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
