"""Experimental harness: metrics, cross-validation, budget sweeps and method comparison.

Every method is trained on standardized (optionally pairwise-augmented)
features and standardized labels and predicts back in raw label units, so
budgets and widths are always reported in the units of the input labels.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines
from .curves import CurveFitError, interpolate_error_curve
from .data import Dataset, ScalingParams, augment_pairwise, split, standardize
from .losses import empirical_interval_error
from .seeding import sub_seed
from .solver import SolveStats, TrainConfig, train_budget

log = logging.getLogger(__name__)

FIXED_BUDGET_METHODS = ("intpred", "svr", "absreg", "linreg")
FIXED_ERROR_METHODS = ("quantreg", "absconf", "sqrconf", "gaussian")
METHODS = FIXED_BUDGET_METHODS + FIXED_ERROR_METHODS

DEFAULT_LAMBDAS = tuple(float(v) for v in np.logspace(-4, 1, 6))
DEFAULT_ALPHAS = tuple(round(0.01 * k, 2) for k in range(1, 31))
UNRELIABLE_FRACTION = 0.2


class MethodError(ValueError):
    """Unknown method, or a budget/alpha given to the wrong kind of method."""


def check_method(method: str) -> str:
    if method not in METHODS:
        raise MethodError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
    return method


def default_grid(method: str, lambdas=DEFAULT_LAMBDAS) -> list[dict]:
    """Tied ``lambda_w = lambda_v`` for intpred, ``reg`` otherwise; the Gaussian baseline is not tuned."""
    check_method(method)
    if method == "intpred":
        return [{"lambda_w": float(l), "lambda_v": float(l)} for l in lambdas]
    if method == "gaussian":
        return [{"reg": 0.0}]
    return [{"reg": float(l)} for l in lambdas]


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("INTERVALFORGE_THREADS", "1")))
    except ValueError:
        return 1


# -- fitting through a preprocessing pipeline --------------------------------


@dataclass(frozen=True)
class Preprocessor:
    scaling: ScalingParams
    augment: bool = False

    @classmethod
    def fit(cls, data: Dataset, augment: bool = False) -> tuple["Preprocessor", Dataset]:
        source = augment_pairwise(data) if augment else data
        scaled, params = standardize(source)
        return cls(params, augment), scaled

    def features(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.augment:
            ii, jj = np.triu_indices(X.shape[1])
            X = np.hstack([X, X[:, ii] * X[:, jj]])
        return self.scaling.transform_features(X)


@dataclass(frozen=True)
class FittedMethod:
    """A trained method in raw feature and label units."""

    method: str
    model: object
    prep: Preprocessor
    setting: dict
    params: dict
    stats: SolveStats | None = None

    @property
    def converged(self) -> bool:
        return self.stats is None or self.stats.converged

    def predict_bounds(self, X):
        lower, upper = self.model.predict_bounds(self.prep.features(X))
        s = self.prep.scaling
        return lower * s.label_std + s.label_mean, upper * s.label_std + s.label_mean


def fit_method(
    method: str,
    train: Dataset,
    *,
    budget: float | None = None,
    alpha: float | None = None,
    params: dict | None = None,
    augment: bool = False,
    seed: int = 0,
    solver: TrainConfig | None = None,
    calibration_fraction: float = 0.5,
) -> FittedMethod:
    """Train ``method`` at a budget (fixed-budget methods) or an alpha (fixed-error methods)."""
    check_method(method)
    params = dict(params or default_grid(method)[0])
    solver = solver or TrainConfig()
    if method in FIXED_BUDGET_METHODS:
        if budget is None or alpha is not None:
            raise MethodError(f"{method} is a fixed-budget method: pass a budget and no alpha")
        if budget < 0:
            raise MethodError("budget must be nonnegative")
    else:
        if alpha is None or budget is not None:
            raise MethodError(f"{method} is a fixed-error method: pass an alpha and no budget")

    prep, z = Preprocessor.fit(train, augment)
    stats = None
    if method in FIXED_BUDGET_METHODS:
        b_std = budget / prep.scaling.label_std
        setting = {"budget": float(budget)}
        if method == "intpred":
            config = replace(
                solver,
                budget=b_std,
                lambda_w=params.get("lambda_w", solver.lambda_w),
                lambda_v=params.get("lambda_v", solver.lambda_v),
            )
            model, stats = train_budget(z, config)
        else:
            model = baselines.train_fixed_width(z, b_std, method, params.get("reg", 0.0), solver)
    else:
        setting = {"alpha": float(alpha)}
        reg = params.get("reg", 0.0)
        if method == "quantreg":
            model = baselines.train_quantreg(z, alpha, reg, solver)
        elif method == "absconf":
            model = baselines.train_split_conformal(z, alpha, "absolute", reg, seed, calibration_fraction, solver)
        elif method == "sqrconf":
            model = baselines.train_split_conformal(z, alpha, "squared", reg, seed, calibration_fraction, solver)
        else:
            model = baselines.train_gaussian(z, alpha, reg)
    return FittedMethod(method, model, prep, setting, params, stats)


# -- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    test_error: float
    mean_width: float
    widths: np.ndarray
    covered: np.ndarray
    method: str = ""
    config: dict = field(default_factory=dict)

    @property
    def coverage(self) -> float:
        return float(self.covered.mean())

    def to_dict(self, per_example: bool = False) -> dict:
        out = {"method": self.method, "test_error": self.test_error, "mean_width": self.mean_width, "config": self.config}
        if per_example:
            out["per_example"] = [[float(w), bool(c)] for w, c in zip(self.widths, self.covered)]
        return out


def evaluate(model, test: Dataset, method: str = "", config: dict | None = None) -> EvalReport:
    """Test error and mean width of a model's (repaired) intervals."""
    lower, upper = model.predict_bounds(test.features)
    widths = upper - lower
    covered = (lower <= test.labels) & (test.labels <= upper)
    error = empirical_interval_error(test.labels, (lower, upper))
    return EvalReport(error, float(widths.mean()), widths, covered, method, dict(config or {}))


# -- cross-validation ----------------------------------------------------------


@dataclass(frozen=True)
class CVResult:
    best: dict
    best_index: int
    mean_errors: tuple
    mean_widths: tuple
    n_unconverged: int


def fold_indices(m: int, folds: int, seed: int) -> list[np.ndarray]:
    if folds < 2:
        raise ValueError("need at least 2 folds")
    perm = np.random.default_rng(seed).permutation(m)
    parts = [np.sort(p) for p in np.array_split(perm, folds)]
    if min(p.size for p in parts) < 2 or m - max(p.size for p in parts) < 2:
        raise ValueError(f"{folds} folds of {m} rows leave a fold with fewer than 2 rows")
    return parts


def cross_validate(
    train: Dataset,
    method: str,
    grid: list[dict],
    folds: int = 5,
    seed: int = 0,
    *,
    budget: float | None = None,
    alpha: float | None = None,
    augment: bool = False,
    solver: TrainConfig | None = None,
    calibration_fraction: float = 0.5,
) -> CVResult:
    """Pick the grid entry with the lowest mean validation error.

    Ties go to the smaller mean width, then to the earlier grid entry.
    """
    check_method(method)
    if not grid:
        raise ValueError("grid must be non-empty")
    parts = fold_indices(train.m, folds, seed)
    all_rows = np.arange(train.m)
    errors, widths, unconverged = [], [], 0
    for params in grid:
        e_sum, w_sum = [], []
        for k, val_rows in enumerate(parts):
            fit_rows = np.setdiff1d(all_rows, val_rows)
            fitted = fit_method(
                method,
                train.take(fit_rows),
                budget=budget,
                alpha=alpha,
                params=params,
                augment=augment,
                seed=sub_seed(seed, "conformal", k),
                solver=solver,
                calibration_fraction=calibration_fraction,
            )
            unconverged += not fitted.converged
            rep = evaluate(fitted, train.take(val_rows))
            e_sum.append(rep.test_error)
            w_sum.append(rep.mean_width)
        errors.append(float(np.mean(e_sum)))
        widths.append(float(np.mean(w_sum)))
    best = min(range(len(grid)), key=lambda i: (errors[i], widths[i], i))
    return CVResult(dict(grid[best]), best, tuple(errors), tuple(widths), unconverged)


# -- budget sweeps -------------------------------------------------------------


@dataclass(frozen=True)
class CurvePoint:
    budget: float
    error: float
    stderr: float
    mean_width: float
    n_ok: int = 1
    n_excluded: int = 0
    n_clamped: int = 0
    per_rep: tuple = ()

    @property
    def unreliable(self) -> bool:
        total = self.n_ok + self.n_excluded
        return total == 0 or self.n_excluded > UNRELIABLE_FRACTION * total

    @property
    def status(self) -> str:
        if self.n_ok == 0:
            return "unconverged"
        if self.n_clamped == self.n_ok:
            return "extrapolated"
        return "unreliable" if self.unreliable else "ok"


@dataclass(frozen=True)
class SweepOptions:
    """Knobs shared by sweeps and comparisons.

    ``lambdas`` builds each method's default grid; ``grids`` overrides it per method.
    """

    lambdas: tuple = DEFAULT_LAMBDAS
    grids: dict | None = None
    folds: int = 5
    alphas: tuple = DEFAULT_ALPHAS
    augment: bool = False
    solver: TrainConfig | None = None
    train_fraction: float = 0.8
    n_knots: int = 5
    calibration_fraction: float = 0.5

    def fit_kwargs(self) -> dict:
        return {"augment": self.augment, "solver": self.solver, "calibration_fraction": self.calibration_fraction}

    def grid_for(self, method: str) -> list[dict]:
        if self.grids and method in self.grids:
            return list(self.grids[method])
        return default_grid(method, self.lambdas)


def _fixed_budget_rep(train, test, method, budgets, cv_seed, conf_seed, opts):
    grid = opts.grid_for(method)
    cells = []
    for B in budgets:
        try:
            cv = cross_validate(train, method, grid, opts.folds, cv_seed, budget=B, **opts.fit_kwargs())
            fitted = fit_method(method, train, budget=B, params=cv.best, seed=conf_seed, **opts.fit_kwargs())
        except Exception as exc:  # recorded as an excluded cell
            log.warning("%s at budget %g failed: %s", method, B, exc)
            cells.append((math.nan, math.nan, False, False))
            continue
        rep = evaluate(fitted, test)
        cells.append((rep.test_error, rep.mean_width, fitted.converged, False))
    return cells


def fixed_error_points(train, test, method, cv_seed, conf_seed, opts) -> tuple[np.ndarray, np.ndarray]:
    """Test (width, error) pairs over the alpha grid; meta-parameters tuned once at the median alpha."""
    grid = opts.grid_for(method)
    alphas = sorted(opts.alphas)
    ref_alpha = alphas[len(alphas) // 2]
    cv = cross_validate(train, method, grid, opts.folds, cv_seed, alpha=ref_alpha, **opts.fit_kwargs())
    widths, errors = [], []
    for a in alphas:
        try:
            fitted = fit_method(method, train, alpha=a, params=cv.best, seed=conf_seed, **opts.fit_kwargs())
        except baselines.InsufficientCalibrationError:
            continue
        rep = evaluate(fitted, test)
        widths.append(rep.mean_width)
        errors.append(rep.test_error)
    return np.asarray(widths), np.asarray(errors)


def _merge_duplicate_widths(widths, errors):
    keys, inverse = np.unique(widths, return_inverse=True)
    merged = np.array([errors[inverse == i].mean() for i in range(keys.size)])
    return keys, merged


def _fixed_error_rep(train, test, method, budgets, cv_seed, conf_seed, opts):
    try:
        widths, errors = fixed_error_points(train, test, method, cv_seed, conf_seed, opts)
        keep = widths > 0
        widths, errors = _merge_duplicate_widths(widths[keep], errors[keep])
        res = interpolate_error_curve(widths, errors, budgets, opts.n_knots)
    except (CurveFitError, ValueError) as exc:
        log.warning("%s interpolation failed: %s", method, exc)
        return [(math.nan, math.nan, False, False) for _ in budgets]
    return [(float(e), float(B), True, bool(c)) for e, B, c in zip(res.errors, budgets, res.clamped)]


def _run_rep(data, method, budgets, seed, rep, opts):
    train, test = split(data, opts.train_fraction, sub_seed(seed, "split", rep))
    cv_seed, conf_seed = sub_seed(seed, "cv", rep), sub_seed(seed, "conformal", rep)
    if method in FIXED_BUDGET_METHODS:
        return _fixed_budget_rep(train, test, method, budgets, cv_seed, conf_seed, opts)
    return _fixed_error_rep(train, test, method, budgets, cv_seed, conf_seed, opts)


def _aggregate(budgets, reps) -> list[CurvePoint]:
    points = []
    for j, B in enumerate(budgets):
        cells = [r[j] for r in reps]
        ok = [c for c in cells if c[2] and np.isfinite(c[0])]
        errs = np.array([c[0] for c in ok])
        n = errs.size
        if n:
            error = float(np.mean(errs))
            stderr = float(np.std(errs, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            width = float(np.mean([c[1] for c in ok]))
        else:
            error = stderr = width = math.nan
        per_rep = tuple(float(c[0]) if (c[2] and np.isfinite(c[0])) else math.nan for c in cells)
        points.append(
            CurvePoint(float(B), error, stderr, width, n, len(cells) - n, sum(c[3] for c in ok), per_rep)
        )
    return points


def _check_budgets(budgets) -> list[float]:
    budgets = [float(b) for b in budgets]
    if not budgets:
        raise ValueError("budgets must be non-empty")
    if any(b < 0 for b in budgets) or any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be nonnegative and strictly increasing")
    return budgets


def budget_sweep(
    data: Dataset,
    method: str,
    budgets,
    repetitions: int = 1,
    seed: int = 0,
    options: SweepOptions | None = None,
) -> list[CurvePoint]:
    """Error per budget, averaged over fresh train/test splits.

    Each repetition draws a new split, cross-validates meta-parameters on the
    training part and evaluates on the test part. Fixed-error methods are
    run over the alpha grid and interpolated to the budgets.
    """
    check_method(method)
    budgets = _check_budgets(budgets)
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    opts = options or SweepOptions()

    def job(rep):
        return _run_rep(data, method, budgets, seed, rep, opts)

    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(job, range(repetitions)))
    else:
        reps = [job(r) for r in range(repetitions)]
    points = _aggregate(budgets, reps)
    excluded = sum(p.n_excluded for p in points)
    if excluded:
        log.warning("%s: %d sweep cells excluded (unconverged or failed)", method, excluded)
    return points


# -- line search ---------------------------------------------------------------


class TargetUnreachableError(RuntimeError):
    def __init__(self, message: str, best_error: float, budget: float):
        super().__init__(message)
        self.best_error = best_error
        self.budget = budget


@dataclass(frozen=True)
class LineSearchResult:
    budget: float
    model: object
    validation_error: float
    steps: int
    history: tuple


def alpha_line_search(
    train: Dataset,
    val: Dataset,
    target_error: float,
    config: TrainConfig,
    tol: float = 0.0,
    b_max: float | None = None,
    width_tol: float | None = None,
    max_steps: int = 60,
) -> LineSearchResult:
    """Bisect on the budget until validation error meets ``target_error + tol``.

    Maintains ``error(low) > target + tol >= error(high)`` and stops when the
    bracket is narrower than ``width_tol`` (default ``1e-3 * b_max``).
    ``b_max`` defaults to twice the training label range. The returned
    budget is the upper end of the final bracket.
    """
    if not 0.0 < target_error <= 1.0:
        raise ValueError("target_error must lie in (0, 1]")
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    goal = target_error + tol
    if b_max is None:
        b_max = 2.0 * float(np.ptp(train.labels)) or 1.0
    width_tol = width_tol if width_tol is not None else 1e-3 * b_max
    history = []

    def run(B):
        model, _ = train_budget(train, config.with_budget(B))
        err = evaluate(model, val).test_error
        history.append((float(B), err))
        return model, err

    lo_model, lo_err = run(0.0)
    if lo_err <= goal:
        return LineSearchResult(0.0, lo_model, lo_err, 1, tuple(history))
    hi_model, hi_err = run(b_max)
    if hi_err > goal:
        raise TargetUnreachableError(
            f"validation error {hi_err:.4f} at b_max={b_max:.4g} is above target {target_error}", hi_err, b_max
        )
    lo, hi = 0.0, float(b_max)
    steps = 2
    while hi - lo > width_tol and steps < max_steps:
        mid = 0.5 * (lo + hi)
        model, err = run(mid)
        steps += 1
        if err <= goal:
            hi, hi_model, hi_err = mid, model, err
        else:
            lo = mid
    return LineSearchResult(hi, hi_model, hi_err, steps, tuple(history))


# -- comparison ----------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonTable:
    methods: tuple
    budgets: tuple
    curves: dict
    normalized: tuple | None = None
    config: dict = field(default_factory=dict)

    def ratio(self, method: str) -> list[float]:
        """IntPred mean error divided by ``method``'s, per budget."""
        if "intpred" not in self.curves:
            return [math.nan] * len(self.budgets)
        out = []
        for p, q in zip(self.curves["intpred"], self.curves[method]):
            if not (np.isfinite(p.error) and np.isfinite(q.error)):
                out.append(math.nan)
            elif q.error == 0:
                out.append(math.inf if p.error > 0 else 1.0)
            else:
                out.append(p.error / q.error)
        return out

    def rows(self) -> list[dict]:
        rows = []
        for method in self.methods:
            ratios = self.ratio(method)
            for j, p in enumerate(self.curves[method]):
                rows.append(
                    {
                        "method": method,
                        "budget": p.budget,
                        "normalized_budget": self.normalized[j] if self.normalized else math.nan,
                        "error": p.error,
                        "stderr": p.stderr,
                        "mean_width": p.mean_width,
                        "n_ok": p.n_ok,
                        "n_excluded": p.n_excluded,
                        "status": p.status,
                        "ratio_intpred": ratios[j],
                    }
                )
        return rows

    def to_csv(self) -> str:
        return _csv(self.rows())

    def curves_csv(self) -> str:
        keys = ("method", "budget", "error", "stderr", "mean_width")
        return _csv([{k: r[k] for k in keys} for r in self.rows()])

    def to_json(self) -> str:
        doc = {
            "methods": list(self.methods),
            "budgets": list(self.budgets),
            "normalized_budgets": list(self.normalized) if self.normalized else None,
            "config": self.config,
            "cells": [_json_safe(r) for r in self.rows()],
            "per_rep": {m: [list(p.per_rep) for p in self.curves[m]] for m in self.methods},
        }
        return json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        head = ["method"] + [f"B={b:g}" for b in self.budgets]
        lines = [head]
        for m in self.methods:
            cells = [m]
            for p in self.curves[m]:
                cells.append(p.status if p.status == "unconverged" else f"{p.error:.4f}±{p.stderr:.4f}")
            lines.append(cells)
        if "intpred" in self.curves:
            for m in self.methods:
                if m != "intpred":
                    lines.append([f"intpred/{m}"] + [f"{r:.3f}" for r in self.ratio(m)])
        widths = [max(len(row[i]) for row in lines) for i in range(len(head))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(rows[0].keys())
        for r in rows:
            writer.writerow([_fmt(v) for v in r.values()])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else str(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def normalize_budgets(budgets, intpred_curve: list[CurvePoint], target: float = 0.1) -> tuple | None:
    """Rescale budgets so the budget where IntPred's mean error crosses ``target`` maps to 1."""
    b = np.array([p.budget for p in intpred_curve])
    e = np.array([p.error for p in intpred_curve])
    ok = np.isfinite(e)
    b, e = b[ok], e[ok]
    for i in range(len(b) - 1):
        if e[i] >= target >= e[i + 1] and e[i] != e[i + 1]:
            b_star = b[i] + (e[i] - target) * (b[i + 1] - b[i]) / (e[i] - e[i + 1])
            return tuple(float(x / b_star) for x in budgets)
    log.warning("IntPred curve does not cross error %.2f; budgets left unnormalized", target)
    return None


def compare_methods(
    data: Dataset,
    methods,
    budgets,
    repetitions: int = 1,
    seed: int = 0,
    options: SweepOptions | None = None,
    normalize: bool = False,
) -> ComparisonTable:
    """Sweep every method over the same seeded splits and tabulate errors per budget."""
    methods = tuple(check_method(m) for m in methods)
    if not methods:
        raise ValueError("methods must be non-empty")
    budgets = tuple(_check_budgets(budgets))
    opts = options or SweepOptions()
    curves = {m: budget_sweep(data, m, budgets, repetitions, seed, opts) for m in methods}
    normalized = None
    if normalize and "intpred" in curves:
        normalized = normalize_budgets(budgets, curves["intpred"])
    config = {
        "repetitions": repetitions,
        "seed": seed,
        "folds": opts.folds,
        "alphas": list(opts.alphas),
        "augment": opts.augment,
        "train_fraction": opts.train_fraction,
        "calibration_fraction": opts.calibration_fraction,
    }
    return ComparisonTable(methods, budgets, curves, normalized, config)
