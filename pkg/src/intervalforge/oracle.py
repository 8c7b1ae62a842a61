"""Brute-force references for small instances.

* :func:`brute_force_erm_1d` solves the budgeted interval 0/1 ERM exactly for
  one-dimensional linear boundaries.
* :func:`reference_solve` evaluates the optimum of a budget program by grid
  refinement, independently of the QP solver.
* :func:`vc_dimension`, :func:`loss_class_vc_equality` and
  :func:`growth_product_bound_check` enumerate shattered sets and assignment
  vectors of finite classes.

Exactness of the 1-d ERM search
-------------------------------
Fix the set ``C`` of covered points of an optimal pair ``(l, u)``. The pairs
covering at least ``C`` form a polyhedron cut out by ``l(x_i) <= y_i``,
``u(x_i) >= y_i`` (``i`` in ``C``) and ``l(x_j) <= u(x_j)`` (all ``j``); the
budget is a bound on the linear function ``mean(u - l)``. Minimizing that
mean over the polyhedron (bounded below by 0) reaches a vertex that still
satisfies the budget, so it suffices to enumerate vertices. A vertex has
four independent tight constraints. ``u - l`` is linear in ``x`` and
nonnegative on the sample, so it can vanish only at the smallest or largest
``x`` unless ``u = l``. Hence every vertex is one of:

1. ``l`` and ``u`` each pass through two data points;
2. ``l`` passes through two data points and ``u`` through one data point and
   the point where it meets ``l`` at an extreme ``x`` (or the symmetric case);
3. ``l = u`` through two data points.

When all covered points share one ``x`` the polyhedron contains a line and
horizontal candidates cover it. The search enumerates exactly these
families. Coverage, consistency and budget are tested with a tolerance of
``ETA`` so that touching points computed in floating point count as touching.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .losses import eps_insensitive
from .predictor import BoundaryModel
from .solver import ConvexProgram

ETA = 1e-9
BUDGET_SLACK = 1e-7
MAX_ERM_ROWS = 14
MAX_REFERENCE_VARS = 12
MAX_VC_DOMAIN = 12
MAX_VC_CLASS = 4096
MAX_GROWTH_SAMPLE = 10


class GuardError(ValueError):
    """Instance exceeds the documented enumeration limits."""


@dataclass(frozen=True)
class OracleSolution:
    model: BoundaryModel
    error: float
    mean_width: float
    n_candidates: int


# -- exact 1-d ERM -------------------------------------------------------------


def _lines_through_points(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """(slope, intercept) rows for every pair with distinct x, plus horizontals."""
    rows = []
    for i, j in itertools.combinations(range(x.size), 2):
        if x[i] != x[j]:
            s = (y[j] - y[i]) / (x[j] - x[i])
            rows.append((s, y[i] - s * x[i]))
    rows.extend((0.0, yi) for yi in y)
    return np.unique(np.array(rows, dtype=float), axis=0)


def _pinned(lines: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each line and extreme x, lines through the meeting point and each data point."""
    owners, out = [], []
    for x_e in (x.min(), x.max()):
        meet = lines[:, 0] * x_e + lines[:, 1]
        for k in range(x.size):
            if x[k] == x_e:
                continue
            s = (y[k] - meet) / (x[k] - x_e)
            out.append(np.column_stack([s, meet - s * x_e]))
            owners.append(np.arange(lines.shape[0]))
    if not out:
        return np.empty((0, 2)), np.empty(0, dtype=int)
    return np.vstack(out), np.concatenate(owners)


def _score(lower: np.ndarray, upper: np.ndarray, x, y, budget):
    """Miss counts, mean widths and feasibility for paired candidate lines."""
    lv = lower[:, :1] * x + lower[:, 1:]
    uv = upper[:, :1] * x + upper[:, 1:]
    covered = (lv - ETA <= y) & (y <= uv + ETA)
    misses = x.size - covered.sum(axis=1)
    widths = (uv - lv).mean(axis=1)
    ends = np.array([x.min(), x.max()])
    gap_l = lower[:, :1] * ends + lower[:, 1:]
    gap_u = upper[:, :1] * ends + upper[:, 1:]
    consistent = (gap_l <= gap_u + ETA).all(axis=1)
    feasible = consistent & (widths <= budget + BUDGET_SLACK)
    return misses, widths, feasible


def brute_force_erm_1d(train: Dataset, B: float) -> OracleSolution:
    """Exact minimum of the interval 0/1 error with mean width at most ``B``.

    Limited to ``d = 1`` and ``m <= 14``; see the module notes for why the
    candidate families suffice.
    """
    if train.d != 1:
        raise GuardError("brute_force_erm_1d needs d = 1")
    if train.m > MAX_ERM_ROWS:
        raise GuardError(f"brute_force_erm_1d is limited to m <= {MAX_ERM_ROWS}")
    if B < 0:
        raise ValueError("budget must be nonnegative")
    x, y = train.features[:, 0], train.labels
    lines = _lines_through_points(x, y)
    K = lines.shape[0]
    ii, jj = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    lower_parts = [lines[ii.ravel()]]
    upper_parts = [lines[jj.ravel()]]
    pinned, owner = _pinned(lines, x, y)
    if pinned.size:
        lower_parts += [lines[owner], pinned]
        upper_parts += [pinned, lines[owner]]
    lower = np.vstack(lower_parts)
    upper = np.vstack(upper_parts)

    misses, widths, feasible = _score(lower, upper, x, y, B)
    if not feasible.any():  # unreachable: identical lines are always feasible
        raise RuntimeError("no feasible candidate pair")
    idx = np.flatnonzero(feasible)
    best = idx[np.lexsort((idx, widths[idx], misses[idx]))[0]]
    (s_l, c_l), (s_u, c_u) = lower[best], upper[best]
    model = BoundaryModel([s_l], c_l, [s_u], c_u)
    return OracleSolution(model, float(misses[best] / train.m), float(widths[best]), int(lower.shape[0]))


def exhaustive_erm_1d(train: Dataset, B: float) -> float:
    """Slow cross-check: minimum error over covered subsets, each tested by an LP.

    Only for tiny instances (m <= 8).
    """
    from scipy.optimize import linprog

    if train.d != 1 or train.m > 8:
        raise GuardError("exhaustive_erm_1d needs d = 1 and m <= 8")
    x, y = train.features[:, 0], train.labels
    m = train.m
    # variables (s_l, c_l, s_u, c_u)
    consistency = np.column_stack([x, np.ones(m), -x, -np.ones(m)])
    budget_row = np.array([[-x.mean(), -1.0, x.mean(), 1.0]])
    for size in range(m, 0, -1):
        for subset in itertools.combinations(range(m), size):
            idx = list(subset)
            A = [consistency, budget_row]
            b = [np.zeros(m), [B]]
            A.append(np.column_stack([x[idx], np.ones(size), np.zeros(size), np.zeros(size)]))
            b.append(y[idx])
            A.append(np.column_stack([np.zeros(size), np.zeros(size), -x[idx], -np.ones(size)]))
            b.append(-y[idx])
            res = linprog(
                np.zeros(4), A_ub=np.vstack(A), b_ub=np.concatenate(b), bounds=[(None, None)] * 4, method="highs"
            )
            if res.status == 0:
                return (m - size) / m
    return 1.0


# -- grid reference for the budget program ------------------------------------


def _budget_objective(X, y, B, lam_w, lam_v, W, Bc, V):
    """Objective with ``a = B - <v, x_bar>`` and exact slacks, for grids of (w, b, v)."""
    x_bar = X.mean(axis=0)
    center = W @ X.T + Bc[:, None]
    width = V @ (X - x_bar).T + B
    feasible = (width >= -1e-12 * (1.0 + B)).all(axis=1)
    loss = eps_insensitive(y[None, :], center, np.maximum(width, 0.0) / 2.0).mean(axis=1)
    obj = loss + lam_w * (W**2).sum(axis=1) + lam_v * (V**2).sum(axis=1)
    return np.where(feasible, obj, np.inf)


def _dense_budget_rows(X, y, B):
    """Inequalities ``A @ (w, b, v, xi) <= rhs`` of the budget program with ``a`` eliminated.

    Built from the data directly so the reference never sees the solver's
    assembled matrices.
    """
    m, d = X.shape
    Xc = X - X.mean(axis=0)
    eye, zeros_m, ones = np.eye(m), np.zeros((m, 1)), np.ones((m, 1))
    upper = np.hstack([-X, -ones, -0.5 * Xc, -eye])  # y - center - width/2 <= xi
    lower = np.hstack([X, ones, -0.5 * Xc, -eye])  # center - y - width/2 <= xi
    nonneg_xi = np.hstack([np.zeros((m, d)), zeros_m, np.zeros((m, d)), -eye])
    nonneg_width = np.hstack([np.zeros((m, d)), zeros_m, -Xc, np.zeros((m, m))])
    A = np.vstack([upper, lower, nonneg_xi, nonneg_width])
    rhs = np.concatenate([B / 2.0 - y, y + B / 2.0, np.zeros(m), np.full(m, B)])
    return A, rhs


def _coarse_grid(X, y, B, lam_w, lam_v, points: int, levels: int) -> np.ndarray:
    """Best ``(w, b, v)`` of a recentring, shrinking grid; only used as a starting point."""
    d = X.shape[1]
    dims = 2 * d + 1
    x_spread = max(float(np.ptp(X, axis=0).max()), 1e-6)
    y_spread = float(np.ptp(y)) + 1.0
    r_slope = 4.0 * y_spread / x_spread
    center = np.zeros(dims)
    center[d] = float(np.median(y))
    half = np.full(dims, r_slope)
    half[d] = y_spread + r_slope * float(np.abs(X).max())
    offsets = np.linspace(-1.0, 1.0, points)
    best_val, best = math.inf, center.copy()
    for _ in range(levels):
        axes = [center[k] + half[k] * offsets for k in range(dims)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dims)
        vals = _budget_objective(X, y, B, lam_w, lam_v, mesh[:, :d], mesh[:, d], mesh[:, d + 1 :])
        k = int(np.argmin(vals))
        if vals[k] <= best_val:
            best_val, best = float(vals[k]), mesh[k].copy()
        index = np.unravel_index(k, (points,) * dims)
        on_edge = np.array([i in (0, points - 1) for i in index])
        center = best
        half = np.where(on_edge & np.isfinite(best_val), half, half * 0.5)
    return best


def reference_solve(program: ConvexProgram, points: int = 9, levels: int = 12) -> float:
    """Optimal objective of a budget program, computed without the main solver.

    The width intercept is eliminated exactly: raising ``a`` never increases
    the loss, so ``a = B - <v, x_bar>`` (budget tight) is optimal. Without
    regularization the remainder is a linear program, solved by HiGHS. With
    regularization a coarse grid over ``(w, b, v)`` supplies a start for an
    SLSQP solve of the slack formulation; the returned value is re-evaluated
    with exact slacks, so it is always the objective of a feasible point.
    """
    from scipy.optimize import linprog, minimize

    if program.kind != "budget" or program.params.get("merged_constraint"):
        raise ValueError("reference_solve handles the separate-constraint budget program only")
    if program.n_vars > MAX_REFERENCE_VARS:
        raise GuardError(f"reference_solve is limited to {MAX_REFERENCE_VARS} variables, got {program.n_vars}")
    X, y = program.train.features, program.train.labels
    m, d = X.shape
    B = program.params["budget"]
    lam_w, lam_v = program.params["lambda_w"], program.params["lambda_v"]
    A, rhs = _dense_budget_rows(X, y, B)
    n = 2 * d + 1 + m
    c = np.r_[np.zeros(2 * d + 1), np.full(m, 1.0 / m)]

    if lam_w == 0 and lam_v == 0:
        res = linprog(c, A_ub=A, b_ub=rhs, bounds=[(None, None)] * n, method="highs")
        if res.status != 0:
            raise RuntimeError(f"reference LP failed: {res.message}")
        z = res.x
    else:
        start = _coarse_grid(X, y, B, lam_w, lam_v, points, levels)
        width = (X - X.mean(axis=0)) @ start[d + 1 :] + B
        center = X @ start[:d] + start[d]
        xi0 = eps_insensitive(y, center, np.maximum(width, 0.0) / 2.0)
        reg = np.r_[np.full(d, lam_w), 0.0, np.full(d, lam_v), np.zeros(m)]
        res = minimize(
            lambda z: c @ z + reg @ z**2,
            np.r_[start, xi0],
            jac=lambda z: c + 2.0 * reg * z,
            constraints=[{"type": "ineq", "fun": lambda z: rhs - A @ z, "jac": lambda z: -A}],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 2000},
        )
        z = res.x
    W, Bc, V = z[:d][None, :], z[d : d + 1], z[d + 1 : 2 * d + 1][None, :]
    return float(_budget_objective(X, y, B, lam_w, lam_v, W, Bc, V)[0])


# -- VC enumeration ------------------------------------------------------------


@dataclass(frozen=True)
class FiniteHypothesisClass:
    """Tabulated functions: ``values[f, j]`` is function ``f`` at domain point ``j``.

    Binary classes hold booleans; base classes for the growth check hold reals.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values)
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValueError("class needs a non-empty 2-d table of values")
        if v.dtype != bool and not np.isfinite(v.astype(float)).all():
            raise ValueError("tabulated values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.values.shape[1]

    @property
    def is_binary(self) -> bool:
        return self.values.dtype == bool


def thresholds_1d(points) -> FiniteHypothesisClass:
    """Every distinct labeling ``1[x >= t]`` of the given points."""
    pts = np.asarray(points, dtype=float)
    cuts = np.concatenate([[pts.min() - 1.0], np.sort(pts), [pts.max() + 1.0]])
    return FiniteHypothesisClass(pts[None, :] >= cuts[:, None])


def all_labelings(n: int) -> FiniteHypothesisClass:
    codes = np.arange(2**n)[:, None]
    return FiniteHypothesisClass(((codes >> np.arange(n)) & 1).astype(bool))


def random_binary_class(n_points: int, n_functions: int, rng: np.random.Generator, p: float = 0.5):
    return FiniteHypothesisClass(rng.random((n_functions, n_points)) < p)


def random_real_class(n_points: int, n_functions: int, rng: np.random.Generator, levels: int = 5):
    """Integer-valued functions on few levels, so threshold ties actually occur."""
    return FiniteHypothesisClass(rng.integers(0, levels, size=(n_functions, n_points)).astype(float))


def linear_base_class(x, slopes, intercepts) -> FiniteHypothesisClass:
    x = np.asarray(x, dtype=float)
    s, c = np.meshgrid(np.asarray(slopes, float), np.asarray(intercepts, float), indexing="ij")
    return FiniteHypothesisClass(s.reshape(-1, 1) * x[None, :] + c.reshape(-1, 1))


def _n_patterns(table: np.ndarray) -> int:
    if table.shape[1] == 0:
        return 1
    return np.unique(table, axis=0).shape[0]


def _shatters(table: np.ndarray, cols) -> bool:
    return _n_patterns(table[:, list(cols)]) == 2 ** len(cols)


def _vc_of_table(table: np.ndarray) -> int:
    """Largest shattered column subset, grown level by level.

    Subsets of shattered sets are shattered, so extending only the shattered
    sets of one size reaches every shattered set of the next size.
    """
    table = np.asarray(table, dtype=bool)
    n = table.shape[1]
    level: set[tuple] = {()}
    vc = 0
    while level:
        nxt = set()
        for s in sorted(level):
            for j in range(s[-1] + 1 if s else 0, n):
                cand = s + (j,)
                # every one-smaller subset must already be shattered
                if len(cand) > 1 and any(cand[:i] + cand[i + 1 :] not in level for i in range(len(cand))):
                    continue
                if _shatters(table, cand):
                    nxt.add(cand)
        if nxt:
            vc += 1
        level = nxt
    return vc


def _guard_class(cls: FiniteHypothesisClass, domain) -> np.ndarray:
    cols = np.arange(cls.n_points) if domain is None else np.asarray(domain, dtype=int)
    if cols.size > MAX_VC_DOMAIN:
        raise GuardError(f"domain limited to {MAX_VC_DOMAIN} points")
    if cls.size > MAX_VC_CLASS:
        raise GuardError(f"class limited to {MAX_VC_CLASS} functions")
    return cls.values[:, cols]


def vc_dimension(cls: FiniteHypothesisClass, domain=None) -> int:
    """VC dimension of a binary class restricted to ``domain`` (column indices; all by default)."""
    if not cls.is_binary:
        raise ValueError("vc_dimension needs a binary class")
    return _vc_of_table(_guard_class(cls, domain))


def loss_table(table: np.ndarray) -> np.ndarray:
    """Binary 0/1-loss values on (point, label) pairs: columns are all (x_j, 0) then all (x_j, 1)."""
    table = np.asarray(table, dtype=bool)
    return np.hstack([table, ~table])


def loss_class_vc_equality(cls: FiniteHypothesisClass, domain=None) -> tuple[int, int, bool]:
    """VC of the class and of its 0/1-loss composition over (x, y) pairs, and whether they agree."""
    if not cls.is_binary:
        raise ValueError("loss_class_vc_equality needs a binary class")
    H = _guard_class(cls, domain)
    vc_h = _vc_of_table(H)
    vc_loss = _vc_of_table(loss_table(H))
    return vc_h, vc_loss, vc_h == vc_loss


@dataclass(frozen=True)
class GrowthCheck:
    lhs: int
    rhs: int
    holds: bool
    n_le: int
    n_ge: int
    vc_le: int
    vc_ge: int
    sauer_bound: int

    @property
    def sauer_holds(self) -> bool:
        return self.rhs <= self.sauer_bound


def _sauer(m: int, k: int) -> int:
    return sum(math.comb(m, i) for i in range(k + 1))


def growth_product_bound_check(base: FiniteHypothesisClass, ys) -> GrowthCheck:
    """Count interval-loss assignment vectors against the threshold-class product.

    For a sample ``(x_j, y_j)`` tabulated as ``base.values[:, j] = b(x_j)``:

    * ``lhs`` counts distinct vectors ``1 - 1[b_l(x_j) <= y_j] 1[b_u(x_j) >= y_j]``
      over all ordered pairs ``(b_l, b_u)``;
    * ``rhs`` is the number of distinct ``1[b(x_j) <= y_j]`` vectors times the
      number of distinct ``1[b(x_j) >= y_j]`` vectors, the thresholds sitting
      at the sample labels;
    * ``sauer_bound`` is the product of ``sum_{i <= k} C(m, i)`` for the VC
      dimensions ``k`` of those two threshold traces.
    """
    ys = np.asarray(ys, dtype=float)
    vals = np.asarray(base.values, dtype=float)
    if vals.shape[1] != ys.size:
        raise ValueError("one label per tabulated sample point")
    if ys.size > MAX_GROWTH_SAMPLE:
        raise GuardError(f"sample limited to {MAX_GROWTH_SAMPLE} points")
    if base.size > MAX_VC_CLASS:
        raise GuardError(f"class limited to {MAX_VC_CLASS} functions")
    le = vals <= ys[None, :]
    ge = vals >= ys[None, :]
    # every ordered pair (b_l, b_u), enumerated directly
    loss = ~(le[:, None, :] & ge[None, :, :])
    lhs = _n_patterns(loss.reshape(-1, ys.size))
    le_u = np.unique(le, axis=0)
    ge_u = np.unique(ge, axis=0)
    rhs = le_u.shape[0] * ge_u.shape[0]
    k_le, k_ge = _vc_of_table(le_u), _vc_of_table(ge_u)
    m = ys.size
    sauer = _sauer(m, k_le) * _sauer(m, k_ge)
    return GrowthCheck(lhs, rhs, lhs <= rhs, le_u.shape[0], ge_u.shape[0], k_le, k_ge, sauer)
