"""Budgeted interval training as slack-variable convex quadratic programs.

Every trainer assembles a :class:`ConvexProgram` in the standard form

    minimize    0.5 z'Pz + q'z
    subject to  G z <= h

and hands it to an interior-point QP solver (Clarabel). For the center/size
programs the decision vector is ``z = [w, b, v, a, xi]`` where ``xi`` holds
one slack per training example. The slack rows

    xi_i >= y_i - yhat_i - width_i / 2
    xi_i >= yhat_i - y_i - width_i / 2
    xi_i >= 0

make ``xi_i`` equal to the epsilon-insensitive loss with insensitivity
``width_i / 2`` at any optimum, so the program is exact. Biases ``b`` and
``a`` are not regularized.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import clarabel
import numpy as np
import scipy.sparse as sp

from .data import Dataset
from .losses import empirical_interval_error
from .predictor import CenterSizeModel


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Budget, regularization and solver settings.

    ``budget`` is the allowed mean interval width in label units.
    ``tol_opt`` bounds the duality gap: relative when ``|objective| > 1``,
    absolute otherwise. ``tol_feas`` bounds the largest constraint
    violation, scaled by ``1 + max|h|``.
    """

    budget: float = 1.0
    lambda_w: float = 1e-3
    lambda_v: float = 1e-3
    tol_opt: float = 1e-9
    tol_feas: float = 1e-8
    max_iters: int = 200
    merged_constraint: bool = False

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError(f"budget must be nonnegative, got {self.budget}")
        if self.lambda_w < 0 or self.lambda_v < 0:
            raise ValueError("regularization strengths must be nonnegative")
        if self.tol_opt <= 0 or self.tol_feas <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    def with_budget(self, budget: float) -> "TrainConfig":
        return replace(self, budget=float(budget))


@dataclass(frozen=True)
class ConvexProgram:
    """A QP ``min 0.5 z'Pz + q'z  s.t.  G z <= h`` plus its provenance.

    ``layout`` maps variable-block names to slices of ``z`` and ``rows`` maps
    constraint-block names to slices of ``G``. ``params`` records the
    scalars the program was built from (budget, lambdas, tau, ...).
    """

    kind: str
    P: sp.csc_matrix
    q: np.ndarray
    G: sp.csc_matrix
    h: np.ndarray
    layout: dict
    rows: dict
    params: dict
    train: Dataset

    def __post_init__(self):
        n = self.q.shape[0]
        if self.P.shape != (n, n) or self.G.shape[1] != n or self.G.shape[0] != self.h.shape[0]:
            raise ValueError("inconsistent program dimensions")
        if (self.P.diagonal() < 0).any():
            raise ValueError("objective is not convex")

    @property
    def n_vars(self) -> int:
        return self.q.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.G.shape[0]

    def objective(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ (self.P @ z) + self.q @ z)

    def violation(self, z) -> float:
        r = self.G @ np.asarray(z, dtype=float) - self.h
        return float(max(0.0, r.max(initial=0.0)))

    def to_text(self) -> str:
        """Plain-text dump: a header, then ``P``, ``q``, ``G``, ``h`` in coordinate form.

        Indices are zero-based. ``P`` lists upper-triangle entries only.
        """
        lines = [
            f"# program {self.kind}",
            "# minimize 0.5 z'Pz + q'z subject to G z <= h",
            f"variables {self.n_vars}",
            f"constraints {self.n_constraints}",
        ]
        for name, sl in self.layout.items():
            lines.append(f"block {name} {sl.start} {sl.stop}")
        for name, sl in self.rows.items():
            lines.append(f"rows {name} {sl.start} {sl.stop}")
        for k, v in sorted(self.params.items()):
            lines.append(f"param {k} {v!r}")
        P = sp.triu(self.P).tocoo()
        lines.append(f"P {P.nnz}")
        lines.extend(f"{i} {j} {v!r}" for i, j, v in sorted(zip(P.row.tolist(), P.col.tolist(), P.data.tolist())))
        nz = np.flatnonzero(self.q)
        lines.append(f"q {nz.size}")
        lines.extend(f"{i} {self.q[i]!r}" for i in nz.tolist())
        G = self.G.tocoo()
        lines.append(f"G {G.nnz}")
        lines.extend(f"{i} {j} {v!r}" for i, j, v in sorted(zip(G.row.tolist(), G.col.tolist(), G.data.tolist())))
        lines.append(f"h {self.h.size}")
        lines.extend(repr(float(v)) for v in self.h)
        return "\n".join(lines) + "\n"


@dataclass
class SolveStats:
    objective: float
    primal_residual: float
    iterations: int
    converged: bool
    status: str
    gap: float = float("nan")
    gap_kind: str = "absolute"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "primal_residual": self.primal_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "status": self.status,
            "gap": self.gap,
            "gap_kind": self.gap_kind,
            **self.extra,
        }


# -- assembly ------------------------------------------------------------------


def _blocks(sizes: list[tuple[str, int]]) -> dict:
    layout, start = {}, 0
    for name, size in sizes:
        layout[name] = slice(start, start + size)
        start += size
    return layout


class _Rows:
    """Collects row blocks of ``G z <= h``."""

    def __init__(self, n: int):
        self.n = n
        self.blocks: list[sp.spmatrix] = []
        self.rhs: list[np.ndarray] = []
        self.names: dict = {}
        self.count = 0

    def add(self, name: str, G, h):
        G = sp.csr_matrix(G)
        self.blocks.append(G)
        self.rhs.append(np.broadcast_to(np.asarray(h, dtype=float), (G.shape[0],)).copy())
        self.names[name] = slice(self.count, self.count + G.shape[0])
        self.count += G.shape[0]

    def build(self):
        return sp.vstack(self.blocks, format="csc"), np.concatenate(self.rhs)


def _placed(m: int, n: int, layout: dict, **parts):
    """An m x n sparse matrix with the given blocks placed at their layout slices."""
    cols = []
    for name, sl in layout.items():
        width = sl.stop - sl.start
        block = parts.pop(name, None)
        cols.append(sp.csr_matrix((m, width)) if block is None else sp.csr_matrix(block))
    if parts:
        raise KeyError(f"unknown blocks {sorted(parts)}")
    out = sp.hstack(cols, format="csr")
    assert out.shape == (m, n)
    return out


def _center_size_rows(train: Dataset, layout: dict, n: int, rows: _Rows, width_scale: float = 0.5):
    """Loss rows for the two-sided slack encoding and ``xi >= 0``."""
    m = train.m
    X, y = train.features, train.labels
    ones = np.ones((m, 1))
    eye = sp.identity(m, format="csr")
    # y - yhat - width/2 <= xi
    rows.add(
        "loss_upper",
        _placed(m, n, layout, w=-X, b=-ones, v=-width_scale * X, a=-width_scale * ones, xi=-eye),
        -y,
    )
    # yhat - y - width/2 <= xi
    rows.add(
        "loss_lower",
        _placed(m, n, layout, w=X, b=ones, v=-width_scale * X, a=-width_scale * ones, xi=-eye),
        y,
    )
    rows.add("slack_nonneg", _placed(m, n, layout, xi=-eye), 0.0)


def _regularizer(n: int, layout: dict, **strengths) -> sp.csc_matrix:
    diag = np.zeros(n)
    for name, lam in strengths.items():
        diag[layout[name]] = 2.0 * lam
    return sp.diags(diag, format="csc")


def assemble_budget_program(train: Dataset, config: TrainConfig) -> ConvexProgram:
    """Mean slack plus ridge terms, subject to nonnegative widths and mean width <= budget."""
    m, d = train.m, train.d
    X = train.features
    sizes = [("w", d), ("b", 1), ("v", d), ("a", 1), ("xi", m)]
    if config.merged_constraint:
        sizes.append(("t", m))
    layout = _blocks(sizes)
    n = layout[sizes[-1][0]].stop
    rows = _Rows(n)
    _center_size_rows(train, layout, n, rows)
    ones = np.ones((m, 1))
    x_bar = X.mean(axis=0, keepdims=True)
    if config.merged_constraint:
        # mean(max(0, width_i)) <= B via t_i >= 0, t_i >= width_i
        eye = sp.identity(m, format="csr")
        rows.add("hinge_nonneg", _placed(m, n, layout, t=-eye), 0.0)
        rows.add("hinge_width", _placed(m, n, layout, v=X, a=ones, t=-eye), 0.0)
        rows.add("budget", _placed(1, n, layout, t=np.full((1, m), 1.0 / m)), config.budget)
    else:
        rows.add("width_nonneg", _placed(m, n, layout, v=-X, a=-ones), 0.0)
        rows.add("budget", _placed(1, n, layout, v=x_bar, a=np.ones((1, 1))), config.budget)
    G, h = rows.build()
    q = np.zeros(n)
    q[layout["xi"]] = 1.0 / m
    P = _regularizer(n, layout, w=config.lambda_w, v=config.lambda_v)
    params = {
        "budget": config.budget,
        "lambda_w": config.lambda_w,
        "lambda_v": config.lambda_v,
        "merged_constraint": config.merged_constraint,
    }
    return ConvexProgram("budget", P, q, G, h, layout, rows.names, params, train)


def assemble_fixed_error_program(train: Dataset, alpha_surrogate: float, config: TrainConfig) -> ConvexProgram:
    """Mean width plus ridge terms, subject to nonnegative widths and mean slack <= alpha_surrogate."""
    if alpha_surrogate < 0:
        raise ValueError("alpha_surrogate must be nonnegative")
    m, d = train.m, train.d
    X = train.features
    layout = _blocks([("w", d), ("b", 1), ("v", d), ("a", 1), ("xi", m)])
    n = layout["xi"].stop
    rows = _Rows(n)
    _center_size_rows(train, layout, n, rows)
    rows.add("width_nonneg", _placed(m, n, layout, v=-X, a=-np.ones((m, 1))), 0.0)
    rows.add("loss_budget", _placed(1, n, layout, xi=np.full((1, m), 1.0 / m)), alpha_surrogate)
    G, h = rows.build()
    q = np.zeros(n)
    q[layout["v"]] = X.mean(axis=0)
    q[layout["a"]] = 1.0
    P = _regularizer(n, layout, w=config.lambda_w, v=config.lambda_v)
    params = {"alpha_surrogate": alpha_surrogate, "lambda_w": config.lambda_w, "lambda_v": config.lambda_v}
    return ConvexProgram("fixed_error", P, q, G, h, layout, rows.names, params, train)


def assemble_fixed_width_program(train: Dataset, half_width: float, lambda_w: float) -> ConvexProgram:
    """Epsilon-insensitive regression with a constant insensitivity ``half_width``.

    ``half_width = 0`` is least-absolute-deviation regression.
    """
    if half_width < 0:
        raise ValueError("half_width must be nonnegative")
    m, d = train.m, train.d
    X, y = train.features, train.labels
    layout = _blocks([("w", d), ("b", 1), ("xi", m)])
    n = layout["xi"].stop
    rows = _Rows(n)
    ones = np.ones((m, 1))
    eye = sp.identity(m, format="csr")
    rows.add("loss_upper", _placed(m, n, layout, w=-X, b=-ones, xi=-eye), half_width - y)
    rows.add("loss_lower", _placed(m, n, layout, w=X, b=ones, xi=-eye), half_width + y)
    rows.add("slack_nonneg", _placed(m, n, layout, xi=-eye), 0.0)
    G, h = rows.build()
    q = np.zeros(n)
    q[layout["xi"]] = 1.0 / m
    P = _regularizer(n, layout, w=lambda_w)
    params = {"half_width": half_width, "lambda_w": lambda_w}
    return ConvexProgram("fixed_width", P, q, G, h, layout, rows.names, params, train)


def assemble_pinball_program(train: Dataset, tau: float, lambda_w: float) -> ConvexProgram:
    """Linear tau-quantile regression: ``xi_i >= tau r_i`` and ``xi_i >= (tau - 1) r_i``."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    m, d = train.m, train.d
    X, y = train.features, train.labels
    layout = _blocks([("w", d), ("b", 1), ("xi", m)])
    n = layout["xi"].stop
    rows = _Rows(n)
    ones = np.ones((m, 1))
    eye = sp.identity(m, format="csr")
    # tau (y - yhat) <= xi
    rows.add("under", _placed(m, n, layout, w=-tau * X, b=-tau * ones, xi=-eye), -tau * y)
    # (1 - tau) (yhat - y) <= xi
    rows.add("over", _placed(m, n, layout, w=(1 - tau) * X, b=(1 - tau) * ones, xi=-eye), (1 - tau) * y)
    G, h = rows.build()
    q = np.zeros(n)
    q[layout["xi"]] = 1.0 / m
    P = _regularizer(n, layout, w=lambda_w)
    return ConvexProgram("pinball", P, q, G, h, layout, rows.names, {"tau": tau, "lambda_w": lambda_w}, train)


# -- solving -------------------------------------------------------------------


def tighten_slacks(program: ConvexProgram, z: np.ndarray) -> np.ndarray:
    """Replace each slack with the exact loss it bounds."""
    z = np.array(z, dtype=float)
    lay = program.layout
    X, y = program.train.features, program.train.labels
    center = X @ z[lay["w"]] + z[lay["b"]][0]
    r = y - center
    if program.kind in ("budget", "fixed_error"):
        width = X @ z[lay["v"]] + z[lay["a"]][0]
        z[lay["xi"]] = np.maximum(0.0, np.abs(r) - width / 2.0)
        if "t" in lay:
            z[lay["t"]] = np.maximum(0.0, width)
    elif program.kind == "fixed_width":
        z[lay["xi"]] = np.maximum(0.0, np.abs(r) - program.params["half_width"])
    elif program.kind == "pinball":
        tau = program.params["tau"]
        z[lay["xi"]] = np.where(r >= 0, tau * r, (tau - 1.0) * r)
    return z


def solve_program(program: ConvexProgram, config: TrainConfig | None = None) -> tuple[np.ndarray, SolveStats]:
    """Solve a program and return the (slack-tightened) decision vector."""
    config = config or TrainConfig()
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int(config.max_iters)
    settings.tol_gap_abs = config.tol_opt
    settings.tol_gap_rel = config.tol_opt
    settings.tol_feas = config.tol_feas
    settings.max_threads = 1
    P = sp.triu(program.P, format="csc")
    G = sp.csc_matrix(program.G)
    solver = clarabel.DefaultSolver(P, program.q, G, program.h, [clarabel.NonnegativeConeT(G.shape[0])], settings)
    sol = solver.solve()
    status = str(sol.status)
    if "Infeasible" in status and "Almost" not in status:
        raise SolverError(f"{program.kind} program reported {status}; it is feasible by construction")
    z = np.asarray(sol.x, dtype=float)
    if not np.isfinite(z).all():
        z = np.zeros(program.n_vars)
    z = tighten_slacks(program, z)
    objective = program.objective(z)
    residual = program.violation(z)
    dual = float(sol.obj_val_dual)
    gap = abs(float(sol.obj_val) - dual) if np.isfinite(dual) else float("nan")
    gap_kind = "relative" if abs(objective) > 1 else "absolute"
    if gap_kind == "relative" and np.isfinite(gap):
        gap /= abs(objective)
    feas_ok = residual <= config.tol_feas * (1.0 + float(np.abs(program.h).max(initial=0.0)))
    converged = status == "Solved" and feas_ok
    stats = SolveStats(objective, residual, int(sol.iterations), bool(converged), status, gap, gap_kind)
    return z, stats


def decode_center_size(program: ConvexProgram, z: np.ndarray) -> CenterSizeModel:
    lay = program.layout
    w, b = z[lay["w"]], z[lay["b"]][0]
    if "v" in lay:
        return CenterSizeModel(w, b, z[lay["v"]], z[lay["a"]][0])
    return CenterSizeModel(w, b, np.zeros_like(w), 2.0 * program.params["half_width"])


def solve(program: ConvexProgram, config: TrainConfig | None = None) -> tuple[CenterSizeModel, SolveStats]:
    """Solve a center/size program; non-convergence is flagged in the stats, not raised."""
    if program.kind == "pinball":
        raise ValueError("pinball programs produce a single boundary; use solve_program")
    z, stats = solve_program(program, config)
    return decode_center_size(program, z), stats


def _record_train_stats(model: CenterSizeModel, train: Dataset, stats: SolveStats) -> None:
    lower, upper = model.predict_bounds(train.features)
    _, raw_width = model.center_width(train.features)
    stats.extra["train_error"] = empirical_interval_error(train.labels, (lower, upper))
    stats.extra["train_mean_width"] = float(np.mean(upper - lower))
    stats.extra["train_surrogate_loss"] = float(
        np.mean(np.maximum(0.0, np.abs(train.labels - (lower + upper) / 2) - np.maximum(raw_width, 0) / 2))
    )


def train_budget(train: Dataset, config: TrainConfig) -> tuple[CenterSizeModel, SolveStats]:
    """Jointly fit center and width to minimize the surrogate loss under the budget."""
    program = assemble_budget_program(train, config)
    model, stats = solve(program, config)
    _record_train_stats(model, train, stats)
    return model, stats


def train_fixed_error(
    train: Dataset, alpha_surrogate: float, config: TrainConfig
) -> tuple[CenterSizeModel, SolveStats]:
    """Minimize the mean width subject to a mean surrogate loss of at most ``alpha_surrogate``."""
    program = assemble_fixed_error_program(train, alpha_surrogate, config)
    model, stats = solve(program, config)
    _record_train_stats(model, train, stats)
    return model, stats


def surrogate_objective(model: CenterSizeModel, train: Dataset, config: TrainConfig) -> float:
    """The budget program's objective evaluated at a model, with exact slacks."""
    center, width = model.center_width(train.features)
    loss = np.maximum(0.0, np.abs(train.labels - center) - width / 2.0)
    return float(loss.mean() + config.lambda_w * model.w @ model.w + config.lambda_v * model.v @ model.v)
