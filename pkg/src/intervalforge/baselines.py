"""Comparison methods, all exposing ``predict_bounds(X) -> (lower, upper)``.

Fixed-error methods take a significance level ``alpha``: quantile regression
with symmetric tails, split-conformal intervals around absolute- or
squared-loss regressors, and the Gaussian closed form. Fixed-budget methods
take a width ``B`` and wrap a point regressor in a constant-width interval.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import Dataset, split_sizes
from .predictor import BoundaryModel, CenterSizeModel, Interval, _as_matrix
from .solver import (
    TrainConfig,
    assemble_fixed_width_program,
    assemble_pinball_program,
    solve,
    solve_program,
)


class BaselineKind(str, enum.Enum):
    QUANTREG = "quantreg"
    ABSCONF = "absconf"
    SQRCONF = "sqrconf"
    ABSREG = "absreg"
    LINREG = "linreg"
    SVR = "svr"
    GAUSSIAN = "gaussian"


class InsufficientCalibrationError(ValueError):
    pass


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


# -- point regressors ----------------------------------------------------------


def fit_least_squares(train: Dataset, reg: float = 0.0) -> tuple[np.ndarray, float]:
    """Ridge regression minimizing ``mean((y - Xw - b)^2) + reg * |w|^2``; ``b`` is unpenalized."""
    X, y = train.features, train.labels
    x_bar, y_bar = X.mean(axis=0), y.mean()
    Xc, yc = X - x_bar, y - y_bar
    gram = Xc.T @ Xc / train.m + reg * np.eye(train.d)
    w = np.linalg.lstsq(gram, Xc.T @ yc / train.m, rcond=None)[0]
    return w, float(y_bar - x_bar @ w)


def fit_absolute(train: Dataset, reg: float = 0.0, config: TrainConfig | None = None) -> tuple[np.ndarray, float]:
    """Least-absolute-deviation regression as a slack LP (QP when ``reg > 0``)."""
    model, _ = solve(assemble_fixed_width_program(train, 0.0, reg), config)
    return model.w, model.b


def fit_quantile(train: Dataset, tau: float, reg: float = 0.0, config: TrainConfig | None = None):
    program = assemble_pinball_program(train, tau, reg)
    z, stats = solve_program(program, config)
    return z[program.layout["w"]].copy(), float(z[program.layout["b"]][0]), stats


# -- Gaussian closed form ------------------------------------------------------


def gaussian_half_width(alpha: float, m: int) -> float:
    """``|Phi^-1(alpha/2)| * sqrt((m + 1) / m)`` for unit-variance noise."""
    _check_alpha(alpha)
    if m < 1:
        raise ValueError("m must be positive")
    return abs(float(norm.ppf(alpha / 2.0))) * math.sqrt((m + 1) / m)


def gaussian_interval(mu_hat: float, alpha: float, m: int) -> Interval:
    h = gaussian_half_width(alpha, m)
    return Interval(mu_hat - h, mu_hat + h)


@dataclass(frozen=True)
class GaussianModel:
    """Least-squares mean with the closed-form interval, scaled by the residual deviation."""

    w: np.ndarray
    b: float
    sigma: float
    alpha: float
    m: int

    @property
    def half_width(self) -> float:
        return self.sigma * gaussian_half_width(self.alpha, self.m)

    def predict_bounds(self, X):
        center = _as_matrix(X, self.w.size) @ self.w + self.b
        return center - self.half_width, center + self.half_width


def train_gaussian(train: Dataset, alpha: float, reg: float = 0.0) -> GaussianModel:
    _check_alpha(alpha)
    w, b = fit_least_squares(train, reg)
    resid = train.labels - train.features @ w - b
    dof = max(train.m - train.d - 1, 1)
    sigma = math.sqrt(float(resid @ resid) / dof)
    return GaussianModel(w, b, sigma, alpha, train.m)


# -- quantile regression -------------------------------------------------------


def train_quantreg(train: Dataset, alpha: float, reg: float = 0.0, config: TrainConfig | None = None) -> BoundaryModel:
    """Pinball regressions at ``alpha/2`` and ``1 - alpha/2``; crossings are repaired at predict time."""
    _check_alpha(alpha)
    w_l, c_l, _ = fit_quantile(train, alpha / 2.0, reg, config)
    w_u, c_u, _ = fit_quantile(train, 1.0 - alpha / 2.0, reg, config)
    return BoundaryModel(w_l, c_l, w_u, c_u)


# -- split conformal -----------------------------------------------------------


def conformal_rank(n_calibration: int, alpha: float) -> int:
    """``ceil((n + 1)(1 - alpha))``, guarded against floating-point overshoot."""
    _check_alpha(alpha)
    return int(math.ceil((n_calibration + 1) * (1.0 - alpha) - 1e-9))


def calibrated_half_width(scores, alpha: float) -> float:
    """The k-th smallest nonconformity score, k from :func:`conformal_rank`."""
    scores = np.sort(np.asarray(scores, dtype=float))
    k = conformal_rank(scores.size, alpha)
    if k > scores.size:
        raise InsufficientCalibrationError(
            f"alpha={alpha} needs rank {k} but only {scores.size} calibration scores are available"
        )
    return float(scores[max(k, 1) - 1])


@dataclass(frozen=True)
class ConformalModel:
    w: np.ndarray
    b: float
    half_width: float
    calibration_size: int
    loss_kind: str
    alpha: float

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("half_width must be nonnegative")

    def predict_bounds(self, X):
        center = _as_matrix(X, self.w.size) @ self.w + self.b
        return center - self.half_width, center + self.half_width


def train_split_conformal(
    train: Dataset,
    alpha: float,
    loss_kind: str = "absolute",
    reg: float = 0.0,
    seed: int = 0,
    calibration_fraction: float = 0.5,
    config: TrainConfig | None = None,
) -> ConformalModel:
    """Fit on one random part of ``train``, calibrate the half-width on the rest."""
    _check_alpha(alpha)
    if loss_kind not in ("absolute", "squared"):
        raise ValueError(f"loss_kind must be 'absolute' or 'squared', got {loss_kind!r}")
    if train.m < 4:
        raise ValueError("split conformal needs at least 4 training rows")
    n_fit, n_cal = split_sizes(train.m, 1.0 - calibration_fraction)
    if n_fit < 2 or n_cal < 1:
        raise ValueError(f"calibration_fraction={calibration_fraction} leaves {n_fit} fit / {n_cal} calibration rows")
    perm = np.random.default_rng(seed).permutation(train.m)
    fit_part = train.take(np.sort(perm[:n_fit]))
    cal_part = train.take(np.sort(perm[n_fit:]))
    if loss_kind == "absolute":
        w, b = fit_absolute(fit_part, reg, config)
        scores = np.abs(cal_part.labels - cal_part.features @ w - b)
        half = calibrated_half_width(scores, alpha)
    else:
        w, b = fit_least_squares(fit_part, reg)
        scores = (cal_part.labels - cal_part.features @ w - b) ** 2
        half = math.sqrt(calibrated_half_width(scores, alpha))
    return ConformalModel(np.asarray(w), float(b), half, n_cal, loss_kind, alpha)


# -- fixed-width methods -------------------------------------------------------


def train_fixed_width(
    train: Dataset,
    B: float,
    kind: str | BaselineKind,
    reg: float = 0.0,
    config: TrainConfig | None = None,
) -> CenterSizeModel:
    """A point regressor wrapped in intervals of constant width ``B``.

    ``svr`` minimizes the epsilon-insensitive loss at insensitivity ``B/2``,
    the half-width of the interval it predicts.
    """
    if B < 0:
        raise ValueError("B must be nonnegative")
    kind = BaselineKind(kind)
    if kind is BaselineKind.ABSREG:
        w, b = fit_absolute(train, reg, config)
    elif kind is BaselineKind.LINREG:
        w, b = fit_least_squares(train, reg)
    elif kind is BaselineKind.SVR:
        model, _ = solve(assemble_fixed_width_program(train, B / 2.0, reg), config)
        w, b = model.w, model.b
    else:
        raise ValueError(f"{kind.value} is not a fixed-width method")
    return CenterSizeModel(w, b, np.zeros(train.d), B)
