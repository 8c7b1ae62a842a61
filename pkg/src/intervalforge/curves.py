"""Monotone concave cubic-spline fits of accuracy against interval width.

Fixed-error methods produce (width, error) pairs at whatever widths their
significance levels happen to yield. To compare them at fixed budgets the
accuracy ``1 - error`` is fit as a nondecreasing, concave C2 cubic spline of
width and read off at the query widths.

The spline is parametrized so that both shape constraints become sign
constraints on coefficients:

    f(x)   = c0 + g (x - x0) + sum_k r_k psi_k(x)
    f'(x)  = g + sum_k r_k Phi_k(x),      Phi_k(x) = int_x^{x_max} phi_k
    f''(x) = -sum_k r_k phi_k(x)

with ``phi_k`` the piecewise-linear hat functions on the knots. Requiring
``g >= 0`` and ``r_k >= 0`` makes ``f'' <= 0`` and ``f' >= f'(x_max) = g >= 0``
everywhere, not just on a check grid, and the fit is a bound-constrained
least-squares problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PPoly
from scipy.optimize import lsq_linear


class CurveFitError(ValueError):
    pass


def _hat(breaks: np.ndarray, k: int) -> PPoly:
    """Piecewise-linear hat with value 1 at ``breaks[k]`` and 0 at the other knots."""
    values = np.zeros(breaks.size)
    values[k] = 1.0
    slopes = np.diff(values) / np.diff(breaks)
    return PPoly(np.vstack([slopes, values[:-1]]), breaks, extrapolate=False)


@dataclass(frozen=True)
class _Basis:
    breaks: np.ndarray
    tail: list  # Phi_k as PPoly (quadratic pieces)
    psi: list  # psi_k as PPoly (cubic pieces)
    hats: list

    @classmethod
    def build(cls, breaks: np.ndarray) -> "_Basis":
        x1 = breaks[-1]
        hats, tails, psis = [], [], []
        for k in range(breaks.size):
            phi = _hat(breaks, k)
            A = phi.antiderivative()
            total = float(A(x1))
            # Phi_k(x) = total - A(x)
            tail = PPoly(-A.c.copy(), breaks, extrapolate=False)
            tail.c[-1] += total
            # psi_k(x) = int_{x0}^x Phi_k = total (x - x0) - AA(x)
            psi = tail.antiderivative()
            hats.append(phi)
            tails.append(tail)
            psis.append(psi)
        return cls(breaks, tails, psis, hats)

    def design(self, x: np.ndarray) -> np.ndarray:
        cols = [np.ones_like(x), x - self.breaks[0]] + [p(x) for p in self.psi]
        return np.column_stack(cols)


@dataclass(frozen=True)
class ConcaveMonotoneCurve:
    """A fitted nondecreasing concave cubic spline on ``[x_min, x_max]``."""

    basis: _Basis
    coef: np.ndarray

    @property
    def x_min(self) -> float:
        return float(self.basis.breaks[0])

    @property
    def x_max(self) -> float:
        return float(self.basis.breaks[-1])

    @property
    def knots(self) -> np.ndarray:
        return self.basis.breaks

    def _clip(self, x):
        return np.clip(np.asarray(x, dtype=float), self.x_min, self.x_max)

    def __call__(self, x) -> np.ndarray:
        return self.basis.design(np.atleast_1d(self._clip(x))) @ self.coef

    def slope(self, x) -> np.ndarray:
        x = np.atleast_1d(self._clip(x))
        r = self.coef[2:]
        return self.coef[1] + sum(rk * np.maximum(t(x), 0.0) for rk, t in zip(r, self.basis.tail))

    def curvature(self, x) -> np.ndarray:
        x = np.atleast_1d(self._clip(x))
        r = self.coef[2:]
        return -sum(rk * np.maximum(h(x), 0.0) for rk, h in zip(r, self.basis.hats))


def fit_concave_monotone(x, values, n_knots: int = 5) -> tuple[ConcaveMonotoneCurve, float]:
    """Least-squares fit; returns the curve and its R^2 on the inputs.

    ``n_knots`` interior knots sit at evenly spaced quantiles of ``x``.
    """
    x = np.asarray(x, dtype=float)
    values = np.asarray(values, dtype=float)
    if x.shape != values.shape or x.ndim != 1:
        raise CurveFitError("x and values must be 1-d arrays of equal length")
    if x.size < n_knots + 1:
        raise CurveFitError(f"need at least {n_knots + 1} points, got {x.size}")
    if not (np.isfinite(x).all() and np.isfinite(values).all()):
        raise CurveFitError("inputs must be finite")
    order = np.argsort(x, kind="stable")
    x, values = x[order], values[order]
    if np.any(np.diff(x) <= 0):
        raise CurveFitError("widths must be distinct")
    interior = np.quantile(x, np.arange(1, n_knots + 1) / (n_knots + 1))
    breaks = np.unique(np.concatenate([[x[0]], interior, [x[-1]]]))
    basis = _Basis.build(breaks)
    D = basis.design(x)
    n_coef = D.shape[1]
    lower = np.r_[-np.inf, np.zeros(n_coef - 1)]
    res = lsq_linear(D, values, bounds=(lower, np.full(n_coef, np.inf)), method="bvls", tol=1e-13)
    coef = np.asarray(res.x)
    coef[1:] = np.maximum(coef[1:], 0.0)
    curve = ConcaveMonotoneCurve(basis, coef)
    fitted = curve(x)
    ss_res = float(np.sum((values - fitted) ** 2))
    ss_tot = float(np.sum((values - values.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-20 else 0.0)
    return curve, r2


@dataclass(frozen=True)
class InterpolationResult:
    errors: np.ndarray
    clamped: np.ndarray
    curve: ConcaveMonotoneCurve
    r_squared: float


def interpolate_error_curve(widths, errors, query_widths, n_knots: int = 5) -> InterpolationResult:
    """Error at ``query_widths`` from a monotone concave fit of accuracy vs width.

    Queries outside the observed widths are clamped to the boundary and
    flagged in ``clamped``. Returned errors are clipped to ``[0, 1]``.
    """
    widths = np.asarray(widths, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if widths.size < n_knots + 1:
        raise CurveFitError(f"need at least {n_knots + 1} points, got {widths.size}")
    if np.any(widths <= 0):
        raise CurveFitError("widths must be positive")
    curve, r2 = fit_concave_monotone(widths, 1.0 - errors, n_knots)
    q = np.atleast_1d(np.asarray(query_widths, dtype=float))
    if not np.isfinite(q).all():
        raise CurveFitError("query widths must be finite")
    clamped = (q < curve.x_min) | (q > curve.x_max)
    out = np.clip(1.0 - curve(q), 0.0, 1.0)
    return InterpolationResult(out, clamped, curve, r2)
