"""Scalar and vectorized losses for interval prediction.

All functions accept scalars or broadcastable arrays. Coverage uses the
closed-interval convention: a label on an endpoint is covered.
"""

from __future__ import annotations

import numpy as np

from .predictor import Interval


class LossDomainError(ValueError):
    pass


def _bounds(interval):
    if isinstance(interval, Interval):
        return interval.lower, interval.upper
    lower, upper = interval
    return np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)


def interval_01_loss(y, interval):
    """0 when ``lower <= y <= upper``, 1 otherwise.

    ``interval`` is an :class:`Interval` or a ``(lower, upper)`` pair of
    arrays. Inverted intervals are rejected; repair them first.
    """
    lower, upper = _bounds(interval)
    if np.any(np.asarray(lower) > np.asarray(upper)):
        raise LossDomainError("inverted interval (lower > upper); repair to a point prediction first")
    y = np.asarray(y, dtype=float)
    miss = ~((lower <= y) & (y <= upper))
    return int(miss) if miss.ndim == 0 else miss.astype(int)


def eps_insensitive(y, y_hat, eps):
    """``max(0, |y - y_hat| - eps)``.

    Evaluated as the distance from ``y`` to ``[y_hat - eps, y_hat + eps]`` so
    that, in floating point too, the loss is zero exactly when the interval
    built from the same numbers covers ``y``.
    """
    eps = np.asarray(eps, dtype=float)
    if np.any(eps < 0):
        raise LossDomainError("eps must be nonnegative")
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    out = np.maximum(0.0, np.maximum(y - (y_hat + eps), (y_hat - eps) - y))
    return float(out) if out.ndim == 0 else out


def pinball(y, y_hat, tau):
    """Tilted absolute loss whose minimizer is the tau-quantile."""
    if not 0.0 < tau < 1.0:
        raise LossDomainError(f"tau must lie in (0, 1), got {tau}")
    r = np.asarray(y, dtype=float) - y_hat
    out = np.where(r >= 0, tau * r, (tau - 1.0) * r)
    return float(out) if out.ndim == 0 else out


def empirical_interval_error(labels, intervals) -> float:
    """Mean interval 0/1-loss.

    ``intervals`` is a ``(lower, upper)`` pair of arrays or a sequence of
    :class:`Interval`.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=float))
    if isinstance(intervals, tuple) and len(intervals) == 2 and not isinstance(intervals[0], Interval):
        lower, upper = (np.atleast_1d(np.asarray(a, dtype=float)) for a in intervals)
    else:
        lower = np.array([iv.lower for iv in intervals], dtype=float)
        upper = np.array([iv.upper for iv in intervals], dtype=float)
    if not (labels.shape == lower.shape == upper.shape):
        raise LossDomainError(f"length mismatch: {labels.shape[0]} labels, {lower.shape[0]} intervals")
    if labels.size == 0:
        raise LossDomainError("need at least one example")
    return float(np.mean(interval_01_loss(labels, (lower, upper))))
