"""Linear interval models in center/size and boundary form."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"inverted interval [{self.lower}, {self.upper}]")

    @property
    def width(self) -> float:
        return self.upper - self.lower


class IntervalPredictor(Protocol):
    """Anything that maps a feature matrix to repaired ``(lower, upper)`` arrays."""

    def predict_bounds(self, X) -> tuple[np.ndarray, np.ndarray]: ...


def _as_matrix(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != d:
        raise DimensionError(f"model expects {d} features, got {X.shape[1]}")
    return X


def _vec(a) -> np.ndarray:
    out = np.array(a, dtype=float).reshape(-1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CenterSizeModel:
    """Center ``<w, x> + b`` and width ``<v, x> + a``."""

    w: np.ndarray
    b: float
    v: np.ndarray
    a: float

    def __post_init__(self):
        w, v = _vec(self.w), _vec(self.v)
        if w.shape != v.shape:
            raise DimensionError(f"w has {w.size} entries, v has {v.size}")
        if not (np.isfinite(w).all() and np.isfinite(v).all() and np.isfinite([self.b, self.a]).all()):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "a", float(self.a))

    @property
    def d(self) -> int:
        return self.w.size

    def center_width(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Raw center and (possibly negative) width, before repair."""
        X = _as_matrix(X, self.d)
        return X @ self.w + self.b, X @ self.v + self.a

    def predict_bounds(self, X) -> tuple[np.ndarray, np.ndarray]:
        center, width = self.center_width(X)
        # negative widths collapse to the point prediction
        half = np.maximum(width, 0.0) / 2.0
        return center - half, center + half

    def scaled(self, c: float) -> "CenterSizeModel":
        return CenterSizeModel(c * self.w, c * self.b, c * self.v, c * self.a)


@dataclass(frozen=True)
class BoundaryModel:
    """Lower boundary ``<w_l, x> + c_l`` and upper boundary ``<w_u, x> + c_u``."""

    w_l: np.ndarray
    c_l: float
    w_u: np.ndarray
    c_u: float

    def __post_init__(self):
        w_l, w_u = _vec(self.w_l), _vec(self.w_u)
        if w_l.shape != w_u.shape:
            raise DimensionError(f"w_l has {w_l.size} entries, w_u has {w_u.size}")
        if not (np.isfinite(w_l).all() and np.isfinite(w_u).all() and np.isfinite([self.c_l, self.c_u]).all()):
            raise ValueError("model parameters must be finite")
        object.__setattr__(self, "w_l", w_l)
        object.__setattr__(self, "w_u", w_u)
        object.__setattr__(self, "c_l", float(self.c_l))
        object.__setattr__(self, "c_u", float(self.c_u))

    @property
    def d(self) -> int:
        return self.w_l.size

    def raw_bounds(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = _as_matrix(X, self.d)
        return X @ self.w_l + self.c_l, X @ self.w_u + self.c_u

    def predict_bounds(self, X) -> tuple[np.ndarray, np.ndarray]:
        lower, upper = self.raw_bounds(X)
        crossed = lower > upper
        if crossed.any():
            mid = (lower + upper) / 2.0
            lower = np.where(crossed, mid, lower)
            upper = np.where(crossed, mid, upper)
        return lower, upper


def predict(model, x) -> Interval:
    """Interval for a single feature vector, with the point-prediction repair."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionError("predict takes one feature vector; use predict_bounds for matrices")
    lower, upper = model.predict_bounds(x.reshape(1, -1))
    return Interval(float(lower[0]), float(upper[0]))


def boundary_to_center_size(model: BoundaryModel) -> CenterSizeModel:
    return CenterSizeModel(
        w=(model.w_l + model.w_u) / 2.0,
        b=(model.c_l + model.c_u) / 2.0,
        v=model.w_u - model.w_l,
        a=model.c_u - model.c_l,
    )


def center_size_to_boundary(model: CenterSizeModel) -> BoundaryModel:
    return BoundaryModel(
        w_l=model.w - model.v / 2.0,
        c_l=model.b - model.a / 2.0,
        w_u=model.w + model.v / 2.0,
        c_u=model.b + model.a / 2.0,
    )
