"""Datasets: loading, preprocessing, splitting and synthetic generators."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised when a dataset or its source violates the data contract."""


class CsvParseError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingFileError(DataError, FileNotFoundError):
    pass


class MissingColumnError(DataError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0]


@dataclass(frozen=True)
class Dataset:
    """An m x d feature matrix with m real labels.

    Arrays are copied and made read-only at construction.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataError(f"features must be 2-d, got shape {X.shape}")
        m, d = X.shape
        if m < 1 or d < 1:
            raise DataError(f"dataset needs m >= 1 and d >= 1, got m={m}, d={d}")
        if y.shape[0] != m:
            raise DataError(f"{m} feature rows but {y.shape[0]} labels")
        if not (np.isfinite(X).all() and np.isfinite(y).all()):
            raise DataError("features and labels must be finite")
        names = self.feature_names
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != d:
                raise DataError(f"{len(names)} feature names for {d} columns")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.labels[rows], self.feature_names, dict(self.metadata))

    def with_labels(self, labels) -> "Dataset":
        return Dataset(self.features, labels, self.feature_names, dict(self.metadata))


# -- I/O ---------------------------------------------------------------------


def _read_table(path: Path) -> tuple[list[str], np.ndarray]:
    if not path.is_file():
        raise MissingFileError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvParseError(f"{path} is empty", row=0) from None
        rows = []
        for r, record in enumerate(reader, start=1):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise CsvParseError(f"row {r} has {len(record)} fields, expected {len(header)}", row=r)
            values = []
            for c, cell in enumerate(record):
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvParseError(
                        f"non-numeric value {cell!r} at row {r}, column {header[c]!r}", row=r, column=header[c]
                    ) from None
                if not math.isfinite(v):
                    raise CsvParseError(f"non-finite value at row {r}, column {header[c]!r}", row=r, column=header[c])
                values.append(v)
            rows.append(values)
    if not rows:
        raise CsvParseError(f"{path} has no data rows", row=1)
    return header, np.array(rows)


def _column_index(header: list[str], column: str | int) -> int:
    if isinstance(column, str) and column in header:
        return header.index(column)
    if isinstance(column, int) or str(column).lstrip("-").isdigit():
        idx = int(column)
        if not -len(header) <= idx < len(header):
            raise MissingColumnError(f"label column index {idx} out of range for {len(header)} columns")
        return idx % len(header)
    raise MissingColumnError(f"label column {column!r} not in header {header}")


def load_csv(path, label_column: str | int) -> Dataset:
    """Read a headered, comma-delimited numeric CSV.

    ``label_column`` is either a header name or a zero-based column index.
    Row numbers in error messages are 1-based data rows (the header is row 0).
    """
    path = Path(path)
    header, table = _read_table(path)
    label_idx = _column_index(header, label_column)
    if len(header) < 2:
        raise DataError("zero feature columns left after removing the label column")
    keep = [c for c in range(len(header)) if c != label_idx]
    return Dataset(
        table[:, keep],
        table[:, label_idx],
        feature_names=[header[c] for c in keep],
        metadata={"source": str(path), "label": header[label_idx]},
    )


def load_features(path, feature_names=None) -> np.ndarray:
    """Feature matrix from a CSV without labels.

    With ``feature_names`` the named columns are selected in that order and
    any others (a label, say) are ignored.
    """
    path = Path(path)
    header, table = _read_table(path)
    if feature_names is None:
        return table
    missing = [n for n in feature_names if n not in header]
    if missing:
        raise MissingColumnError(f"columns {missing} not in header {header}")
    return table[:, [header.index(n) for n in feature_names]]


def save_dataset(data: Dataset, csv_path, label_name: str = "y") -> Path:
    """Write values to ``csv_path`` and metadata to a ``.json`` sidecar next to it."""
    csv_path = Path(csv_path)
    names = list(data.feature_names or [f"x{j + 1}" for j in range(data.d)])
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + [label_name])
        for row, label in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(label))])
    sidecar = csv_path.with_suffix(".json")
    meta = {"m": data.m, "d": data.d, "feature_names": names, "label": label_name, "metadata": data.metadata}
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return sidecar


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# -- preprocessing -----------------------------------------------------------


@dataclass(frozen=True)
class ScalingParams:
    """Per-column affine maps fitted by :func:`standardize`.

    Constant columns store ``std = 1`` and are flagged in ``constant``; they
    map to all-zeros and back to their constant value.
    """

    feature_mean: np.ndarray
    feature_std: np.ndarray
    label_mean: float
    label_std: float
    constant: np.ndarray
    label_constant: bool = False

    def transform(self, data: Dataset) -> Dataset:
        return Dataset(
            self.transform_features(data.features),
            (data.labels - self.label_mean) / self.label_std,
            data.feature_names,
            dict(data.metadata),
        )

    def transform_features(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Z = (X - self.feature_mean) / self.feature_std
        Z[:, self.constant] = 0.0
        return Z

    def inverse(self, data: Dataset) -> Dataset:
        return Dataset(
            data.features * self.feature_std + self.feature_mean,
            self.inverse_labels(data.labels),
            data.feature_names,
            dict(data.metadata),
        )

    def inverse_labels(self, y):
        return np.asarray(y, dtype=float) * self.label_std + self.label_mean

    def to_dict(self) -> dict:
        return {
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "label_mean": self.label_mean,
            "label_std": self.label_std,
            "constant": self.constant.tolist(),
            "label_constant": self.label_constant,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ScalingParams":
        return cls(
            np.asarray(obj["feature_mean"], dtype=float),
            np.asarray(obj["feature_std"], dtype=float),
            float(obj["label_mean"]),
            float(obj["label_std"]),
            np.asarray(obj["constant"], dtype=bool),
            bool(obj.get("label_constant", False)),
        )


def _column_scale(values: np.ndarray):
    mean = values.mean(axis=0)
    std = values.std(axis=0, ddof=1)
    spread = np.abs(values - mean).max(axis=0)
    constant = ~(spread > 0) | ~(std > 0)
    std = np.where(constant, 1.0, std)
    return mean, std, constant


def standardize(data: Dataset) -> tuple[Dataset, ScalingParams]:
    """Center and scale features and labels with the n-1 sample deviation."""
    if data.m < 2:
        raise DataError("standardize needs at least 2 rows")
    f_mean, f_std, constant = _column_scale(data.features)
    l_mean, l_std, l_const = _column_scale(data.labels.reshape(-1, 1))
    params = ScalingParams(f_mean, f_std, float(l_mean[0]), float(l_std[0]), constant, bool(l_const[0]))
    return params.transform(data), params


def augment_pairwise(data: Dataset) -> Dataset:
    """Append every product ``x_i * x_j`` with ``i <= j`` after the original columns."""
    X = data.features
    d = data.d
    ii, jj = np.triu_indices(d)
    products = X[:, ii] * X[:, jj]
    names = None
    if data.feature_names is not None:
        fn = data.feature_names
        names = list(fn) + [f"{fn[i]}*{fn[j]}" for i, j in zip(ii, jj)]
    return Dataset(np.hstack([X, products]), data.labels, names, dict(data.metadata))


def split_sizes(m: int, train_fraction: float) -> tuple[int, int]:
    """Train size is ``floor(train_fraction * m + 0.5)``."""
    if not 0.0 < train_fraction < 1.0:
        raise DataError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(math.floor(train_fraction * m + 0.5))
    return n_train, m - n_train


def split(data: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Random train/test partition, deterministic in ``seed``."""
    n_train, n_test = split_sizes(data.m, train_fraction)
    if n_train < 2 or n_test < 1:
        raise DataError(f"split of m={data.m} at {train_fraction} gives {n_train} train / {n_test} test rows")
    perm = np.random.default_rng(seed).permutation(data.m)
    return data.take(np.sort(perm[:n_train])), data.take(np.sort(perm[n_train:]))


# -- synthetic data ----------------------------------------------------------


@dataclass(frozen=True)
class NoiseProfile:
    """Noise scale ``sigma(x) = intercept + slopes . t(x)``.

    ``t(x)`` is ``x`` itself, or ``|x|`` when ``absolute`` is set. Features are
    drawn uniformly from ``[low, high]^d``.
    """

    intercept: float = 1.0
    slopes: tuple[float, ...] = ()
    absolute: bool = False
    noise: str = "gaussian"
    low: float = -1.0
    high: float = 1.0

    def scale(self, X: np.ndarray) -> np.ndarray:
        slopes = np.zeros(X.shape[1])
        k = min(len(self.slopes), X.shape[1])
        slopes[:k] = self.slopes[:k]
        T = np.abs(X) if self.absolute else X
        return self.intercept + T @ slopes


def synth_heteroskedastic(
    m: int,
    d: int,
    noise_profile: NoiseProfile | None = None,
    seed: int = 0,
    weights: Sequence[float] | None = None,
) -> Dataset:
    """Linear labels plus noise whose scale is affine in the features."""
    if m < 1 or d < 1:
        raise DataError(f"need m >= 1 and d >= 1, got m={m}, d={d}")
    profile = noise_profile or NoiseProfile()
    if profile.noise not in ("gaussian", "uniform"):
        raise DataError(f"unknown noise kind {profile.noise!r}")
    rng = np.random.default_rng(seed)
    w_star = rng.normal(size=d) if weights is None else np.asarray(weights, dtype=float)
    if w_star.shape != (d,):
        raise DataError(f"weights must have length {d}")
    X = rng.uniform(profile.low, profile.high, size=(m, d))
    sigma = profile.scale(X)
    if not (sigma > 0).all():
        raise DataError(f"noise profile gives sigma(x) <= 0 (min {sigma.min():.4g}) on the sampled features")
    if profile.noise == "gaussian":
        eta = rng.standard_normal(m)
    else:
        # unit variance
        eta = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=m)
    y = X @ w_star + sigma * eta
    meta = {
        "generator": "synth_heteroskedastic",
        "seed": int(seed),
        "weights": w_star.tolist(),
        "noise_intercept": profile.intercept,
        "noise_slopes": list(profile.slopes),
        "noise_absolute": profile.absolute,
        "noise": profile.noise,
        "feature_range": [profile.low, profile.high],
    }
    return Dataset(X, y, [f"x{j + 1}" for j in range(d)], meta)


# -- Max-FS reduction --------------------------------------------------------


@dataclass(frozen=True)
class MaxFsInstance:
    """A linear system ``A z = d_vec`` with distinct rows and at least two equations."""

    A: np.ndarray
    d_vec: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        rhs = np.array(self.d_vec, dtype=float).reshape(-1)
        if A.shape[0] != rhs.shape[0]:
            raise DataError(f"A has {A.shape[0]} rows but d_vec has {rhs.shape[0]} entries")
        if A.shape[0] < 2:
            raise DataError("Max-FS instances need M >= 2 equations")
        if len({tuple(r) for r in A.tolist()}) != A.shape[0]:
            raise DataError("rows of A must be distinct")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "d_vec", rhs)


def maxfs_instance(instance: MaxFsInstance) -> tuple[Dataset, float]:
    """Build the 2M+1-row dataset and zero budget of the hardness reduction.

    Rows 1..M are the equations ``(A_i, d_i)``; the remaining M+1 rows are
    all-zero examples with label 0.
    """
    A, rhs = instance.A, instance.d_vec
    M, N = A.shape
    X = np.vstack([A, np.zeros((M + 1, N))])
    y = np.concatenate([rhs, np.zeros(M + 1)])
    return Dataset(X, y, metadata={"generator": "maxfs", "M": M, "N": N}), 0.0
