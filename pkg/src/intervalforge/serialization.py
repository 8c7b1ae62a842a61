"""Model files and run manifests as JSON.

A model file holds one :class:`~intervalforge.evaluation.FittedMethod`:

    {"schema": "intervalforge.model", "schema_version": 1,
     "kind": "center_size" | "boundary" | "conformal" | "gaussian",
     "method": ..., "setting": {"budget": B} or {"alpha": a}, "params": ...,
     "feature_names": [...] or null,
     "w": [...], "b": ..., "v": [...], "a": ...,        # every kind
     "scaling": {...}, "augment": false,
     "train_config": {...}, "train_stats": {...},
     ...kind-specific fields}

``w, b, v, a`` always give the center/size reading of the interval in
standardized units; boundary models add ``w_l, c_l, w_u, c_u`` and the
constant-width kinds add their half-width ingredients. Keys are sorted and
floats written with ``repr``, so equal models serialize to equal bytes.
Model files carry no timestamps; those live in the manifest.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import numpy as np

from .baselines import ConformalModel, GaussianModel
from .data import ScalingParams
from .evaluation import FittedMethod, Preprocessor
from .predictor import BoundaryModel, CenterSizeModel, boundary_to_center_size
from .solver import TrainConfig

SCHEMA = "intervalforge.model"
SCHEMA_VERSION = 1


class ModelFormatError(ValueError):
    pass


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else str(float(obj))
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _model_fields(model) -> dict:
    if isinstance(model, CenterSizeModel):
        cs, extra = model, {}
        kind = "center_size"
    elif isinstance(model, BoundaryModel):
        cs = boundary_to_center_size(model)
        extra = {"w_l": model.w_l, "c_l": model.c_l, "w_u": model.w_u, "c_u": model.c_u}
        kind = "boundary"
    elif isinstance(model, ConformalModel):
        cs = CenterSizeModel(model.w, model.b, np.zeros_like(model.w), 2.0 * model.half_width)
        extra = {
            "half_width": model.half_width,
            "calibration_size": model.calibration_size,
            "loss_kind": model.loss_kind,
            "alpha": model.alpha,
        }
        kind = "conformal"
    elif isinstance(model, GaussianModel):
        cs = CenterSizeModel(model.w, model.b, np.zeros_like(model.w), 2.0 * model.half_width)
        extra = {"sigma": model.sigma, "alpha": model.alpha, "m": model.m}
        kind = "gaussian"
    else:
        raise ModelFormatError(f"cannot serialize {type(model).__name__}")
    return {"kind": kind, "w": cs.w, "b": cs.b, "v": cs.v, "a": cs.a, **extra}


def model_to_dict(fitted: FittedMethod, train_config: TrainConfig, train_stats: dict, feature_names=None) -> dict:
    doc = {
        "schema": SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "method": fitted.method,
        "setting": fitted.setting,
        "params": fitted.params,
        "feature_names": list(feature_names) if feature_names else None,
        "scaling": fitted.prep.scaling.to_dict(),
        "augment": fitted.prep.augment,
        "train_config": asdict(train_config),
        "train_stats": train_stats,
    }
    doc.update(_model_fields(fitted.model))
    return _clean(doc)


def _floats(values) -> np.ndarray:
    return np.asarray(values, dtype=float)


def model_from_dict(doc: dict) -> tuple[FittedMethod, dict]:
    """Rebuild the fitted method; also returns the whole document."""
    if doc.get("schema") != SCHEMA:
        raise ModelFormatError("not an intervalforge model file")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema_version {doc.get('schema_version')!r}")
    try:
        kind = doc["kind"]
        if kind == "center_size":
            model = CenterSizeModel(_floats(doc["w"]), float(doc["b"]), _floats(doc["v"]), float(doc["a"]))
        elif kind == "boundary":
            model = BoundaryModel(_floats(doc["w_l"]), float(doc["c_l"]), _floats(doc["w_u"]), float(doc["c_u"]))
        elif kind == "conformal":
            model = ConformalModel(
                _floats(doc["w"]),
                float(doc["b"]),
                float(doc["half_width"]),
                int(doc["calibration_size"]),
                doc["loss_kind"],
                float(doc["alpha"]),
            )
        elif kind == "gaussian":
            model = GaussianModel(_floats(doc["w"]), float(doc["b"]), float(doc["sigma"]), float(doc["alpha"]), int(doc["m"]))
        else:
            raise ModelFormatError(f"unknown model kind {kind!r}")
        prep = Preprocessor(ScalingParams.from_dict(doc["scaling"]), bool(doc["augment"]))
        fitted = FittedMethod(doc["method"], model, prep, dict(doc["setting"]), dict(doc["params"]))
    except KeyError as exc:
        raise ModelFormatError(f"model file lacks field {exc.args[0]!r}") from None
    return fitted, doc


def save_model(path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc), encoding="utf-8")
    return path


def load_model(path) -> tuple[FittedMethod, dict]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ModelFormatError(f"no such model file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path} is not valid JSON: {exc}") from None
    return model_from_dict(doc)


# -- manifests -----------------------------------------------------------------


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def build_manifest(command: str, argv, flags: dict, seed, inputs, outputs, started: str) -> dict:
    """Everything needed to rerun a command: flags, seed, input and output digests."""
    return _clean(
        {
            "command": command,
            "argv": list(argv),
            "flags": flags,
            "seed": seed,
            "inputs": {str(p): sha256_file(p) for p in inputs},
            "outputs": {str(p): sha256_file(p) for p in outputs},
            "version": tool_version(),
            "started": started,
            "finished": now(),
        }
    )
