import json

import numpy as np
import pytest

from intervalforge import serialization
from intervalforge.data import NoiseProfile, synth_heteroskedastic
from intervalforge.evaluation import fit_method
from intervalforge.serialization import ModelFormatError
from intervalforge.solver import TrainConfig

DATA = synth_heteroskedastic(200, 2, NoiseProfile(0.05, (1.0,), low=0.0, high=1.0), seed=2)
X_NEW = synth_heteroskedastic(30, 2, seed=9).features


def roundtrip(fitted, tmp_path):
    doc = serialization.model_to_dict(fitted, TrainConfig(), {"train_error": 0.1}, DATA.feature_names)
    path = serialization.save_model(tmp_path / "m.json", doc)
    back, loaded = serialization.load_model(path)
    return back, loaded, path


@pytest.mark.parametrize(
    "method, setting",
    [
        ("intpred", {"budget": 1.0}),
        ("svr", {"budget": 1.0}),
        ("linreg", {"budget": 1.0}),
        ("quantreg", {"alpha": 0.2}),
        ("absconf", {"alpha": 0.2}),
        ("sqrconf", {"alpha": 0.2}),
        ("gaussian", {"alpha": 0.2}),
    ],
)
def test_roundtrip_predictions(tmp_path, method, setting):
    fitted = fit_method(method, DATA, seed=3, **setting)
    back, doc, _ = roundtrip(fitted, tmp_path)
    for a, b in zip(fitted.predict_bounds(X_NEW), back.predict_bounds(X_NEW)):
        np.testing.assert_array_equal(a, b)
    assert back.method == method and back.setting == setting
    assert doc["schema"] == serialization.SCHEMA and doc["schema_version"] == 1
    assert {"w", "b", "v", "a", "scaling", "train_config", "train_stats"} <= set(doc)


def test_boundary_kind_has_center_size_fields(tmp_path):
    _, doc, _ = roundtrip(fit_method("quantreg", DATA, alpha=0.2), tmp_path)
    assert doc["kind"] == "boundary"
    w = np.asarray(doc["w"])
    np.testing.assert_allclose(w, (np.asarray(doc["w_l"]) + np.asarray(doc["w_u"])) / 2)


def test_byte_stable(tmp_path):
    fitted = fit_method("intpred", DATA, budget=1.0)
    a = serialization.dumps(serialization.model_to_dict(fitted, TrainConfig(), {}))
    b = serialization.dumps(serialization.model_to_dict(fitted, TrainConfig(), {}))
    assert a == b and "started" not in a


def test_nonfinite_floats_become_strings():
    assert json.loads(serialization.dumps({"x": float("inf"), "y": np.float64(1.5)})) == {"x": "inf", "y": 1.5}


def test_rejects_foreign_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema": "other"}')
    with pytest.raises(ModelFormatError):
        serialization.load_model(bad)
    bad.write_text("not json")
    with pytest.raises(ModelFormatError):
        serialization.load_model(bad)
    with pytest.raises(ModelFormatError):
        serialization.load_model(tmp_path / "missing.json")


def test_version_and_missing_field(tmp_path):
    fitted = fit_method("svr", DATA, budget=1.0)
    doc = serialization.model_to_dict(fitted, TrainConfig(), {})
    with pytest.raises(ModelFormatError, match="schema_version"):
        serialization.model_from_dict({**doc, "schema_version": 99})
    del doc["scaling"]
    with pytest.raises(ModelFormatError, match="scaling"):
        serialization.model_from_dict(doc)


def test_manifest_digests(tmp_path):
    f = tmp_path / "a.txt"
    f.write_text("hello")
    doc = serialization.build_manifest("x", ["x"], {"k": 1}, 7, [f], [f], serialization.now())
    assert doc["inputs"][str(f)] == "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
    assert doc["seed"] == 7 and doc["version"]
