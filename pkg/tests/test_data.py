import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import spearmanr

from intervalforge.data import (
    CsvParseError,
    Dataset,
    DataError,
    MaxFsInstance,
    MissingColumnError,
    MissingFileError,
    NoiseProfile,
    augment_pairwise,
    load_csv,
    load_features,
    maxfs_instance,
    save_dataset,
    split,
    split_sizes,
    standardize,
    synth_heteroskedastic,
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestLoadCsv:
    def test_three_rows(self, tmp_path):
        p = write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n7,8,9\n")
        data = load_csv(p, "y")
        assert (data.m, data.d) == (3, 2)
        np.testing.assert_array_equal(data.labels, [3, 6, 9])
        np.testing.assert_array_equal(data.features[:, 1], [2, 5, 8])
        assert data.feature_names == ("a", "b")

    def test_label_by_index(self, tmp_path):
        p = write(tmp_path, "y,a\n1,2\n3,4\n")
        data = load_csv(p, 0)
        np.testing.assert_array_equal(data.labels, [1, 3])
        assert load_csv(p, "0").feature_names == ("a",)

    def test_non_numeric_cell_names_row_and_column(self, tmp_path):
        p = write(tmp_path, "a,b,y\n1,2,3\n4,abc,6\n")
        with pytest.raises(CsvParseError) as info:
            load_csv(p, "y")
        assert info.value.row == 2 and info.value.column == "b"
        assert "abc" in str(info.value)

    def test_single_column(self, tmp_path):
        p = write(tmp_path, "y\n1\n2\n")
        with pytest.raises(DataError, match="zero feature columns"):
            load_csv(p, "y")

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_csv(tmp_path / "nope.csv", "y")

    def test_missing_label(self, tmp_path):
        p = write(tmp_path, "a,b\n1,2\n")
        with pytest.raises(MissingColumnError):
            load_csv(p, "y")
        with pytest.raises(MissingColumnError):
            load_csv(p, 5)

    def test_ragged_and_nonfinite(self, tmp_path):
        with pytest.raises(CsvParseError):
            load_csv(write(tmp_path, "a,y\n1,2,3\n"), "y")
        with pytest.raises(CsvParseError):
            load_csv(write(tmp_path, "a,y\n1,inf\n", "e.csv"), "y")

    def test_empty(self, tmp_path):
        with pytest.raises(CsvParseError):
            load_csv(write(tmp_path, ""), "y")
        with pytest.raises(CsvParseError):
            load_csv(write(tmp_path, "a,y\n", "h.csv"), "y")

    def test_roundtrip_with_sidecar(self, tmp_path):
        data = synth_heteroskedastic(20, 3, seed=1)
        sidecar = save_dataset(data, tmp_path / "s.csv")
        back = load_csv(tmp_path / "s.csv", "y")
        np.testing.assert_array_equal(back.features, data.features)
        np.testing.assert_array_equal(back.labels, data.labels)
        meta = json.loads(sidecar.read_text())
        assert meta["m"] == 20 and meta["metadata"]["generator"] == "synth_heteroskedastic"

    def test_load_features(self, tmp_path):
        p = write(tmp_path, "a,y,b\n1,2,3\n4,5,6\n")
        np.testing.assert_array_equal(load_features(p, ["a", "b"]), [[1, 3], [4, 6]])
        assert load_features(p).shape == (2, 3)
        with pytest.raises(MissingColumnError):
            load_features(p, ["c"])


class TestDataset:
    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            Dataset([[np.nan]], [1.0])

    def test_rejects_count_mismatch(self):
        with pytest.raises(DataError):
            Dataset([[1.0], [2.0]], [1.0])

    def test_read_only(self):
        data = Dataset([[1.0]], [1.0])
        with pytest.raises(ValueError):
            data.features[0, 0] = 2.0


class TestStandardize:
    def test_two_point_column(self):
        data = Dataset([[1.0], [3.0]], [0.0, 1.0])
        z, params = standardize(data)
        np.testing.assert_allclose(z.features[:, 0], [-1 / np.sqrt(2), 1 / np.sqrt(2)], rtol=1e-15)
        assert params.feature_mean[0] == 2.0
        assert params.feature_std[0] == pytest.approx(np.sqrt(2.0), rel=1e-15)

    def test_constant_column(self):
        data = Dataset([[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]], [1.0, 2.0, 3.0])
        z, params = standardize(data)
        np.testing.assert_array_equal(z.features[:, 0], [0, 0, 0])
        assert params.constant.tolist() == [True, False]
        np.testing.assert_array_equal(params.inverse(z).features[:, 0], [5, 5, 5])

    def test_needs_two_rows(self):
        with pytest.raises(DataError):
            standardize(Dataset([[1.0]], [1.0]))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 4)), elements=st.floats(-1e3, 1e3)))
    def test_inverse_roundtrip(self, X):
        data = Dataset(X, X[:, 0] * 2.0 + 1.0)
        z, params = standardize(data)
        back = params.inverse(z)
        np.testing.assert_allclose(back.features, data.features, atol=1e-12 * (1 + np.abs(X).max()))
        np.testing.assert_allclose(back.labels, data.labels, atol=1e-12 * (1 + np.abs(data.labels).max()))

    def test_params_dict_roundtrip(self):
        _, params = standardize(synth_heteroskedastic(10, 2, seed=0))
        again = type(params).from_dict(json.loads(json.dumps(params.to_dict())))
        np.testing.assert_array_equal(again.feature_std, params.feature_std)
        assert again.label_mean == params.label_mean


class TestAugment:
    def test_products(self):
        out = augment_pairwise(Dataset([[2.0, 3.0]], [0.0]))
        np.testing.assert_array_equal(out.features[0], [2, 3, 4, 6, 9])

    def test_self_product(self):
        out = augment_pairwise(Dataset([[7.0]], [0.0]))
        np.testing.assert_array_equal(out.features[0], [7, 49])

    @pytest.mark.parametrize("d", range(1, 31))
    def test_dimension(self, d):
        out = augment_pairwise(Dataset(np.ones((2, d)), [0.0, 1.0]))
        assert out.d == d + d * (d + 1) // 2

    def test_names(self):
        out = augment_pairwise(Dataset([[1.0, 2.0]], [0.0], ["a", "b"]))
        assert out.feature_names == ("a", "b", "a*a", "a*b", "b*b")


class TestSplit:
    def test_sizes_and_determinism(self):
        data = Dataset(np.arange(10.0).reshape(-1, 1), np.arange(10.0))
        tr, te = split(data, 0.8, 0)
        assert (tr.m, te.m) == (8, 2)
        tr2, _ = split(data, 0.8, 0)
        np.testing.assert_array_equal(tr.labels, tr2.labels)

    def test_partition(self):
        data = Dataset(np.arange(50.0).reshape(-1, 1), np.arange(50.0))
        tr, te = split(data, 0.7, 3)
        assert sorted(np.r_[tr.labels, te.labels].tolist()) == list(range(50))

    def test_seed_sensitivity(self):
        data = Dataset(np.arange(1000.0).reshape(-1, 1), np.arange(1000.0))
        a, _ = split(data, 0.5, 1)
        b, _ = split(data, 0.5, 2)
        assert not np.array_equal(a.labels, b.labels)

    def test_rounding_rule(self):
        assert split_sizes(5, 0.5) == (3, 2)
        assert split_sizes(10, 0.85) == (9, 1)

    @pytest.mark.parametrize("f", [0.0, 1.0, -0.1, 1.5])
    def test_fraction_range(self, f):
        with pytest.raises(DataError):
            split_sizes(10, f)

    def test_too_small(self):
        with pytest.raises(DataError):
            split(Dataset([[1.0], [2.0]], [1.0, 2.0]), 0.5, 0)


class TestSynth:
    def test_deterministic(self):
        a = synth_heteroskedastic(100, 2, NoiseProfile(0.5, (1.0,), absolute=True), seed=7)
        b = synth_heteroskedastic(100, 2, NoiseProfile(0.5, (1.0,), absolute=True), seed=7)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_homoskedastic_control(self):
        data = synth_heteroskedastic(5000, 1, NoiseProfile(2.0), seed=0, weights=[0.0])
        assert data.labels.std() == pytest.approx(2.0, rel=0.05)
        assert abs(spearmanr(np.abs(data.features[:, 0]), np.abs(data.labels))[0]) < 0.1

    def test_spread_grows_with_abs_x(self):
        profile = NoiseProfile(0.1, (1.0,), absolute=True)
        data = synth_heteroskedastic(2000, 1, profile, seed=0, weights=[1.0])
        resid = data.labels - data.features[:, 0]
        # |resid| = sigma(x) |eta| is a noisy monotone function of |x|
        rho = spearmanr(np.abs(data.features[:, 0]), np.abs(resid))[0]
        assert rho > 0.5

    def test_uniform_noise_unit_variance(self):
        data = synth_heteroskedastic(20000, 1, NoiseProfile(1.0, noise="uniform"), seed=0, weights=[0.0])
        assert data.labels.var() == pytest.approx(1.0, rel=0.05)
        assert np.abs(data.labels).max() <= np.sqrt(3.0)

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(DataError):
            synth_heteroskedastic(100, 1, NoiseProfile(0.0, (1.0,)), seed=0)

    def test_metadata(self):
        data = synth_heteroskedastic(5, 2, NoiseProfile(1.0, (0.5, 0.25)), seed=3)
        assert data.metadata["noise_slopes"] == [0.5, 0.25]
        assert data.metadata["seed"] == 3


class TestMaxFs:
    def test_example_instance(self):
        data, budget = maxfs_instance(MaxFsInstance([[1.0], [2.0]], [1.0, 1.0]))
        assert budget == 0.0
        assert data.m == 5
        rows = sorted(zip(data.features[:, 0].tolist(), data.labels.tolist()))
        assert rows == [(0, 0), (0, 0), (0, 0), (1, 1), (2, 1)]

    def test_single_equation_fit_error(self):
        # a zero-bias line y = w x satisfying one equation misses the other
        data, _ = maxfs_instance(MaxFsInstance([[1.0], [2.0]], [1.0, 1.0]))
        x, y = data.features[:, 0], data.labels
        errors = [np.mean(w * x != y) for w in (1.0, 0.5)]
        assert min(errors) == pytest.approx(1 / 5)

    def test_rejects_one_equation(self):
        with pytest.raises(DataError):
            MaxFsInstance([[1.0]], [1.0])

    def test_rejects_duplicate_rows(self):
        with pytest.raises(DataError):
            MaxFsInstance([[1.0, 2.0], [1.0, 2.0]], [1.0, 0.0])

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 2**31))
    def test_zero_rows_are_majority(self, M, N, seed):
        A = np.random.default_rng(seed).normal(size=(M, N))
        data, _ = maxfs_instance(MaxFsInstance(A, np.ones(M)))
        zeros = (np.abs(data.features).sum(axis=1) == 0) & (data.labels == 0)
        assert data.m == 2 * M + 1 and zeros.sum() == M + 1 > data.m / 2
