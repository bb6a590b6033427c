import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sacca.data import (
    PairedDataset,
    load_pair,
    preprocess,
    read_csv_table,
    split_half,
    standardize,
    winsorize,
    write_csv_table,
)
from sacca.errors import ConstantColumn, DimensionMismatch, TooFewSamples, ValidationError


def pair(x, y=None):
    x = np.asarray(x, dtype=float)
    if y is None:
        y = np.random.default_rng(0).standard_normal(x.shape[0])
    return PairedDataset(x, y)


def test_standardize_three_points():
    out = standardize(pair([1.0, 2.0, 3.0, 2.0]))
    col = out.x[:, 0]
    sd = np.sqrt(np.mean((np.array([1, 2, 3, 2]) - 2.0) ** 2))
    np.testing.assert_allclose(col, (np.array([1, 2, 3, 2]) - 2.0) / sd)


def test_standardize_population_sd_convention():
    # [1, 2, 3] has population sd sqrt(2/3), so the ends map to -/+1.2247
    x = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    out = standardize(pair(x))
    np.testing.assert_allclose(out.x[:3, 0], [-1.224744871, 0.0, 1.224744871], atol=1e-9)


def test_standardize_idempotent():
    x = np.random.default_rng(1).standard_normal((20, 3))
    once = standardize(pair(x))
    twice = standardize(once)
    np.testing.assert_allclose(twice.x, once.x, atol=1e-12)


def test_constant_column_rejected():
    x = np.c_[np.arange(5.0), np.zeros(5)]
    with pytest.raises(ConstantColumn) as info:
        standardize(pair(x))
    assert info.value.index == 1


@given(arrays(np.float64, (12, 3), elements=st.floats(-1e3, 1e3)),
       st.floats(0.1, 50.0), st.floats(-100.0, 100.0))
@settings(max_examples=60, deadline=None)
def test_standardize_moments_and_affine_invariance(x, a, b):
    if np.any(np.std(x, axis=0) < 1e-3 * (1 + np.abs(x).max())):
        return
    y = np.random.default_rng(0).standard_normal(12)
    s = standardize(PairedDataset(x, y))
    assert np.allclose(s.x.mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(np.mean(s.x**2, axis=0), 1.0, atol=1e-9)
    t = standardize(PairedDataset(a * x + b, y))
    np.testing.assert_allclose(t.x, s.x, atol=1e-7)


def test_winsorize_hand_example():
    # mean 2, mean absolute deviation 3.2, upper bound 2 + 2 * 3.2 = 8.4
    x = np.array([0.0, 0, 0, 0, 10])
    out = winsorize(pair(x), 2.0)
    np.testing.assert_allclose(out.x[:, 0], [0, 0, 0, 0, 8.4])


def test_winsorize_inside_bounds_unchanged():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    out = winsorize(pair(x), 2.0)
    np.testing.assert_array_equal(out.x[:, 0], x)


def test_winsorize_zero_multiplier_gives_mean():
    x = np.array([1.0, 5.0, 2.0, 8.0])
    out = winsorize(pair(x), 0.0)
    np.testing.assert_allclose(out.x[:, 0], np.full(4, x.mean()))


def test_winsorize_after_standardize_rejected():
    with pytest.raises(ValidationError):
        winsorize(standardize(pair(np.arange(6.0))))


def test_transform_like_replays_training_preprocessing():
    rng = np.random.default_rng(3)
    x_raw = rng.standard_normal((30, 2)) * 5 + 1
    y_raw = rng.standard_normal((30, 3))
    x_raw[0, 0] = 40.0
    d = preprocess(PairedDataset(x_raw, y_raw), winsor=2.0)
    again = d.transform_like(x_raw, y_raw)
    np.testing.assert_array_equal(again.x, d.x)
    np.testing.assert_array_equal(again.y, d.y)


def test_split_half_sizes_and_determinism():
    p = split_half(6, 4)
    assert p.train_idx.size == 3 and p.holdout_idx.size == 3
    assert not set(p.train_idx) & set(p.holdout_idx)
    q = split_half(7, 4)
    assert {q.train_idx.size, q.holdout_idx.size} == {3, 4}
    r = split_half(6, 4)
    np.testing.assert_array_equal(p.train_idx, r.train_idx)


def test_shape_errors():
    with pytest.raises(DimensionMismatch):
        PairedDataset(np.zeros((5, 2)), np.zeros((4, 2)))
    with pytest.raises(TooFewSamples):
        PairedDataset(np.zeros((3, 1)), np.zeros((3, 1)))
    with pytest.raises(ValidationError):
        PairedDataset(np.array([[1.0], [np.nan], [2], [3]]), np.zeros((4, 1)))


def test_swap_subset_permute():
    rng = np.random.default_rng(0)
    d = standardize(PairedDataset(rng.standard_normal((8, 3)), rng.standard_normal((8, 2))))
    s = d.swap()
    assert s.p1 == 2 and s.p2 == 3
    np.testing.assert_array_equal(s.swap().x, d.x)
    sub = d.subset(x_cols=[2, 0])
    assert sub.x_names == ("x3", "x1")
    np.testing.assert_array_equal(sub.x[:, 0], d.x[:, 2])
    perm = rng.permutation(8)
    np.testing.assert_array_equal(d.permute_y(perm).y, d.y[perm])


def test_csv_round_trip_and_errors(tmp_path):
    x = np.arange(12.0).reshape(6, 2) ** 1.5
    write_csv_table(tmp_path / "x.csv", ("a", "b"), x)
    write_csv_table(tmp_path / "y.csv", ("c",), x[:, :1] * 2)
    names, vals = read_csv_table(tmp_path / "x.csv")
    assert names == ("a", "b")
    np.testing.assert_array_equal(vals, x)
    d = load_pair(tmp_path / "x.csv", tmp_path / "y.csv")
    assert d.x_names == ("a", "b") and d.y_names == ("c",)

    (tmp_path / "bad.csv").write_text("a,b\n1,2\n3\n")
    with pytest.raises(ValidationError):
        read_csv_table(tmp_path / "bad.csv")
    (tmp_path / "txt.csv").write_text("a\n1\nfoo\n")
    with pytest.raises(ValidationError):
        read_csv_table(tmp_path / "txt.csv")
    (tmp_path / "nan.csv").write_text("a\n1\nnan\n")
    with pytest.raises(ValidationError):
        read_csv_table(tmp_path / "nan.csv")
    write_csv_table(tmp_path / "short.csv", ("c",), x[:5, :1])
    with pytest.raises(DimensionMismatch):
        load_pair(tmp_path / "x.csv", tmp_path / "short.csv")
