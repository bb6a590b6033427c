import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sacca.data import PairedDataset, standardize
from sacca.errors import AllSmoothedZero, ValidationError
from sacca.fcca import (
    evaluate_fit,
    fit_fcca,
    fit_nonsparse_fcca,
    group_norms,
    random_init,
    soft_threshold_update,
    threshold_factors,
)


def square_data(n=150, p=5, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    y = rng.standard_normal((n, p))
    y[:, 0] = x[:, 0] ** 2 + noise * rng.standard_normal(n)
    return standardize(PairedDataset(x, y))


def test_threshold_single_survivor():
    fac, info = threshold_factors([3.0, 1.0, 0.5], 1.0)
    np.testing.assert_allclose(fac * [3.0, 1.0, 0.5], [1.0, 0.0, 0.0], atol=1e-9)
    assert info.gamma == pytest.approx(1.0, abs=1e-9)


def test_threshold_two_norm_example():
    fac, info = threshold_factors([2.0, 1.0], 1.2)
    # the threshold solves 1.12 g^2 - 3.36 g + 1.8 = 0 on [0, 1)
    roots = np.roots([1.12, -3.36, 1.8])
    gamma = roots[(roots >= 0) & (roots < 1)].real[0]
    assert info.gamma == pytest.approx(gamma, abs=1e-9)
    norms = fac * [2.0, 1.0]
    assert np.sum(norms**2) == pytest.approx(1.0)
    assert np.sum(norms) == pytest.approx(1.2)


def test_threshold_slack_budget():
    fac, info = threshold_factors([1.0, 1.0], 2.0)
    assert info.branch == "none"
    np.testing.assert_allclose(fac, 1 / np.sqrt(2))


def test_single_covariate_never_thresholds():
    fac, info = threshold_factors([0.7], 1.0)
    assert info.gamma == 0.0
    assert fac[0] * 0.7 == pytest.approx(1.0)


def test_all_zero_targets_rejected():
    with pytest.raises(AllSmoothedZero):
        threshold_factors([0.0, 0.0], 1.0)


@given(st.integers(2, 12), st.floats(1.0, 3.5), st.integers(0, 100_000))
@settings(max_examples=100, deadline=None)
def test_threshold_kkt(p, C, seed):
    P = np.random.default_rng(seed).standard_normal((p, 20))
    vals, fac, info = soft_threshold_update(P, C)
    norms = group_norms(vals)
    assert np.sum(norms**2) == pytest.approx(1.0, abs=1e-9)
    if info.branch == "threshold":
        assert norms.sum() == pytest.approx(C, abs=1e-8)
        assert info.bracket[1] - info.bracket[0] <= 1e-8
        # survivors share the shrinkage: ||f_j|| proportional to ||P_j|| - gamma
        pn = group_norms(P)
        live = pn > info.gamma
        np.testing.assert_allclose(norms[live], (pn[live] - info.gamma) / info.lam, rtol=1e-9)
        assert np.all(norms[~live] == 0)
    else:
        assert norms.sum() <= C + 1e-9


def test_zero_init_rejected():
    d = square_data(40, 2)
    with pytest.raises(ValidationError):
        fit_fcca(d, 1.0, 1.0, init=np.zeros(40))


def test_sparse_trace_is_monotone():
    rng = np.random.default_rng(3)
    for trial in range(50):
        d = square_data(40, 3, seed=trial)
        init = random_init(3, 40, int(rng.integers(1 << 30)))
        m = fit_fcca(d, 1.3, 1.3, init=init, max_iter=30)
        assert np.all(np.diff(m.trace) >= -1e-12)


def test_recovers_square_signal():
    d = square_data()
    m = fit_fcca(d, 1.0, 1.0)
    assert list(m.support_x) == [0]
    assert list(m.support_y) == [0]
    assert m.objective > 0.9
    assert np.sum(m.f.group_norms**2) == pytest.approx(1.0)


def test_nonsparse_fit_independent_of_start():
    d = square_data(80, 3, seed=2)
    a = fit_nonsparse_fcca(d, seed=0, tol=1e-10, max_iter=2000)
    b = fit_nonsparse_fcca(d, seed=9, tol=1e-10, max_iter=2000)
    assert a.objective == pytest.approx(b.objective, abs=1e-5)


def test_evaluate_on_training_points_matches_fit():
    d = square_data(60, 3, seed=4)
    m = fit_fcca(d, 1.2, 1.2)
    out = evaluate_fit(m, d)
    np.testing.assert_allclose(out["f_values"], m.f.values, atol=1e-9)
    np.testing.assert_allclose(out["g_values"], m.g.values, atol=1e-9)
    expect = np.corrcoef(m.f.total, m.g.total)[0, 1]
    assert out["correlation"] == pytest.approx(expect, abs=1e-9)
