from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bplane.processes import ParameterError
from bplane.stats import (RESAMPLES, bootstrap, empirical_laplace, ks_test, ks_two_sample,
                          loglog_slope, partial_correlation)


def test_laplace_of_constant_is_exact():
    c = 0.7
    curve = empirical_laplace(np.full(50, c), [0.0, 0.5, 2.0])
    assert np.array_equal(curve.values, np.exp(-np.array([0.0, 0.5, 2.0]) * c))
    assert curve.degenerate
    single = empirical_laplace([c], [1.0])
    assert single.values[0] == np.exp(-c) and single.degenerate


def test_laplace_band_covers_truth():
    x = stats.gamma(1.5, scale=2 / 3).rvs(4000, random_state=1)
    curve = empirical_laplace(x, [1.5], seed=2)
    truth = (1 + 1.0) ** -1.5
    assert curve.lo[0] - 2 * curve.se[0] <= truth <= curve.hi[0] + 2 * curve.se[0]
    assert not curve.degenerate


def test_ks_self_test_rejection_rate():
    # samples from the law itself exceed the 5% critical value about 5% of the time
    law = stats.gamma(1.5, scale=2 / 3)
    rng = np.random.default_rng(3)
    rejects = 0
    for _ in range(200):
        res = ks_test(law.rvs(300, random_state=rng), law.cdf, resamples=20, seed=1)
        rejects += res.pvalue < 0.05
    assert abs(rejects / 200 - 0.05) < 4 * np.sqrt(0.05 * 0.95 / 200)


def test_ks_detects_wrong_law():
    x = stats.gamma(1.5, scale=2 / 3).rvs(5000, random_state=4)
    assert not ks_test(x, stats.expon.cdf, resamples=50).accepts()


def test_two_sample_ks():
    rng = np.random.default_rng(5)
    assert ks_two_sample(rng.normal(size=800), rng.normal(size=900)).accepts()
    assert not ks_two_sample(rng.normal(size=800), rng.normal(0.5, size=900)).accepts()


def test_loglog_slope_of_square():
    x = np.linspace(0.05, 0.5, 8)
    fit = loglog_slope(x, x ** 2)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.ci[0] == pytest.approx(2.0, abs=1e-9) and fit.ci[1] == pytest.approx(2.0, abs=1e-9)


def test_loglog_slope_with_bootstrap_rows():
    x = np.array([1.0, 2.0, 4.0])
    rows = np.array([[1.0, 4.0, 16.0], [1.1, 4.0, 15.0], [0.9, 4.2, 16.5]])
    fit = loglog_slope(x, x ** 2, ys_boot=rows)
    assert fit.slope == pytest.approx(2.0)
    assert fit.se > 0


def test_loglog_slope_rejects_bad_input():
    with pytest.raises(ParameterError):
        loglog_slope([1.0], [1.0])
    with pytest.raises(ParameterError):
        loglog_slope([1.0, 2.0], [0.0, 1.0])


def test_bootstrap_is_seeded():
    x = np.random.default_rng(6).normal(size=300)
    a = bootstrap(x, lambda v: v.mean(axis=-1), seed=3)
    b = bootstrap(x, lambda v: v.mean(axis=-1), seed=3)
    assert a[1] == b[1] and a[2] == b[2]
    assert a[1] == pytest.approx(x.std() / np.sqrt(x.size), rel=0.15)
    assert RESAMPLES == 1000


def test_empty_samples_rejected():
    with pytest.raises(ParameterError):
        empirical_laplace([], [1.0])


def test_partial_correlation():
    rng = np.random.default_rng(7)
    z = rng.gamma(1.5, 2 / 3, 2000)
    x = z + 0.5 * rng.normal(size=z.size)
    y = z ** 2 + 0.5 * rng.normal(size=z.size)
    assert partial_correlation(x, y, z).pvalue > 0.01
    assert stats.spearmanr(x, y).pvalue < 1e-10
    y2 = y + x
    assert partial_correlation(x, y2, z).pvalue < 0.01
    with pytest.raises(ParameterError):
        partial_correlation(x[:10], y[:10], z[:10])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=40), st.floats(0.0, 5.0))
def test_laplace_values_in_unit_interval(xs, lam):
    curve = empirical_laplace(xs, [lam], resamples=20)
    assert 0.0 <= curve.values[0] <= 1.0
    assert curve.lo[0] <= curve.hi[0]
