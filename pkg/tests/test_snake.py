from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bplane import _kernels
from bplane.processes import PathGrid, decoration_table, sample_ito_excursion, sample_max_units
from bplane.snake import (DomainError, exit_measure, grow_labels, min_label, scale_snake,
                          shift_snake, truncate)

DT = 1e-4
DELTA = 1e-2


def tent(*legs):
    """Lattice contour from alternating up/down leg lengths."""
    h = [0]
    for i, n in enumerate(legs):
        step = 1 if i % 2 == 0 else -1
        h += [h[-1] + step * (k + 1) for k in range(n)]
    return PathGrid(DT, np.array(h) * DELTA)


def test_zero_contour_keeps_start_label():
    s = grow_labels(PathGrid(DT, np.zeros(1)), 1.25, seed=0)
    assert s.labels.tolist() == [1.25]
    assert min_label(s) == 1.25
    assert s.lifetime == 0.0


def test_label_variance_is_height():
    contour = tent(8, 8)
    labels = np.array([grow_labels(contour, 0.0, seed=i, decorations=False).labels[[4, 8]]
                       for i in range(10_000)])
    var = labels.var(axis=0, ddof=1)
    expect = np.array([4, 8]) * DELTA
    se = expect * np.sqrt(2 / labels.shape[0])
    assert np.all(np.abs(var - expect) < 4 * se)


def test_label_covariance_is_interval_minimum():
    # peaks at heights 6 and 7 separated by a dip to 3
    contour = tent(6, 3, 4, 7)
    a, b = 6, 6 + 3 + 4
    assert contour.values[a] == pytest.approx(6 * DELTA) and contour.values[b] == pytest.approx(7 * DELTA)
    x = np.array([grow_labels(contour, 0.0, seed=i, decorations=False).labels[[a, b]]
                  for i in range(10_000)])
    cov = np.cov(x.T)[0, 1]
    expect = 3 * DELTA
    se = np.sqrt((6 * 7 + 3 * 3) * DELTA ** 2 / x.shape[0])
    assert abs(cov - expect) < 4 * se


def test_snake_property_and_rebuild():
    s = grow_labels(sample_ito_excursion(0.1, DT, seed=5), 2.0, seed=6)
    assert np.array_equal(s.rebuilt_labels(), s.labels)
    # down-steps repeat the label of the vertex they return to
    assert np.array_equal(s.labels, s.labels[s.first])


def test_hitting_measure_of_lower_label():
    # N_1(W_* < 0) = 3/2; proposals are aborted as soon as a label reaches 0
    rng = np.random.default_rng(3)
    m_c, n = 5, 20_000
    tab = decoration_table()
    ms = sample_max_units(m_c, rng, n)
    status, *_ = _kernels.grow_batch(rng, ms, np.ones(n), DELTA, 0.0, np.inf, 2_000_000,
                                     tab[0], tab[1], np.inf)
    w = 1 / (2 * m_c * DELTA)
    p = np.mean(status == _kernels.ABORTED)
    est, se = w * p, w * np.sqrt(p * (1 - p) / n)
    # the sub-lattice closure is known to run about 3% low at this resolution
    assert abs(est - 1.5) < 4 * se + 0.03 * 1.5


def test_min_label_scales_and_shifts_exactly():
    s = grow_labels(sample_ito_excursion(0.1, DT, seed=8), 1.0, seed=9)
    assert min_label(scale_snake(s, 3.0)) == 3.0 * min_label(s)
    assert min_label(shift_snake(s, 0.5)) == min_label(s) + 0.5


def test_scaling_identity_and_composition():
    s = grow_labels(sample_ito_excursion(0.1, DT, seed=1), 1.0, seed=2)
    one = scale_snake(s, 1.0)
    for k in ("labels", "inc", "edge_min", "path_min", "reach"):
        assert np.array_equal(getattr(one, k), getattr(s, k))
    a = scale_snake(scale_snake(s, 2.0), 0.5)
    b = scale_snake(s, 1.0)
    for k in ("labels", "inc", "edge_min", "path_min", "reach"):
        assert np.array_equal(getattr(a, k), getattr(b, k))
    assert a.dt == s.dt


def test_exit_measure_scaling():
    s = grow_labels(sample_ito_excursion(0.3, DT, seed=12), 0.5, seed=13)
    lam = 2.0
    z = exit_measure(s, 0.2, eps=0.05)
    zs = exit_measure(scale_snake(s, lam), 0.2 * lam, eps=0.05 * lam)
    assert zs == pytest.approx(lam * lam * z, rel=1e-12)


def test_exit_measure_zero_above_layer():
    s = grow_labels(tent(3, 3), 5.0, seed=1, decorations=False)
    assert exit_measure(s, 0.0, eps=0.1) == 0.0
    assert exit_measure(s, 0.0, eps=0.1, method="bridge") == 0.0


def test_exit_measure_domain():
    s = grow_labels(tent(3, 3), 1.0, seed=1)
    with pytest.raises(DomainError):
        exit_measure(s, 1.0)
    with pytest.raises(DomainError):
        truncate(s, 2.0)


def test_exit_measure_laplace_functional():
    """N_x(1 - exp(-lam Z_r)) = (lam^-1/2 + sqrt(2/3)(x - r))^-2.

    Run at x - r = 0.1, lam = 100, which by scaling is 100 times the value
    0.30306 at x - r = 1, lam = 1.  Excursions higher than 1 are skipped; their
    total mass 1/2 bounds the bias from one side.
    """
    dt, delta, m_c, n, x, lam, h_max = 1e-6, 1e-3, 1, 17_000, 0.1, 100.0, 1.0
    rng = np.random.default_rng(5)
    ms = sample_max_units(m_c, rng, n)
    vals = np.zeros(n)
    for i, m in enumerate(ms):
        if m * delta > h_max:
            continue
        steps = _kernels.walk_with_max(rng, int(m))
        s = grow_labels(PathGrid(dt, steps * delta), x, rng)
        if s.reach.min() <= 0.0:
            vals[i] = -np.expm1(-lam * exit_measure(s, 0.0, eps=0.01, method="bridge"))
    w = 1 / (2 * m_c * delta)
    est, se = w * vals.mean(), w * vals.std(ddof=1) / np.sqrt(n)
    skipped = w * np.mean(ms * delta > h_max)
    oracle = (lam ** -0.5 + np.sqrt(2 / 3) * x) ** -2
    assert oracle / 100 == pytest.approx(0.30306, abs=1e-5)
    assert est - 4 * se <= oracle <= est + skipped + 4 * se


def test_truncate_without_hit_is_identity():
    s = grow_labels(tent(4, 4), 3.0, seed=2, decorations=False)
    dec = truncate(s, 0.0)
    assert dec.truncated is s and dec.below == [] and dec.exit_measure_estimate == 0.0


def test_truncate_partitions_steps():
    for seed in range(20):
        s = grow_labels(sample_ito_excursion(0.2, DT, seed=seed), 0.4, seed=100 + seed)
        dec = truncate(s, 0.3)
        n_steps = len(dec.truncated.labels) - 1 + sum(len(b.labels) - 1 for b in dec.below)
        assert n_steps == len(s.labels) - 1
        for b in dec.below:
            assert b.start_label == 0.3
            assert b.labels[0] == 0.3 and b.labels[-1] == 0.3
        assert np.all(dec.truncated.path_min > 0.3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-3, 3), st.floats(0.25, 4.0))
def test_shift_and_scale_properties(seed, c, lam):
    s = grow_labels(tent(5, 2, 3, 6), 1.0, seed=seed)
    assert min_label(shift_snake(s, c)) == min_label(s) + c
    sc = scale_snake(s, lam)
    assert np.array_equal(sc.labels, s.labels * lam)
    assert sc.dt == s.dt * lam ** 4
