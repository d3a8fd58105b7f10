from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from bplane import _kernels
from bplane.hulls import exit_estimate
from bplane.processes import ParameterError, decoration_table, sample_max_units
from bplane.triple import (ATOM, LEFT, RIGHT, SPINE, TreeSample, Window, WindowError,
                           assemble_triple, build_tree, cut_at_level, cut_at_stopping_time,
                           interval_min, interval_min_many, scale_tree)


def brute_anc_min(tree, u):
    m = tree.label[u]
    v = u
    while tree.kind[v] == ATOM and tree.vertex_start[tree.first[v]]:
        f = tree.first[v]
        m = min(m, tree.label[f], tree.edge_min[f])
        v = tree.parent[f]
    k = tree.spine_pos[v]
    tail = tree.spine_emin[k + 1:]
    return min(m, tree.spine_values[k], tail.min() if tail.size else np.inf)


def test_infinite_cutoff_gives_bare_spine():
    triple = assemble_triple(t_max=0.5, dt=1e-3, eps_cutoff=np.inf, seed=3)
    assert triple.atoms.count == 0
    tree = build_tree(triple)
    assert np.array_equal(tree.label[tree.spine_left], triple.spine_values)
    assert np.array_equal(tree.label[tree.spine_right], triple.spine_values)
    tail = np.minimum.accumulate(triple.spine_emin[::-1])[::-1]
    expect = np.minimum(triple.spine_values, np.append(tail[1:], np.inf))
    assert np.array_equal(tree.anc_min[tree.spine_left], expect)


def test_atom_rate_per_side():
    # proposals per side arrive at rate 1/eps along the spine; count atoms high on the spine,
    # where rejection (probability 3 eps / x^2) is small, and correct for it
    dt, eps = 1e-3, 0.0316227766 * 2
    counts, expected = 0, 0.0
    for seed in range(40):
        tri = assemble_triple(t_max=4.0, dt=dt, eps_cutoff=eps, seed=seed, decorations=False)
        x = tri.spine_values
        hi = x >= 2.0
        expected += hi.sum() * tri.spine_step / eps * 2
        k = tri.atom_k
        sel = hi[k]
        accept = 1 - 3 * eps / x[k[sel]] ** 2
        counts += np.sum(1 / accept)
    se = np.sqrt(expected)
    assert abs(counts - expected) < 4 * se


def test_acceptance_rises_with_start_label():
    rng = np.random.default_rng(1)
    delta, m_c, n = 0.01, 5, 5000
    tab = decoration_table()
    rates = []
    for x in (0.5, 1.0, 2.0, 4.0):
        # heights capped at 1 keep the stored excursions small; the trend is unaffected
        ms = np.minimum(sample_max_units(m_c, rng, n), 100)
        st_, *_ = _kernels.grow_batch(rng, ms, np.full(n, x), delta, 0.0, np.inf, 2_000_000,
                                      tab[0], tab[1], np.inf)
        rates.append(np.mean(st_ == _kernels.OK))
    assert all(a < b for a, b in zip(rates, rates[1:]))
    assert rates[-1] > 0.99


def test_point_cap_only_drops_long_accepted_excursions():
    # the same draws are made with and without storage, so a small cap can only turn
    # long accepted excursions into CAPPED; aborted and rejected ones keep their status
    tab = decoration_table()
    ms = np.minimum(sample_max_units(3, np.random.default_rng(2), 400), 60)
    xs = np.full(ms.size, 1.5)
    big = _kernels.grow_batch(np.random.default_rng(5), ms, xs, 0.01, 0.0, 1.0, 10_000_000,
                              tab[0], tab[1], np.inf)
    small = _kernels.grow_batch(np.random.default_rng(5), ms, xs, 0.01, 0.0, 1.0, 400,
                                tab[0], tab[1], np.inf)
    sizes = np.zeros(ms.size, np.int64)
    sizes[big[0] == _kernels.OK] = np.diff(big[1][np.r_[0, np.nonzero(big[0] == _kernels.OK)[0] + 1]])
    long_ok = (big[0] == _kernels.OK) & (sizes > 400)
    assert long_ok.any() and (big[0] != _kernels.OK).any()
    assert np.array_equal(small[0][~long_ok], big[0][~long_ok])
    assert np.all(small[0][long_ok] == _kernels.CAPPED)
    assert np.array_equal(small[2], big[2])


def test_volume_is_sum_of_lifetimes():
    triple = assemble_triple(t_max=0.5, dt=1e-3, eps_cutoff=0.01, seed=3)
    tree = build_tree(triple)
    lifetimes = (triple.atoms.sizes() - 1).sum() * triple.dt
    assert tree.volume == pytest.approx(lifetimes, rel=1e-12)


def test_anc_min_matches_brute_force(spine_tree, window_tree):
    rng = np.random.default_rng(0)
    for tree in (spine_tree, window_tree):
        atom_rows = np.nonzero((tree.kind == ATOM) | (tree.kind == SPINE))[0]
        for u in rng.choice(atom_rows, 1000):
            assert tree.anc_min[u] == brute_anc_min(tree, u)


def test_labels_positive_and_root_unique(window_tree, spine_tree):
    for tree in (window_tree, spine_tree):
        assert tree.label.min() >= 0
        zero = np.nonzero(tree.label == 0)[0]
        assert set(zero) <= {tree.root, tree.spine_right[0]}


def test_interval_min_against_scan(window_tree):
    tree = window_tree
    rng = np.random.default_rng(1)
    n = len(tree)
    u, v = rng.integers(0, n, 1000), rng.integers(0, n, 1000)
    got = interval_min_many(tree, u, v)
    for a, b, g in zip(u, v, got):
        scan = tree.label[a:b + 1].min() if a <= b else min(tree.label[a:].min(), tree.label[:b + 1].min())
        assert g == scan
        assert interval_min(tree, int(a), int(b))[0] == scan
        assert max(interval_min(tree, a, b)[0], interval_min(tree, b, a)[0]) <= min(tree.label[a], tree.label[b])
    assert interval_min(tree, 17, 17) == (tree.label[17], False)


def test_scaling_commutes_with_build():
    triple = assemble_triple(dt=1e-3, seed=5, window=Window(1.0, 1.0, 2.0))
    a = build_tree(triple.scaled(2.0))
    b = scale_tree(build_tree(triple), 2.0)
    for k in ("label", "height", "expl_time", "weight", "anc_min", "reach"):
        assert np.array_equal(getattr(a, k), getattr(b, k), equal_nan=True), k
    assert np.array_equal(a.parent, b.parent)


def test_sides_are_exchangeable():
    left, right = [], []
    for seed in range(300):
        tree = build_tree(assemble_triple(dt=1e-3, seed=seed, window=Window(1.0, 1.0, 2.0)))
        inside = tree.anc_min <= 1.0
        left.append(tree.weight[inside & (tree.side == LEFT)].sum())
        right.append(tree.weight[inside & (tree.side == RIGHT)].sum())
    assert stats.ks_2samp(left, right).pvalue > 0.01


def test_swapped_triple_mirrors_sides():
    triple = assemble_triple(dt=1e-3, seed=4, window=Window(1.0, 1.0, 2.0))
    a, b = build_tree(triple), build_tree(triple.swapped())
    assert a.volume == pytest.approx(b.volume, rel=1e-12)
    assert np.sort(a.label).tolist() == np.sort(b.label).tolist()


def test_cut_labels_are_nonnegative(window_tree):
    disk = cut_at_level(window_tree, 0.8)
    assert disk.tree.label.min() > 0
    assert disk.spine.values.min() >= 0
    assert disk.origin_level == 0.8
    assert disk.perimeter == exit_estimate(window_tree, 0.8)


def test_cut_rejects_levels_outside_window(window_tree):
    with pytest.raises(WindowError):
        cut_at_level(window_tree, 1.5)
    with pytest.raises(ParameterError):
        cut_at_level(window_tree, 0.0)


def test_stopping_time_cut_hits_z(window_tree):
    levels = np.arange(0.05, 0.95, 0.05)
    prof = exit_estimate(window_tree, 0.9)
    z = 0.5 * prof
    disk = cut_at_stopping_time(window_tree, z, levels)
    assert disk.flags["estimate_at_cut"] == pytest.approx(z, rel=0.05)
    low = cut_at_stopping_time(window_tree, 1e-9, levels)
    assert low.flags["first_level"] and low.origin_level == levels[0]
    with pytest.raises(WindowError):
        cut_at_stopping_time(window_tree, 1e9, levels)


def test_stopping_time_dominated_by_gamma():
    # P(T_1 >= u) <= P(Z_u <= 1) with Z_u Gamma(3/2, mean u^2)
    window = Window(2.0, 2.0, 4.0)
    levels = np.arange(0.05, 2.0, 0.05)
    t1 = []
    for seed in range(200):
        tree = build_tree(assemble_triple(dt=1e-3, seed=seed, window=window))
        try:
            t1.append(cut_at_stopping_time(tree, 1.0, levels).origin_level)
        except WindowError:
            t1.append(np.inf)
    t1 = np.array(t1)
    for u in (0.5, 1.0, 1.5):
        p = np.mean(t1 >= u)
        bound = stats.gamma.cdf(1.0, 1.5, scale=u * u / 1.5)
        assert p <= bound + 4 * np.sqrt(bound * (1 - bound) / t1.size)


def test_save_and_load_round_trip(tmp_path, window_tree):
    window_tree.save(tmp_path / "tree")
    back = TreeSample.load(tmp_path / "tree")
    assert np.array_equal(back.label, window_tree.label)
    assert np.array_equal(back.parent, window_tree.parent)
    assert back.window == window_tree.window


def test_window_validation():
    with pytest.raises(ParameterError):
        Window(2.0, 1.0, 3.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_spine_rows_have_spine_kind(seed):
    tree = build_tree(assemble_triple(t_max=0.05, dt=1e-3, eps_cutoff=0.01, seed=seed))
    assert np.all(tree.kind[tree.spine_left] == SPINE)
    assert np.all(tree.label[tree.spine_left] == tree.spine_values)
    assert tree.label.min() >= 0
