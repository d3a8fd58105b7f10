"""Hulls, exit measures, crossing sets and separating cycles on a windowed tree."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .processes import ParameterError
from .triple import ATOM, TreeSample, WindowError


@dataclass(frozen=True)
class HullDecomposition:
    level: float
    member: np.ndarray
    boundary_pts: np.ndarray
    volume: float
    Z_est: float
    eps: float
    flags: dict = field(default_factory=dict)


def default_eps(tree: TreeSample) -> float:
    return 4.0 * float(np.sqrt(tree.dt))


_GL_U, _GL_W = np.polynomial.legendre.leggauss(32)
_GL_U = 0.5 * (_GL_U + 1.0)
_GL_W = 0.5 * _GL_W


def _edge_table(tree: TreeSample):
    """Non-spine edges as (parent label, child label, parent ray minimum), sorted by lower end."""
    if tree._edges is not None:
        return tree._edges
    v = np.nonzero(tree.vertex_start & (tree.parent >= 0))[0]
    p = tree.parent[v]
    a, b = tree.label[p], tree.label[v]
    lo = np.minimum(a, b)
    o = np.argsort(lo, kind="stable")
    tree._edges = (lo[o], a[o], b[o], tree.anc_min[p][o])
    return tree._edges


def layer_occupation(a, b, r: float, eps: float, var: float) -> np.ndarray:
    """Expected fraction of an edge lying in ``(r, r + eps)`` before its label first hits ``r``.

    Labels along the edge form a Brownian bridge from ``a`` to ``b`` with total
    variance ``var``; the killed bridge marginal comes from the reflection principle.
    """
    a = np.asarray(a, float)[:, None]
    b = np.asarray(b, float)[:, None]
    u = _GL_U[None, :]
    sd = np.sqrt(var * u * (1.0 - u))
    m1 = a + (b - a) * u
    m2 = (2 * r - a) + (b - 2 * r + a) * u
    kill = np.exp(np.minimum(-2.0 * np.maximum(a - r, 0) * (b - r) / var, 700.0))
    free = ndtr((r + eps - m1) / sd) - ndtr((r - m1) / sd)
    refl = ndtr((r + eps - m2) / sd) - ndtr((r - m2) / sd)
    occ = np.where(a > r, free - kill * refl, 0.0)
    return occ @ _GL_W


def exit_estimate(tree: TreeSample, r: float, eps: float | None = None,
                  method: str = "bridge") -> float:
    """Exit measure at ``r``: eps^-2 times the volume outside the hull with label below ``r + eps``.

    ``method="points"`` counts exploration rows.  ``method="bridge"`` (default)
    spreads each edge's volume ``2 dt`` along the Brownian bridge between its
    end labels and integrates the layer occupation, which removes the lattice
    noise of single rows without changing the mean.
    """
    return float(exit_profile(tree, [r], eps, method)[0])


def exit_profile(tree: TreeSample, levels, eps: float | None = None,
                 method: str = "bridge") -> np.ndarray:
    """Exit-measure estimates on a grid of levels."""
    eps = default_eps(tree) if eps is None else eps
    if not eps > 0:
        raise ParameterError("eps must be positive")
    levels = np.atleast_1d(np.asarray(levels, float))
    if method == "points":
        out = np.empty(levels.size)
        for i, r in enumerate(levels):
            layer = (tree.anc_min > r) & (tree.label < r + eps)
            out[i] = tree.weight[layer].sum()
        return out / (eps * eps)
    if method != "bridge":
        raise ParameterError(f"unknown method {method!r}")
    delta = float(np.sqrt(tree.dt))
    # bridge marginals have sd at most sqrt(delta)/2; six of them is far enough
    reach = 3.0 * np.sqrt(delta)
    lo, a, b, pan = _edge_table(tree)
    out = np.empty(levels.size)
    for i, r in enumerate(levels):
        j = np.searchsorted(lo, r + eps + reach)
        sel = (pan[:j] > r) & (np.maximum(a[:j], b[:j]) > r - reach)
        out[i] = 2.0 * tree.dt * layer_occupation(a[:j][sel], b[:j][sel], r, eps, delta).sum()
    return out / (eps * eps)


def first_passage(tree: TreeSample, z: float, levels, eps: float | None = None,
                  refine: int = 10) -> tuple[float, int]:
    """First level where the exit-measure estimate reaches ``z``, refined by bisection.

    Returns the level and the index of the first grid level at or above it;
    raises :class:`WindowError` when the profile stays below ``z`` on the grid.
    """
    levels = np.asarray(levels, float)
    prof = exit_profile(tree, levels, eps)
    hit = np.nonzero(prof >= z)[0]
    if hit.size == 0:
        raise WindowError("the exit-measure profile never reaches z on the level grid")
    j = int(hit[0])
    if j == 0:
        return float(levels[0]), 0
    lo, hi = float(levels[j - 1]), float(levels[j])
    for _ in range(refine):
        mid = 0.5 * (lo + hi)
        if exit_estimate(tree, mid, eps) >= z:
            hi = mid
        else:
            lo = mid
    return hi, j


def hull(tree: TreeSample, r: float, eps: float | None = None) -> HullDecomposition:
    """Hull of radius ``r``: rows whose ray to infinity visits a label ``<= r``."""
    if not r > 0:
        raise ParameterError("r must be positive")
    eps = default_eps(tree) if eps is None else eps
    flags = {}
    try:
        tree.check_level(r + eps, "hull level")
    except WindowError as err:
        flags["window"] = str(err)
    member = tree.anc_min <= r
    # boundary: first rows of vertices outside the hull whose parent is inside, or the spine at tau_r
    par = tree.parent
    outside_first = tree.vertex_start & ~member
    has_par = par >= 0
    bnd = np.zeros(len(tree), bool)
    bnd[outside_first & has_par] = member[par[outside_first & has_par]]
    k = tree.last_passage(r)
    if k < len(tree.spine_values):
        bnd[tree.spine_left[k]] = True
    return HullDecomposition(float(r), member, np.nonzero(bnd)[0], float(tree.weight[member].sum()),
                             exit_estimate(tree, r, eps), float(eps), flags)


def hull_volume(tree: TreeSample, r: float) -> float:
    return float(tree.weight[tree.anc_min <= r].sum())


def exit_between(tree: TreeSample, r: float, s: float, t: float, eps: float | None = None) -> float:
    """Exit measure at ``r`` of the atoms grafted on the spine between ``tau_s`` and ``tau_t``."""
    if not r <= s <= t:
        raise ParameterError("need r <= s <= t")
    eps = default_eps(tree) if eps is None else eps
    tree.check_level(r + eps, "exit level")
    tree.check_level(t, "upper level", "closure")
    ks, kt = tree.last_passage(s), tree.last_passage(t)
    sel = (tree.kind == ATOM) & (tree.spine_pos >= ks) & (tree.spine_pos < kt)
    sel &= (tree.anc_min > r) & (tree.label < r + eps)
    return float(tree.weight[sel].sum() / (eps * eps))


@dataclass(frozen=True)
class CrossingSet:
    r: float
    s: float
    points: np.ndarray
    spine_point: int
    subtree_first: np.ndarray
    subtree_last: np.ndarray

    @property
    def count(self) -> int:
        return len(self.points)


def crossings(tree: TreeSample, r: float, s: float) -> CrossingSet:
    """K_r^s: vertices where a subtree leaves the hull of radius ``s`` and later reaches ``<= r``.

    A candidate is the first row of a vertex whose own ray minimum is ``<= s``
    while its parent's is ``> s``: the subtree hanging there starts on the
    boundary at level ``s``.  It is kept when its subtree reaches ``<= r``.
    """
    if not 0 < r < s:
        raise ParameterError("need 0 < r < s")
    tree.check_level(r, "inner level")
    tree.check_level(s, "outer level", "closure")
    v = np.nonzero(tree.vertex_start & (tree.anc_min <= s))[0]
    p = tree.parent[v]
    pa = np.where(p >= 0, tree.anc_min[np.maximum(p, 0)], np.inf)
    v = v[pa > s]
    lo, hi = tree.first[v], tree.last[v]
    low = tree.rmq_reach.query(lo, hi) if len(v) else np.zeros(0)
    keep = low <= r
    # a sub-lattice decoration hanging outside the hull that dips to r crosses s on its own
    d = np.nonzero(tree.vertex_start & (tree.anc_min > s) & (tree.reach <= r))[0]
    pts = np.concatenate((v[keep], d))
    first = np.concatenate((lo[keep], d))
    last = np.concatenate((hi[keep], d))
    o = np.argsort(first, kind="stable")
    return CrossingSet(float(r), float(s), pts[o], tree.last_passage(s), first[o], last[o])


def reaches_between(tree: TreeSample, r: float, s: float, t: float) -> bool:
    """Whether an atom grafted between ``tau_s`` and ``tau_t`` reaches label ``<= r``.

    The exit measure at ``r`` of such atoms vanishes exactly when none of them
    gets there, so this is the lattice-robust form of ``{Z_r^{s,t} = 0}``.
    """
    if not r <= s <= t:
        raise ParameterError("need r <= s <= t")
    tree.check_level(r, "exit level")
    tree.check_level(t, "upper level", "closure")
    ks, kt = tree.last_passage(s), tree.last_passage(t)
    sel = (tree.kind == ATOM) & (tree.spine_pos >= ks) & (tree.spine_pos < kt)
    return bool(np.any(tree.reach[sel] <= r))


@dataclass(frozen=True)
class CyclePath:
    """Separating cycle through the crossing points of an annulus.

    ``pts`` lists rows in cycle order: the closing point, then one row per
    crossing point (the first visit below the crossing), then the closing
    point again.  ``segments`` holds one record per piece of the cycle:
    (start row, end row, lowest label on the piece, length).
    """

    pts: np.ndarray
    length: float
    annulus: tuple
    count: int
    segments: list
    enclosed: tuple

    @property
    def bound(self) -> float:
        r, s = self.annulus
        return 2.0 * (self.count + 1) * (s - r)


def _window_min(lab: np.ndarray, lo: int, hi: int) -> float:
    """Minimum over rows ``lo..hi`` inclusive (``+inf`` if empty)."""
    return float(lab[lo:hi + 1].min()) if hi >= lo else np.inf


def build_separating_cycle(tree: TreeSample, r: float, s: float,
                           cross: CrossingSet | None = None) -> CyclePath:
    """Concatenate the label geodesics between consecutive crossing points of the annulus ``(r, s)``.

    Every piece runs through rows outside all crossing subtrees, whose labels
    stay above ``r``; its length is ``L_start + L_end - 2 * (lowest label in between)``.
    The cycle is closed through the geodesic ray at level ``R``, the lowest label
    before the first and after the last crossing subtree.
    """
    tree.check_level(s, "cycle level")
    cross = crossings(tree, r, s) if cross is None else cross
    k_s = cross.spine_point
    if not 1 <= k_s < len(tree.spine_values):
        raise WindowError("the last passage at s is not inside the spine window")
    sp = int(tree.spine_right[k_s - 1])
    # the spine point stands for the part of the plane below it: atoms grafted at the
    # point itself lie outside that part and may hold crossings of their own
    below_end = tree.spine_left[k_s - 2] if k_s >= 2 else tree.spine_left[k_s - 1]
    f = np.concatenate((cross.subtree_first, [sp]))
    ell = np.concatenate((cross.subtree_last, [below_end]))
    rows = np.concatenate((cross.points, [sp]))
    o = np.argsort(f, kind="stable")
    f, ell, rows = f[o], ell[o], rows[o]
    lab = tree.label
    n = len(lab)
    segments = []
    for i in range(len(f) - 1):
        m = min(s, _window_min(lab, ell[i] + 1, f[i + 1] - 1))
        segments.append((int(rows[i]), int(rows[i + 1]), m, 2.0 * (s - m)))
    head = _window_min(lab, 0, f[0] - 1)
    tail = _window_min(lab, ell[-1] + 1, n - 1)
    big_r = min(s, head, tail)
    if big_r >= s:
        # the closing point is the first crossing point itself
        segments.append((int(rows[-1]), int(rows[0]), s, 0.0))
        length = float(sum(seg[3] for seg in segments))
        return CyclePath(np.concatenate((rows, rows[:1])).astype(np.int64), length,
                         (float(r), float(s)), len(f) - 1, segments,
                         (f.astype(np.int64), ell.astype(np.int64)))
    if head <= tail:
        c = int(np.argmax(lab[:f[0]] <= big_r)) if f[0] > 0 else 0
        m_in = min(s, _window_min(lab, c, f[0] - 1))
        m_out = min(s, tail, _window_min(lab, 0, c))
    else:
        c = int(ell[-1] + 1 + np.nonzero(lab[ell[-1] + 1:] <= big_r)[0][-1])
        m_in = min(s, _window_min(lab, c, n - 1), head)
        m_out = min(s, _window_min(lab, ell[-1] + 1, c))
    lc = min(float(lab[c]), s)
    segments.insert(0, (c, int(rows[0]), m_in, lc + s - 2.0 * m_in))
    segments.append((int(rows[-1]), c, m_out, s + lc - 2.0 * m_out))
    length = float(sum(seg[3] for seg in segments))
    pts = np.concatenate(([c], rows, [c])).astype(np.int64)
    return CyclePath(pts, length, (float(r), float(s)), len(f) - 1, segments,
                     (f.astype(np.int64), ell.astype(np.int64)))


def cycle_labels_ok(cycle: CyclePath) -> bool:
    """Every piece of the cycle keeps its labels in ``(r, s]``."""
    r, s = cycle.annulus
    return all(r < seg[2] <= s for seg in cycle.segments)


def annulus_cycle_upper(tree: TreeSample, r: float, s: float, min_width: float | None = None) -> float:
    """Upper bound for the shortest separating cycle in the annulus ``(r, s)``.

    Minimum of the constructed cycle and, over a dyadic sweep of sub-annuli of
    width down to ``min_width``, their constructed cycles and the crossing-count
    bounds ``2 (N + 1) * width``.
    """
    if not 0 < r < s:
        raise ParameterError("need 0 < r < s")
    min_width = (s - r) / 8.0 if min_width is None else min_width
    best = np.inf
    n = 1
    while (s - r) / n >= min_width * (1 - 1e-9):
        w = (s - r) / n
        for i in range(n):
            lo, hi = r + i * w, r + (i + 1) * w
            cross = crossings(tree, lo, hi)
            best = min(best, 2.0 * (cross.count + 1) * w,
                       build_separating_cycle(tree, lo, hi, cross).length)
        n *= 2
    return float(best)


def iso_ratio(tree: TreeSample, cycle: CyclePath) -> float:
    """Cycle length over the fourth root of the enclosed volume.

    The enclosed volume is the volume of the crossing subtrees, the spine one
    included; it contains the hull of radius ``r``.
    """
    f, ell = cycle.enclosed
    cw = np.concatenate(([0.0], np.cumsum(tree.weight)))
    vol = float(np.sum(cw[ell + 1] - cw[f]))
    if not vol > 0:
        raise ParameterError("degenerate cycle: enclosed volume is zero")
    return cycle.length / vol ** 0.25
