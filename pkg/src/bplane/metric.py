"""Distances on the windowed tree: the label bound, chain relaxation and the geodesic ray to infinity.

All distances are computed between exploration rows.  ``delta_zero`` is the
one-step bound from label range minima; ``delta`` relaxes it over chains of
intermediate rows (a shortest path), which is an upper bound for the true
distance on the sampled points and decreases as the node budget grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .processes import ParameterError
from .triple import TreeSample, WindowError, interval_min_many


class DomainError(ValueError):
    """Query points outside the required set."""


def _cyclic_mins(tree: TreeSample, u, v):
    u = np.asarray(u, np.int64)
    v = np.asarray(v, np.int64)
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    inner = interval_min_many(tree, lo, hi)
    outer = interval_min_many(tree, hi, lo)
    return inner, outer


def delta_zero_many(tree: TreeSample, u, v) -> np.ndarray:
    """Vectorized ``delta_zero`` over paired index arrays."""
    inner, outer = _cyclic_mins(tree, u, v)
    lab = tree.label
    return lab[np.asarray(u)] + lab[np.asarray(v)] - 2.0 * np.maximum(inner, outer)


def delta_zero(tree: TreeSample, u: int, v: int) -> float:
    """L_u + L_v - 2 max(min over [u, v], min over [v, u]); the second interval wraps through infinity."""
    return float(delta_zero_many(tree, np.array([u]), np.array([v]))[0])


def delta_zero_flag(tree: TreeSample, u: int, v: int) -> bool:
    """True when the wrapping minimum, which decides the value, sits at an edge row of the window."""
    inner, outer = _cyclic_mins(tree, np.array([u]), np.array([v]))
    if outer[0] < inner[0]:
        return False
    n = len(tree)
    return bool(outer[0] in (tree.label[0], tree.label[n - 1]))


@dataclass(frozen=True)
class MetricGraph:
    nodes: np.ndarray
    weights: np.ndarray
    policy: str

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        i, j = np.nonzero(np.isfinite(self.weights) & ~np.eye(len(self.nodes), dtype=bool))
        keep = i < j
        return [(int(self.nodes[a]), int(self.nodes[b]), float(self.weights[a, b]))
                for a, b in zip(i[keep], j[keep])]


def _pair_matrix(nodes: np.ndarray, fn) -> np.ndarray:
    n = len(nodes)
    ii, jj = np.triu_indices(n, 1)
    w = np.zeros((n, n))
    vals = fn(nodes[ii], nodes[jj])
    w[ii, jj] = vals
    w[jj, ii] = vals
    return w


def _sparsify(w: np.ndarray, labels: np.ndarray, k: int = 16, low: int = 64) -> np.ndarray:
    """Keep each node's ``k`` nearest neighbours plus all pairs among the ``low`` lowest labels."""
    n = len(w)
    out = np.full_like(w, np.inf)
    np.fill_diagonal(out, 0.0)
    if n <= k + 1:
        return w.copy()
    nn = np.argsort(w, axis=1, kind="stable")[:, 1:k + 1]
    rows = np.repeat(np.arange(n), k)
    out[rows, nn.ravel()] = w[rows, nn.ravel()]
    out[nn.ravel(), rows] = w[nn.ravel(), rows]
    cheap = np.argsort(labels, kind="stable")[:low]
    out[np.ix_(cheap, cheap)] = w[np.ix_(cheap, cheap)]
    out[0, 1] = w[0, 1]
    out[1, 0] = w[1, 0]
    return out


def shortest_path(w: np.ndarray, src: int = 0) -> np.ndarray:
    """Dense Dijkstra; zero-weight edges are allowed and ties go to the lowest index."""
    n = len(w)
    dist = np.full(n, np.inf)
    dist[src] = 0.0
    done = np.zeros(n, bool)
    for _ in range(n):
        cand = np.where(done, np.inf, dist)
        i = int(np.argmin(cand))
        if not np.isfinite(cand[i]):
            break
        done[i] = True
        np.minimum(dist, dist[i] + w[i], out=dist)
    return dist


def _node_order(pool: np.ndarray, u: int, v: int, seed) -> np.ndarray:
    """A fixed ordering of candidate nodes; a budget takes a prefix, so node sets are nested."""
    rng = np.random.default_rng(np.random.SeedSequence([int(min(u, v)), int(max(u, v)),
                                                        0 if seed is None else int(seed)]))
    pool = pool[(pool != u) & (pool != v)]
    return np.concatenate(([u, v], rng.permutation(pool))).astype(np.int64)


def _relax(tree: TreeSample, u: int, v: int, pool: np.ndarray, budget: int, policy: str,
           seed, fn) -> tuple[float, MetricGraph]:
    if budget < 2:
        raise ParameterError("budget must be at least 2")
    if u == v:
        return 0.0, MetricGraph(np.array([u]), np.zeros((1, 1)), policy)
    nodes = _node_order(pool, u, v, seed)[:budget]
    w = _pair_matrix(nodes, fn)
    if policy == "sparse":
        w = _sparsify(w, tree.label[nodes])
    elif policy != "complete":
        raise ParameterError(f"unknown edge policy {policy!r}")
    dist = shortest_path(w, 0)
    return float(dist[1]), MetricGraph(nodes, w, policy)


def _settle(val: float, d0: float) -> float:
    # chains that beat the one-step bound only by rounding are discarded
    return val if val < d0 - 1e-12 * max(d0, 1.0) else d0


def _candidates(tree: TreeSample, u: int, v: int, d0: float, mask=None) -> np.ndarray:
    # an intermediate row w can only shorten a chain if |L_w - L_u| and |L_w - L_v| are below d0
    lab = tree.label
    ok = (np.abs(lab - lab[u]) < d0) & (np.abs(lab - lab[v]) < d0)
    if mask is not None:
        ok &= mask
    return np.nonzero(ok)[0]


def delta(tree: TreeSample, u: int, v: int, budget: int = 256, policy: str = "complete",
          seed=None, graph: bool = False):
    """Shortest chain of ``delta_zero`` steps between ``u`` and ``v`` on at most ``budget`` rows."""
    d0 = delta_zero(tree, u, v)
    pool = _candidates(tree, u, v, d0)
    val, g = _relax(tree, u, v, pool, budget, policy, seed,
                    lambda a, b: delta_zero_many(tree, a, b))
    val = _settle(val, d0)
    return (val, g) if graph else val


def delta_hull(tree: TreeSample, u: int, v: int, r: float, budget: int = 256,
               policy: str = "complete", seed=None) -> float:
    """Chain relaxation with intermediate rows restricted to the hull of radius ``r``."""
    member = tree.anc_min <= r
    if not (member[u] and member[v]):
        raise DomainError("both endpoints must lie in the hull")
    tree.check_level(r, "hull level")
    d0 = delta_zero(tree, u, v)
    pool = _candidates(tree, u, v, d0, member)
    val, _ = _relax(tree, u, v, pool, budget, policy, seed,
                    lambda a, b: delta_zero_many(tree, a, b))
    return _settle(val, d0)


def _subtree_delta_zero(tree: TreeSample, lo: int, hi: int, a, b) -> np.ndarray:
    a = np.asarray(a, np.int64)
    b = np.asarray(b, np.int64)
    x, y = np.minimum(a, b), np.maximum(a, b)
    rmq = tree.rmq_label
    inner = rmq.query(x, y)
    left = rmq.query(np.full_like(x, lo), x)
    right = rmq.query(y, np.full_like(y, hi))
    outer = np.minimum(left, right)
    lab = tree.label
    return lab[a] + lab[b] - 2.0 * np.maximum(inner, outer)


def delta_subtree(tree: TreeSample, ancestor: int | None, u: int, v: int, budget: int = 256,
                  policy: str = "complete", seed=None) -> float:
    """Chains inside the subtree of ``ancestor``, whose exploration is a cyclic interval of its own.

    ``ancestor=None`` means the whole tree and reproduces :func:`delta`.
    """
    if ancestor is None:
        return delta(tree, u, v, budget, policy, seed)
    lo, hi = int(tree.first[ancestor]), int(tree.last[ancestor])
    if not (lo <= u <= hi and lo <= v <= hi):
        raise DomainError("points must descend from the ancestor")

    def fn(a, b):
        return _subtree_delta_zero(tree, lo, hi, a, b)

    d0 = float(fn([u], [v])[0])
    rows = np.arange(lo, hi + 1)
    lab = tree.label
    pool = rows[(np.abs(lab[rows] - lab[u]) < d0) & (np.abs(lab[rows] - lab[v]) < d0)]
    val, _ = _relax(tree, u, v, pool, budget, policy, seed, fn)
    return _settle(val, d0)


@dataclass(frozen=True)
class GeodesicRay:
    levels: np.ndarray
    left_points: np.ndarray
    right_points: np.ndarray


def left_point(tree: TreeSample, t: float) -> int:
    """Last row with label ``<= t``."""
    hits = np.nonzero(tree.label <= t)[0]
    return int(hits[-1])


def right_point(tree: TreeSample, t: float) -> int:
    """First row with label ``<= t``."""
    return int(np.argmax(tree.label <= t))


def geodesic_ray(tree: TreeSample, t_grid) -> GeodesicRay:
    """Points of the geodesic from the root to infinity on both sides, with their exact labels."""
    t_grid = np.asarray(t_grid, float)
    if np.any(t_grid < 0):
        raise ParameterError("levels must be nonnegative")
    top = float(t_grid.max()) if t_grid.size else 0.0
    tree.check_level(top, "ray level")
    lab = tree.label
    # record minima from the right end (left ray) and from the left end (right ray)
    suf = np.minimum.accumulate(lab[::-1])[::-1]
    pre = np.minimum.accumulate(lab)
    n = len(lab)
    left = np.searchsorted(suf, t_grid, side="right") - 1
    right = np.searchsorted(-pre, -t_grid, side="left").astype(np.int64)
    if np.any(left < 0) or np.any(right >= n):
        raise WindowError("ray level not reached inside the window")
    return GeodesicRay(lab[left], left.astype(np.int64), right)


def path_length(tree: TreeSample, pts, budget: int = 2) -> float:
    """Sum of distances between consecutive points."""
    pts = np.asarray(pts, np.int64)
    if len(pts) < 2:
        return 0.0
    if budget <= 2:
        return float(delta_zero_many(tree, pts[:-1], pts[1:]).sum())
    return float(sum(delta(tree, int(a), int(b), budget) for a, b in zip(pts[:-1], pts[1:])))
