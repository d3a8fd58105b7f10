"""Discretized snake trajectories on lattice excursions.

A :class:`SnakeSample` stores one row per contour point.  The label of an
up-step is its parent's label plus a stored increment; down-steps reuse the
parent's values, so the snake property holds by construction and labels can be
rebuilt bit-exactly from the increments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .dumps import load_columns, save_columns
from .processes import (NO_DECORATION, ExcursionSample, ParameterError, PathGrid,
                        as_generator, decoration_table)


class DomainError(ValueError):
    """Raised when an operation is called outside its domain."""


class ResolutionWarning(UserWarning):
    """The requested resolution is finer than the lattice supports."""


@dataclass(frozen=True)
class SnakeSample:
    start_label: float
    contour: ExcursionSample
    labels: np.ndarray
    parent: np.ndarray
    inc: np.ndarray
    edge_min: np.ndarray
    path_min: np.ndarray
    first: np.ndarray
    last: np.ndarray
    reach: np.ndarray

    @property
    def dt(self) -> float:
        return self.contour.contour.dt

    @property
    def heights(self) -> np.ndarray:
        return self.contour.contour.values

    @property
    def lifetime(self) -> float:
        return (len(self.labels) - 1) * self.dt

    def rebuilt_labels(self) -> np.ndarray:
        return _kernels.labels_from_increments(self.start_label, self.inc, self.first, self.parent)

    def save(self, path, seed=None) -> None:
        cols = {k: getattr(self, k) for k in
                ("labels", "parent", "inc", "edge_min", "path_min", "first", "last", "reach")}
        cols["steps"] = self.contour.steps
        save_columns(path, cols, {"kind": "snake", "dt": self.dt, "start_label": self.start_label,
                                  "eps_cutoff": self.contour.eps_cutoff,
                                  "mass_weight": self.contour.mass_weight, "seed": seed})

    @classmethod
    def load(cls, path) -> "SnakeSample":
        cols, head = load_columns(path)
        dt = head["dt"]
        steps = cols.pop("steps")
        delta = float(np.sqrt(dt))
        exc = ExcursionSample(PathGrid(dt, steps * delta), float(steps.max()) * delta,
                              head["mass_weight"], steps, delta, head["eps_cutoff"])
        return cls(head["start_label"], exc, **cols)


@dataclass(frozen=True)
class SnakeDecomposition:
    level: float
    truncated: SnakeSample
    below: list
    exit_measure_estimate: float


def _as_excursion(contour) -> ExcursionSample:
    if isinstance(contour, ExcursionSample):
        return contour
    if isinstance(contour, PathGrid):
        delta = float(np.sqrt(contour.dt))
        steps = np.rint(contour.values / delta)
        if not np.allclose(steps * delta, contour.values, atol=1e-9 * max(1.0, delta)):
            raise ParameterError("contour values must lie on the lattice sqrt(dt) * Z")
        steps = steps.astype(np.int32)
        return ExcursionSample(contour, float(steps.max()) * delta, 0.0, steps, delta, 0.0)
    raise ParameterError("contour must be an ExcursionSample or a PathGrid")


def grow_labels(contour, start_label: float, seed=None, decorations: bool = True) -> SnakeSample:
    """Tree-indexed Gaussian labels on a lattice contour.

    Each up-step pushes an N(0, delta) increment; the bridge minimum of every
    edge and, optionally, the sub-lattice decoration low are drawn alongside.
    """
    exc = _as_excursion(contour)
    steps = np.ascontiguousarray(exc.steps, dtype=np.int32)
    if steps[0] != 0 or steps[-1] != 0 or np.any(steps < 0):
        raise ParameterError("contour must be a nonnegative excursion from 0 to 0")
    rng = as_generator(seed)
    tab = decoration_table() if decorations else NO_DECORATION
    lab, inc, emn, pmn, fst, par, lst, rch = _kernels.label_contour(
        rng, steps, float(start_label), exc.delta, *tab)
    return SnakeSample(float(start_label), exc, lab, par, inc, emn, pmn, fst, lst, rch)


def min_label(snake: SnakeSample) -> float:
    """W_*: lowest label reached, edge bridges and sub-lattice decorations included."""
    return float(snake.reach.min())


def _sub_snake(snake: SnakeSample, lo: int, hi: int, start_label: float) -> SnakeSample:
    """Excursion made of points ``lo..hi`` (inclusive), re-rooted at ``lo``."""
    steps = snake.contour.steps[lo:hi + 1] - snake.contour.steps[lo]
    dt = snake.dt
    delta = snake.contour.delta
    exc = ExcursionSample(PathGrid(dt, steps * delta), float(steps.max()) * delta,
                          0.0, steps.astype(np.int32), delta, 0.0)
    par = snake.parent[lo:hi + 1] - lo
    fst = snake.first[lo:hi + 1] - lo
    lst = snake.last[lo:hi + 1] - lo
    par[0] = -1
    fst[0] = 0
    fst[-1] = 0
    par[-1] = -1
    lst[0] = hi - lo
    lst[-1] = hi - lo
    # children of the new root point to local index 0
    par[par == snake.first[lo] - lo] = 0
    par[(par < 0)] = -1
    inc = snake.inc[lo:hi + 1].copy()
    inc[0] = 0.0
    inc[-1] = 0.0
    child = np.nonzero((par == 0) & (fst == np.arange(len(fst))))[0]
    inc[child] = snake.labels[lo + child] - start_label
    lab = _kernels.labels_from_increments(start_label, inc, fst, par)
    emn = snake.edge_min[lo:hi + 1].copy()
    rch = snake.reach[lo:hi + 1].copy()
    emn[[0, -1]] = start_label
    rch[[0, -1]] = start_label
    pmn = _kernels.path_minima(start_label, emn, fst, par)
    return SnakeSample(start_label, exc, lab, par, inc, emn, pmn, fst, lst, rch)


def exit_measure(snake: SnakeSample, r: float, eps: float | None = None,
                 method: str = "points") -> float:
    """eps^-2 * dt * #{steps whose ancestral path stays above r and whose label is below r + eps}.

    Labels move by about ``dt**0.25`` per step, so the point count needs ``eps``
    well above that.  ``method="bridge"`` instead spreads each edge's volume
    ``2 dt`` along the Brownian bridge between its end labels, killed at ``r``,
    which stays accurate for ``eps`` of a few ``sqrt(dt)``.
    """
    if not snake.start_label > r:
        raise DomainError("start label must exceed the level")
    if eps is None:
        eps = 4.0 * np.sqrt(snake.dt)
    if not eps > 0:
        raise ParameterError("eps must be positive")
    if method == "bridge":
        from .hulls import layer_occupation
        idx = np.arange(len(snake.labels))
        v = np.nonzero((snake.first == idx) & (snake.parent >= 0))[0]
        p = snake.parent[v]
        keep = snake.path_min[p] > r
        occ = layer_occupation(snake.labels[p][keep], snake.labels[v][keep], r, eps,
                               snake.contour.delta)
        return float(2.0 * snake.dt * occ.sum() / (eps * eps))
    if method != "points":
        raise ParameterError(f"unknown method {method!r}")
    if eps < np.sqrt(snake.dt):
        warnings.warn(f"eps={eps:g} is below sqrt(dt)={np.sqrt(snake.dt):g}", ResolutionWarning)
    pm = snake.path_min[:-1]
    lab = snake.labels[:-1]
    count = np.count_nonzero((pm > r) & (lab < r + eps))
    return float(count * snake.dt / (eps * eps))


def truncate(snake: SnakeSample, r: float, eps: float | None = None) -> SnakeDecomposition:
    """Split a snake at level ``r`` into its truncation and the excursions below ``r``."""
    if not snake.start_label > r:
        raise DomainError("start label must exceed the level")
    n = len(snake.labels)
    idx = np.arange(n)
    pm, par = snake.path_min, snake.parent
    entry = (snake.first == idx) & (par >= 0) & (pm <= r)
    entry &= pm[np.maximum(par, 0)] > r
    roots = np.nonzero(entry)[0]
    keep = np.ones(n, bool)
    below = []
    for v in roots:
        lo, hi = v - 1, snake.last[v] + 1
        below.append(_sub_snake(snake, lo, hi, float(r)))
        keep[v:hi + 1] = False
    if roots.size:
        kept = np.nonzero(keep)[0]
        remap = np.full(n, -1, np.int64)
        remap[kept] = np.arange(kept.size)
        steps = snake.contour.steps[kept]
        delta = snake.contour.delta
        exc = replace(snake.contour, contour=PathGrid(snake.dt, steps * delta), steps=steps,
                      maxHeight=float(steps.max()) * delta)
        par_new = np.where(par[kept] >= 0, remap[np.maximum(par[kept], 0)], -1)
        trunc = SnakeSample(snake.start_label, exc, snake.labels[kept], par_new, snake.inc[kept],
                            snake.edge_min[kept], snake.path_min[kept], remap[snake.first[kept]],
                            remap[snake.last[kept]], snake.reach[kept])
        # the last visit of a vertex may have been removed with a below-excursion
        trunc = _fix_last_visits(trunc)
    else:
        trunc = snake
    z = exit_measure(snake, r, eps)
    return SnakeDecomposition(float(r), trunc, below, z)


def _fix_last_visits(s: SnakeSample) -> SnakeSample:
    n = len(s.labels)
    last = np.zeros(n, np.int64)
    np.maximum.at(last, s.first, np.arange(n))
    return replace(s, last=last[s.first])


def scale_snake(snake: SnakeSample, lam: float) -> SnakeSample:
    """hom_lambda: labels x lam, heights x lam^2, time x lam^4 (exact arithmetic on stored fields)."""
    if not lam > 0:
        raise ParameterError("lambda must be positive")
    lam = float(lam)
    c = snake.contour
    dt = c.contour.dt * lam ** 4
    delta = c.delta * lam * lam
    exc = ExcursionSample(PathGrid(dt, c.contour.values * (lam * lam), c.contour.t0 * lam ** 4),
                          c.maxHeight * (lam * lam), c.mass_weight / (lam * lam), c.steps, delta,
                          c.eps_cutoff * (lam * lam))
    return SnakeSample(snake.start_label * lam, exc, snake.labels * lam, snake.parent,
                       snake.inc * lam, snake.edge_min * lam, snake.path_min * lam, snake.first,
                       snake.last, snake.reach * lam)


def shift_snake(snake: SnakeSample, c: float) -> SnakeSample:
    """Translate every label by ``c``."""
    c = float(c)
    return replace(snake, start_label=snake.start_label + c, labels=snake.labels + c,
                   edge_min=snake.edge_min + c, path_min=snake.path_min + c,
                   reach=snake.reach + c)
