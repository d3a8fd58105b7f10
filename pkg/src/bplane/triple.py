"""Infinite-spine coding triples of the Brownian plane in a finite window, and their exploration.

Window layout.  Levels ``relevance <= full <= closure`` split the spine at their
last passage times (a last passage index ``k*(r)`` is one past the last spine
edge whose bridge minimum is ``<= r``):

* before ``k*(full)`` every atom is grown;
* between ``k*(full)`` and ``k*(closure)`` only atoms reaching ``<= relevance``
  are kept (proposals too small to get there are skipped);
* beyond ``k*(closure)`` the tree is replaced by its exit-measure description:
  a perimeter ``Z ~ Gamma(3/2, mean closure**2)`` and a Poisson family of
  excursions from level ``closure`` that reach ``<= relevance``, separated by
  entries carrying the minimum of the parts that were skipped.

Hulls are exact for levels ``r <= relevance``; crossing sets ``K_r^s`` need
``s <= closure`` and separating cycles need ``s <= relevance``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .dumps import load_columns, save_columns
from .processes import (NO_DECORATION, ParameterError, PathGrid, as_generator,
                        cutoff_units, decoration_table, lattice_delta, sample_max_units,
                        spine_edge_minima, spine_until)
from .snake import SnakeSample

SPINE, ATOM, EXTERIOR, SEPARATOR = 0, 1, 2, 3
LEFT, RIGHT = 1, -1

_COLS = ("H", "L", "I", "E", "P", "F", "A", "V", "R")


class WindowError(RuntimeError):
    """A query depends on parts of the tree outside the simulated window."""


@dataclass(frozen=True)
class Window:
    relevance_level: float
    full_level: float
    closure_level: float
    clearance: float = 4.0
    kappa: float = 6.0

    def __post_init__(self):
        if not 0 < self.relevance_level <= self.full_level <= self.closure_level:
            raise ParameterError("window levels must satisfy 0 < relevance <= full <= closure")

    @classmethod
    def around(cls, level: float, closure: float | None = None) -> "Window":
        return cls(level, level, closure if closure is not None else 2.0 * level)

    def scaled(self, lam: float) -> "Window":
        return replace(self, relevance_level=self.relevance_level * lam,
                       full_level=self.full_level * lam, closure_level=self.closure_level * lam)


@dataclass
class Packed:
    """Labelled lattice excursions stored back to back (see ``_kernels`` for the columns)."""

    offsets: np.ndarray
    cols: dict

    @classmethod
    def empty(cls) -> "Packed":
        cols = {k: np.zeros(0, np.int32 if k == "H" else (np.int64 if k in "FAV" else float))
                for k in _COLS}
        return cls(np.zeros(1, np.int64), cols)

    @property
    def count(self) -> int:
        return len(self.offsets) - 1

    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def take(self, keep: np.ndarray) -> "Packed":
        keep = np.asarray(keep, np.int64)
        starts, lens = self.offsets[keep], self.sizes()[keep]
        idx = _ranges(starts, lens)
        offs = np.zeros(len(keep) + 1, np.int64)
        offs[1:] = np.cumsum(lens)
        return Packed(offs, {k: v[idx] for k, v in self.cols.items()})

    @staticmethod
    def concat(parts: list["Packed"]) -> "Packed":
        parts = [p for p in parts if p.count]
        if not parts:
            return Packed.empty()
        offs = [np.zeros(1, np.int64)]
        base = 0
        for p in parts:
            offs.append(p.offsets[1:] + base)
            base += p.offsets[-1]
        cols = {k: np.concatenate([p.cols[k] for p in parts]) for k in _COLS}
        return Packed(np.concatenate(offs), cols)

    def snake(self, j: int, dt: float, start_label: float | None = None) -> SnakeSample:
        from .processes import ExcursionSample
        lo, hi = self.offsets[j], self.offsets[j + 1]
        c = {k: v[lo:hi] for k, v in self.cols.items()}
        delta = lattice_delta(dt)
        steps = c["H"].astype(np.int32)
        exc = ExcursionSample(PathGrid(dt, steps * delta), float(steps.max()) * delta, 0.0, steps, delta, 0.0)
        x = float(c["L"][0]) if start_label is None else start_label
        return SnakeSample(x, exc, c["L"], c["A"], c["I"], c["E"], c["P"], c["F"], c["V"], c["R"])


def _ranges(starts: np.ndarray, lens: np.ndarray) -> np.ndarray:
    """Concatenation of ``arange(s, s + n)`` over paired ``starts`` and ``lens``."""
    lens = np.asarray(lens, np.int64)
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, np.int64)
    shift = np.asarray(starts, np.int64) - np.concatenate(([0], np.cumsum(lens)[:-1]))
    return np.repeat(shift, lens) + np.arange(total)


@dataclass
class CodingTriple:
    """Spine, atoms on both sides and (optionally) the exterior closure of one plane sample."""

    dt: float
    spine_step: float
    spine_values: np.ndarray
    spine_emin: np.ndarray
    atoms: Packed
    atom_k: np.ndarray
    atom_side: np.ndarray
    eps_cutoff: float
    window: Window | None
    ext: Packed = field(default_factory=Packed.empty)
    ext_pos: np.ndarray = field(default_factory=lambda: np.zeros(0))
    perimeter: float = 0.0
    sep_labels_left: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sep_labels_right: np.ndarray = field(default_factory=lambda: np.zeros(0))
    flags: dict = field(default_factory=dict)
    seed: object = None

    @property
    def delta(self) -> float:
        return lattice_delta(self.dt)

    @property
    def spine(self) -> PathGrid:
        return PathGrid(self.spine_step, self.spine_values)

    @property
    def t_max(self) -> float:
        return (len(self.spine_values) - 1) * self.spine_step

    def _side_atoms(self, side: int) -> list[tuple[float, SnakeSample]]:
        out = []
        for j in np.nonzero(self.atom_side == side)[0]:
            out.append((self.atom_k[j] * self.spine_step, self.atoms.snake(j, self.dt)))
        return out

    @property
    def left_atoms(self) -> list[tuple[float, SnakeSample]]:
        return self._side_atoms(LEFT)

    @property
    def right_atoms(self) -> list[tuple[float, SnakeSample]]:
        return self._side_atoms(RIGHT)

    def last_passage(self, r: float) -> int:
        return last_passage_index(self.spine_emin, r)

    def scaled(self, lam: float) -> "CodingTriple":
        """hom_lambda on every stored field."""
        lam = float(lam)
        l2 = lam * lam
        cols = dict(self.atoms.cols)
        ecols = dict(self.ext.cols)
        for c in (cols, ecols):
            for k in "LIEPR":
                c[k] = c[k] * lam
        return replace(self, dt=self.dt * l2 * l2, spine_step=self.spine_step * l2,
                       spine_values=self.spine_values * lam, spine_emin=self.spine_emin * lam,
                       atoms=Packed(self.atoms.offsets, cols), ext=Packed(self.ext.offsets, ecols),
                       ext_pos=self.ext_pos * l2, perimeter=self.perimeter * l2,
                       sep_labels_left=self.sep_labels_left * lam,
                       sep_labels_right=self.sep_labels_right * lam,
                       eps_cutoff=self.eps_cutoff * l2,
                       window=self.window.scaled(lam) if self.window else None)

    def swapped(self) -> "CodingTriple":
        """Exchange the two sides (mirror image)."""
        return replace(self, atom_side=-self.atom_side, ext_pos=-self.ext_pos,
                       sep_labels_left=self.sep_labels_right, sep_labels_right=self.sep_labels_left)


def last_passage_index(spine_emin: np.ndarray, r: float) -> int:
    """One past the last spine edge whose minimum is ``<= r`` (0 when there is none)."""
    hits = np.nonzero(spine_emin[1:] <= r)[0]
    return int(hits[-1] + 2) if hits.size else 0


def _grow(rng, ms, xs, delta, abort, accept, cap, tab, ceiling):
    if len(ms) == 0:
        return np.zeros(0, np.int8), Packed.empty(), np.zeros(0)
    st, offs, mins, *cols = _kernels.grow_batch(rng, np.asarray(ms, np.int64), np.asarray(xs, float),
                                                delta, abort, accept, cap, tab[0], tab[1], ceiling)
    ok = np.nonzero(st == _kernels.OK)[0]
    packed = Packed(np.concatenate(([0], offs[1:][ok])), dict(zip(_COLS, cols)))
    return st, packed, mins


def assemble_triple(t_max: float | None = None, dt: float = 1e-4, eps_cutoff: float | None = None,
                    seed=None, window: Window | None = None, spine_refine: int = 16,
                    decorations: bool = True, point_cap: int = 4_000_000) -> CodingTriple:
    """Sample a coding triple of the Brownian plane.

    Without ``window`` the spine is simulated up to height ``t_max`` and every
    atom with maximum height at least ``eps_cutoff`` is grown.  With a window the
    spine runs until it reaches ``clearance * closure`` and the layout described
    in the module docstring is used.
    """
    if not dt > 0:
        raise ParameterError("dt must be positive")
    if eps_cutoff is None:
        eps_cutoff = 10.0 * dt
    rng = as_generator(seed)
    delta = lattice_delta(dt)
    step = delta / spine_refine
    no_atoms = not np.isfinite(eps_cutoff)
    m_c = 1 if no_atoms else cutoff_units(eps_cutoff, dt)
    flags: dict = {}
    tab = decoration_table() if decorations else NO_DECORATION
    if window is None:
        if t_max is None or not t_max > 0:
            raise ParameterError("t_max must be positive when no window is given")
        n = int(round(t_max / step))
        values = np.empty(n + 1)
        values[0] = 0.0
        pos = np.cumsum(rng.standard_normal((n, 9)) * np.sqrt(step), axis=0)
        values[1:] = np.sqrt(np.einsum("ij,ij->i", pos, pos))
        emin = spine_edge_minima(values, step, rng)
        full_k = len(values)
        closure_k = full_k
        ceiling = np.inf
    else:
        values, emin, reached = spine_until(window.clearance * window.closure_level, step, rng)
        if not reached:
            flags["spine_short"] = True
        full_k = last_passage_index(emin, window.full_level)
        closure_k = last_passage_index(emin, window.closure_level)
        ceiling = window.relevance_level

    parts, ks, sides = [], [], []
    if not no_atoms:
        # every atom before the last passage at the full level
        k_idx = np.arange(1, max(full_k, 1))
        for side in (LEFT, RIGHT):
            counts = rng.poisson(step / (m_c * delta), size=k_idx.size)
            kk = np.repeat(k_idx, counts)
            ms = sample_max_units(m_c, rng, kk.size)
            st, packed, _ = _grow(rng, ms, values[kk], delta, 0.0, np.inf, point_cap, tab, ceiling)
            flags["capped"] = flags.get("capped", 0) + int(np.sum(st == _kernels.CAPPED))
            ok = st == _kernels.OK
            parts.append(packed)
            ks.append(kk[ok])
            sides.append(np.full(int(ok.sum()), side, np.int8))
        if window is not None and closure_k > full_k:
            a = window.relevance_level
            k_idx = np.arange(max(full_k, 1), closure_k)
            h_min = ((values[k_idx] - a) / window.kappa) ** 2
            m_min = np.maximum(m_c, np.floor(h_min / delta)).astype(np.int64)
            for side in (LEFT, RIGHT):
                counts = rng.poisson(step / (m_min * delta))
                kk = np.repeat(k_idx, counts)
                ms = np.floor(np.repeat(m_min, counts) / (1.0 - rng.random(kk.size))).astype(np.int64)
                st, packed, _ = _grow(rng, ms, values[kk], delta, 0.0, a, point_cap, tab, ceiling)
                flags["capped"] = flags.get("capped", 0) + int(np.sum(st == _kernels.CAPPED))
                ok = st == _kernels.OK
                parts.append(packed)
                ks.append(kk[ok])
                sides.append(np.full(int(ok.sum()), side, np.int8))
    atoms = Packed.concat(parts)
    atom_k = np.concatenate(ks) if ks else np.zeros(0, np.int64)
    atom_side = np.concatenate(sides) if sides else np.zeros(0, np.int8)

    triple = CodingTriple(dt, step, values, emin, atoms, atom_k.astype(np.int64), atom_side,
                          float(eps_cutoff), window, flags=flags, seed=seed)
    if window is not None and not no_atoms:
        _add_exterior(triple, rng, m_c, point_cap, tab)
    return triple


def _add_exterior(triple: CodingTriple, rng, m_c: int, cap: int, tab) -> None:
    w = triple.window
    s0, a = w.closure_level, w.relevance_level
    delta = triple.delta
    z = rng.gamma(1.5, s0 * s0 / 1.5)
    m_e = max(m_c, int(np.floor(((s0 - a) / w.kappa) ** 2 / delta)))
    n = rng.poisson(z / (2.0 * m_e * delta))
    pos = (rng.random(n) - 0.5) * z
    ms = sample_max_units(m_e, rng, n)
    st, packed, _ = _grow(rng, ms, np.full(n, s0), delta, 0.0, a, cap, tab, a)
    triple.flags["capped"] = triple.flags.get("capped", 0) + int(np.sum(st == _kernels.CAPPED))
    pos = pos[st == _kernels.OK]
    order = np.argsort(pos, kind="stable")
    triple.ext = packed.take(order)
    triple.ext_pos = pos[order]
    triple.perimeter = float(z)

    def separators(edges):
        gaps = np.diff(edges)
        e = rng.exponential(size=gaps.size)
        with np.errstate(divide="ignore"):
            inv = 1.0 / (s0 - a) ** 2 + 2.0 * e / (3.0 * np.maximum(gaps, 1e-300))
        return s0 - inv ** -0.5

    right = triple.ext_pos[triple.ext_pos < 0]
    left = triple.ext_pos[triple.ext_pos >= 0]
    triple.sep_labels_right = separators(np.concatenate(([-z / 2], right, [0.0])))
    triple.sep_labels_left = separators(np.concatenate(([0.0], left, [z / 2])))


class SparseTable:
    """Range-minimum index: O(n log n) build, O(1) vectorized queries on closed ranges."""

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, float)
        self.levels = [values]
        j = 1
        while (1 << j) <= len(values):
            prev = self.levels[-1]
            half = 1 << (j - 1)
            self.levels.append(np.minimum(prev[:-half], prev[half:]))
            j += 1

    def query(self, lo, hi):
        lo = np.asarray(lo, np.int64)
        hi = np.asarray(hi, np.int64)
        span = hi - lo + 1
        j = np.floor(np.log2(np.maximum(span, 1))).astype(np.int64)
        if np.ndim(j) == 0:
            tab = self.levels[int(j)]
            return float(min(tab[lo], tab[hi - (1 << int(j)) + 1]))
        out = np.empty(lo.shape)
        for lev in np.unique(j):
            m = j == lev
            tab = self.levels[lev]
            out[m] = np.minimum(tab[lo[m]], tab[hi[m] - (1 << int(lev)) + 1])
        return out


@dataclass
class TreeSample:
    """Flattened exploration of the windowed infinite tree.

    Rows follow the exploration order, right side first.  ``kind`` is one of
    SPINE/ATOM/EXTERIOR/SEPARATOR; ``side`` is +1 (left), -1 (right) or 0
    (spine).  ``first``/``last`` are the first and last rows visiting the same
    vertex; ``parent`` is the first row of the parent vertex (-1 if none).
    ``anc_min`` is the lowest label on the ray from the row's vertex to infinity.
    Exterior rows have no known height (NaN).
    """

    dt: float
    expl_time: np.ndarray
    height: np.ndarray
    label: np.ndarray
    weight: np.ndarray
    side: np.ndarray
    kind: np.ndarray
    spine_pos: np.ndarray
    path_min: np.ndarray
    edge_min: np.ndarray
    reach: np.ndarray
    anc_min: np.ndarray
    parent: np.ndarray
    first: np.ndarray
    last: np.ndarray
    vertex_start: np.ndarray
    spine_values: np.ndarray
    spine_emin: np.ndarray
    spine_left: np.ndarray
    spine_right: np.ndarray
    window: Window | None
    perimeter: float = 0.0
    flags: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    _rmq: SparseTable | None = field(default=None, repr=False)
    _rmq_reach: SparseTable | None = field(default=None, repr=False)
    _prefix: tuple | None = field(default=None, repr=False)
    _edges: tuple | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.label)

    @property
    def root(self) -> int:
        return int(self.spine_left[0])

    @property
    def rmq_label(self) -> SparseTable:
        if self._rmq is None:
            self._rmq = SparseTable(self.label)
        return self._rmq

    @property
    def rmq_reach(self) -> SparseTable:
        if self._rmq_reach is None:
            self._rmq_reach = SparseTable(self.reach)
        return self._rmq_reach

    @property
    def volume(self) -> float:
        return float(self.weight.sum())

    def last_passage(self, r: float) -> int:
        return last_passage_index(self.spine_emin, r)

    def _prefix_suffix(self):
        if self._prefix is None:
            self._prefix = (np.minimum.accumulate(self.label),
                            np.minimum.accumulate(self.label[::-1])[::-1])
        return self._prefix

    def check_level(self, r: float, what: str = "level", limit: str = "relevance") -> None:
        if self.window is None:
            if r >= self.spine_values[-1]:
                raise WindowError(f"{what} {r} is beyond the spine window")
            return
        top = {"relevance": self.window.relevance_level,
               "closure": self.window.closure_level}[limit]
        if r > top * (1 + 1e-12):
            raise WindowError(f"{what} {r} exceeds the {limit} level {top} of the window")

    def save(self, path) -> None:
        names = ("expl_time", "height", "label", "weight", "side", "kind", "spine_pos", "path_min",
                 "edge_min", "reach", "anc_min", "parent", "first", "last", "vertex_start",
                 "spine_values", "spine_emin", "spine_left", "spine_right")
        w = self.window
        save_columns(path, {k: getattr(self, k) for k in names},
                     {"kind": "tree", "dt": self.dt, "perimeter": self.perimeter,
                      "window": None if w is None else [w.relevance_level, w.full_level,
                                                        w.closure_level, w.clearance, w.kappa],
                      "flags": self.flags, **self.meta})

    @classmethod
    def load(cls, path) -> "TreeSample":
        cols, head = load_columns(path)
        w = head.get("window")
        return cls(dt=head["dt"], window=None if w is None else Window(*w),
                   perimeter=head["perimeter"], flags=head.get("flags", {}),
                   meta={k: head[k] for k in ("seed", "eps_cutoff", "t_max") if k in head}, **cols)


def build_tree(triple: CodingTriple) -> TreeSample:
    """Exploration sequence of the windowed tree (see :class:`TreeSample`)."""
    K = len(triple.spine_values) - 1
    X = triple.spine_values
    delta = triple.delta
    # min label on the spine strictly after vertex k (edges k -> k+1, ...)
    fut = np.full(K + 1, np.inf)
    if K:
        fut[:-1] = np.minimum.accumulate(triple.spine_emin[1:][::-1])[::-1]
    spine_anc = np.minimum(X, fut)

    atoms, ext = triple.atoms, triple.ext
    n_at = atoms.offsets[-1]
    n_ex = ext.offsets[-1]
    # source codes: packed atom rows [0, n_at), exterior rows [n_at, n_at+n_ex),
    # spine vertices [n_at+n_ex, .. + K + 1), separators after that
    sp0 = n_at + n_ex
    sep0 = sp0 + K + 1

    def side_blocks(side):
        sel = np.nonzero(triple.atom_side == side)[0]
        sel = sel[np.argsort(triple.atom_k[sel], kind="stable")]
        starts = atoms.offsets[sel]
        sizes = atoms.sizes()[sel]
        return sel, starts, sizes

    # left: for each k, [atoms at k: points 0..2n-1] then spine k
    sel, starts, sizes = side_blocks(LEFT)
    a_keys = triple.atom_k[sel].astype(float)
    s_keys = np.arange(K + 1) + 0.5
    keys = np.concatenate((a_keys, s_keys))
    bstart = np.concatenate((starts, sp0 + np.arange(K + 1)))
    blen = np.concatenate((sizes - 1, np.ones(K + 1, np.int64)))
    order = np.argsort(keys, kind="stable")
    left_src = _ranges(bstart[order], blen[order])

    # right, outward: for each k, spine k then [atoms at k: points 1..2n]; reversed afterwards
    selr, startsr, sizesr = side_blocks(RIGHT)
    keys = np.concatenate((triple.atom_k[selr] + 0.5, np.arange(K + 1, dtype=float)))
    bstart = np.concatenate((startsr + 1, sp0 + np.arange(K + 1)))
    blen = np.concatenate((sizesr - 1, np.ones(K + 1, np.int64)))
    order = np.argsort(keys, kind="stable")
    right_src = _ranges(bstart[order], blen[order])[::-1]

    # exterior, sorted by boundary position; separators around each excursion
    ext_src_r, ext_src_l = [], []
    n_sep_r = len(triple.sep_labels_right)
    if ext.count or n_sep_r:
        right_ids = np.nonzero(triple.ext_pos < 0)[0]
        left_ids = np.nonzero(triple.ext_pos >= 0)[0]
        pieces = []
        for i, j in enumerate(right_ids):
            pieces.append(np.array([sep0 + i]))
            lo, hi = ext.offsets[j], ext.offsets[j + 1]
            pieces.append(n_at + np.arange(hi - 1, lo, -1))
        pieces.append(np.array([sep0 + len(right_ids)]))
        ext_src_r = np.concatenate(pieces)
        pieces = []
        for i, j in enumerate(left_ids):
            pieces.append(np.array([sep0 + n_sep_r + i]))
            lo, hi = ext.offsets[j], ext.offsets[j + 1]
            pieces.append(n_at + np.arange(lo, hi - 1))
        pieces.append(np.array([sep0 + n_sep_r + len(left_ids)]))
        ext_src_l = np.concatenate(pieces)
    ext_src_r = np.asarray(ext_src_r, np.int64)
    ext_src_l = np.asarray(ext_src_l, np.int64)

    src = np.concatenate((ext_src_r, right_src, left_src, ext_src_l))
    n = len(src)
    n_right = len(ext_src_r) + len(right_src)
    gpos_src = np.full(sep0 + n_sep_r + len(triple.sep_labels_left), -1, np.int64)
    # spine sources appear twice (right and left); record the left occurrence for the map
    gpos_src[src[n_right:]] = np.arange(n_right, n)
    spine_right_rows = np.empty(K + 1, np.int64)
    is_sp = (src >= sp0) & (src < sep0)
    rows = np.nonzero(is_sp[:n_right])[0]
    spine_right_rows[src[rows] - sp0] = rows
    gpos_src[src[:n_right][~is_sp[:n_right]]] = np.nonzero(~is_sp[:n_right])[0]
    spine_left_rows = gpos_src[sp0:sp0 + K + 1].copy()

    kind = np.empty(n, np.int8)
    label = np.empty(n)
    height = np.full(n, np.nan)
    weight = np.zeros(n)
    side = np.zeros(n, np.int8)
    spine_pos = np.full(n, K + 1, np.int64)
    path_min = np.empty(n)
    edge_min = np.empty(n)
    reach = np.empty(n)
    anc_min = np.empty(n)
    parent = np.full(n, -1, np.int64)
    vid = np.empty(n, np.int64)

    A = atoms.cols
    E = ext.cols
    m_at = src < n_at
    m_ex = (src >= n_at) & (src < sp0)
    m_sp = is_sp
    m_sep = src >= sep0

    # atoms
    at_owner = np.repeat(np.arange(atoms.count), atoms.sizes())
    q = src[m_at]
    own = at_owner[q]
    base = atoms.offsets[own]
    loc_first = A["F"][q]
    kind[m_at] = ATOM
    label[m_at] = A["L"][q]
    height[m_at] = triple.atom_k[own] * triple.spine_step + A["H"][q] * delta
    weight[m_at] = triple.dt
    side[m_at] = triple.atom_side[own]
    spine_pos[m_at] = triple.atom_k[own]
    path_min[m_at] = A["P"][q]
    edge_min[m_at] = A["E"][q]
    reach[m_at] = A["R"][q]
    anc_min[m_at] = np.minimum(A["P"][q], fut[triple.atom_k[own]])
    vid[m_at] = np.where(loc_first == 0, sp0 + triple.atom_k[own], base + loc_first)

    # exterior
    ex_owner = np.repeat(np.arange(ext.count), ext.sizes())
    q = src[m_ex] - n_at
    own = ex_owner[q]
    ebase = ext.offsets[own]
    kind[m_ex] = EXTERIOR
    label[m_ex] = E["L"][q]
    weight[m_ex] = triple.dt
    side[m_ex] = np.where(triple.ext_pos[own] < 0, RIGHT, LEFT)
    path_min[m_ex] = E["P"][q]
    edge_min[m_ex] = E["E"][q]
    reach[m_ex] = E["R"][q]
    anc_min[m_ex] = E["P"][q]
    vid[m_ex] = n_at + ebase + E["F"][q]

    # spine
    k = src[m_sp] - sp0
    kind[m_sp] = SPINE
    label[m_sp] = X[k]
    height[m_sp] = k * triple.spine_step
    spine_pos[m_sp] = k
    path_min[m_sp] = X[k]
    edge_min[m_sp] = triple.spine_emin[k]
    reach[m_sp] = X[k]
    anc_min[m_sp] = spine_anc[k]
    vid[m_sp] = src[m_sp]

    # separators
    sep_lab = np.concatenate((triple.sep_labels_right, triple.sep_labels_left))
    si = src[m_sep] - sep0
    kind[m_sep] = SEPARATOR
    label[m_sep] = sep_lab[si]
    side[m_sep] = np.where(si < n_sep_r, RIGHT, LEFT)
    path_min[m_sep] = sep_lab[si]
    edge_min[m_sep] = sep_lab[si]
    reach[m_sep] = sep_lab[si]
    anc_min[m_sep] = sep_lab[si]
    vid[m_sep] = src[m_sep]

    # first / last rows per vertex; a block's omitted return point counts as a visit at its end
    n_ids = sep0 + len(sep_lab)
    vfirst = np.full(n_ids, n, np.int64)
    vlast = np.full(n_ids, -1, np.int64)
    rows = np.arange(n)
    np.minimum.at(vfirst, vid, rows)
    np.maximum.at(vlast, vid, rows)
    if ext.count:
        # each exterior block starts with its root; its omitted return visit closes the block
        ends = np.nonzero(m_ex & np.concatenate((~m_ex[1:], [True])))[0]
        starts = np.nonzero(m_ex & np.concatenate(([True], ~m_ex[:-1])))[0]
        vlast[vid[starts]] = np.maximum(vlast[vid[starts]], ends)
    first = vfirst[vid]
    last = vlast[vid]

    # parents: first row of the parent vertex
    q = src[m_at]
    own = at_owner[q]
    lp = A["A"][q]
    pv = np.where(lp <= 0, sp0 + triple.atom_k[own], atoms.offsets[own] + np.maximum(lp, 0))
    at_rows = np.nonzero(m_at)[0]
    is_root_pt = loc_first == 0
    pv = np.where(is_root_pt, -1, pv)
    parent[at_rows] = np.where(pv >= 0, vfirst[np.maximum(pv, 0)], -1)
    # spine vertex k > 0 has parent k - 1 (toward the root)
    sp_rows = np.nonzero(m_sp)[0]
    kk = src[sp_rows] - sp0
    parent[sp_rows] = np.where(kk > 0, vfirst[sp0 + np.maximum(kk - 1, 0)], -1)
    q = src[m_ex] - n_at
    lp = E["A"][q]
    own = ex_owner[q]
    ex_rows = np.nonzero(m_ex)[0]
    parent[ex_rows] = np.where(lp >= 0, vfirst[n_at + ext.offsets[own] + np.maximum(lp, 0)], -1)
    # atom rows at the atom root are visits of the spine vertex
    parent[at_rows[is_root_pt]] = parent[vfirst[vid[at_rows[is_root_pt]]]] if is_root_pt.any() else []

    vertex_start = (first == rows) & ((kind == ATOM) | (kind == EXTERIOR))
    vertex_start &= ~((kind == ATOM) & (vid >= sp0))

    cw = np.cumsum(weight)
    right_w = cw[n_right - 1] if n_right else 0.0
    expl_time = cw - weight - right_w

    flags = dict(triple.flags)
    tree = TreeSample(triple.dt, expl_time, height, label, weight, side, kind, spine_pos,
                      path_min, edge_min, reach, anc_min, parent, first, last, vertex_start,
                      triple.spine_values, triple.spine_emin, spine_left_rows, spine_right_rows,
                      triple.window, triple.perimeter, flags,
                      {"seed": str(triple.seed), "eps_cutoff": triple.eps_cutoff,
                       "t_max": triple.t_max, "spine_step": triple.spine_step})
    return tree


def interval_min(tree: TreeSample, u: int, v: int) -> tuple[float, bool]:
    """Minimum label over the exploration interval from row ``u`` to row ``v``.

    For ``u > v`` the interval wraps through infinity: ``[u, end] + [start, v]``.
    The flag is True when the minimum is attained at an end of the window.
    """
    n = len(tree)
    if u <= v:
        return tree.rmq_label.query(u, v), False
    pre, suf = tree._prefix_suffix()
    val = min(pre[v], suf[u])
    edge = val == tree.label[0] or val == tree.label[n - 1]
    return float(val), bool(edge)


def interval_min_many(tree: TreeSample, u, v) -> np.ndarray:
    u = np.asarray(u, np.int64)
    v = np.asarray(v, np.int64)
    out = np.empty(u.shape)
    fwd = u <= v
    if fwd.any():
        out[fwd] = tree.rmq_label.query(u[fwd], v[fwd])
    if (~fwd).any():
        pre, suf = tree._prefix_suffix()
        out[~fwd] = np.minimum(pre[v[~fwd]], suf[u[~fwd]])
    return out


@dataclass
class DiskSample:
    """Exterior of the hull at ``origin_level``, relabelled so that the boundary sits at 0."""

    tree: TreeSample
    perimeter: float
    origin_level: float
    spine: PathGrid
    flags: dict = field(default_factory=dict)


def cut_at_level(tree: TreeSample, r: float, eps: float | None = None,
                 perimeter: float | None = None) -> DiskSample:
    """Spatial-Markov cut: rows outside the hull of radius ``r``, labels shifted by ``-r``."""
    from .hulls import exit_estimate
    if not r > 0:
        raise ParameterError("level must be positive")
    tree.check_level(r, "cut level")
    k = tree.last_passage(r)
    if k >= len(tree.spine_values):
        raise WindowError("last passage beyond the simulated spine")
    keep = tree.anc_min > r
    idx = np.nonzero(keep)[0]
    remap = np.full(len(tree), -1, np.int64)
    remap[idx] = np.arange(idx.size)

    def sub(a):
        return a[idx]

    par = tree.parent[idx]
    sub_tree = TreeSample(
        tree.dt, sub(tree.expl_time), sub(tree.height), sub(tree.label) - r, sub(tree.weight),
        sub(tree.side), sub(tree.kind), sub(tree.spine_pos), sub(tree.path_min) - r,
        sub(tree.edge_min) - r, sub(tree.reach) - r, sub(tree.anc_min) - r,
        np.where(par >= 0, remap[np.maximum(par, 0)], -1), remap[tree.first[idx]],
        remap[tree.last[idx]], sub(tree.vertex_start),
        tree.spine_values[k:] - r, tree.spine_emin[k:] - r,
        remap[tree.spine_left[k:]], remap[tree.spine_right[k:]], None, tree.perimeter,
        dict(tree.flags), dict(tree.meta))
    z = exit_estimate(tree, r, eps) if perimeter is None else perimeter
    spine = PathGrid(tree.meta.get("spine_step", 1.0), tree.spine_values[k:] - r)
    return DiskSample(sub_tree, float(z), float(r), spine, {})


def z_profile(tree: TreeSample, levels: np.ndarray, eps: float | None = None) -> np.ndarray:
    from .hulls import exit_profile
    return exit_profile(tree, levels, eps)


def cut_at_stopping_time(tree: TreeSample, z: float, levels: np.ndarray | None = None,
                         eps: float | None = None) -> DiskSample:
    """Cut at ``T_z``, the first profile level where the exit-measure estimate reaches ``z``."""
    if not z > 0:
        raise ParameterError("z must be positive")
    if levels is None:
        top = tree.window.relevance_level if tree.window else tree.spine_values[-1] / 3
        step = 4.0 * np.sqrt(tree.dt) if eps is None else eps
        levels = np.arange(step, top - step, step)
    from .hulls import exit_estimate, first_passage
    level, j = first_passage(tree, z, levels, eps)
    disk = cut_at_level(tree, level, eps, perimeter=z)
    disk.flags["first_level"] = j == 0
    disk.flags["estimate_at_cut"] = exit_estimate(tree, level, eps)
    return disk


def scale_tree(tree: TreeSample, lam: float) -> TreeSample:
    lam = float(lam)
    l2 = lam * lam
    l4 = l2 * l2
    return replace(tree, dt=tree.dt * l4, expl_time=tree.expl_time * l4, height=tree.height * l2,
                   label=tree.label * lam, weight=tree.weight * l4, path_min=tree.path_min * lam,
                   edge_min=tree.edge_min * lam, reach=tree.reach * lam, anc_min=tree.anc_min * lam,
                   spine_values=tree.spine_values * lam, spine_emin=tree.spine_emin * lam,
                   window=tree.window.scaled(lam) if tree.window else None,
                   perimeter=tree.perimeter * l2, _rmq=None, _rmq_reach=None, _prefix=None, _edges=None)
