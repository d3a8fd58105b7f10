"""Compiled inner loops: lattice excursions, tree-indexed Gaussian labels, bridge minima.

A contour is a lattice path of +-1 steps (height unit ``delta``, time unit
``delta**2``).  Every up-step creates a tree vertex whose label is the parent
label plus an N(0, delta) increment; the minimum of the Brownian bridge along
that edge is drawn exactly, so "has the ancestral path gone below r" is decided
for the continuous label path and not only at vertices.

Branches shorter than one lattice step are absent from the lattice tree, yet
they carry label fluctuations of order ``delta**0.5``.  Their effect on minima
is restored by a per-vertex "decoration depth": grafted sub-lattice excursions
form a Poisson process of rate 4 (two sides, rate 2 each) per unit length of
the Ito measure restricted to ``{sup < delta}``, whose hitting measure is
``(V(y / sqrt(delta)) - 1/2) / delta`` with ``V`` tabulated in ``processes``.

Per-point columns produced by the kernels (all local to one excursion):
    hgt  lattice height
    lab  label of the current vertex
    inc  label increment of the current vertex (0 on revisits and at the root)
    emn  minimum of the label bridge on the edge into the current vertex
    pmn  minimum of the label path from the excursion root to the current vertex
    vfi  index of the first visit of the current vertex
    par  index of the first visit of the parent vertex (-1 at the root)
    vla  index of the last visit of the current vertex
    rch  lowest label reached at the vertex: min(edge minimum, decoration low)
"""

from __future__ import annotations

import numpy as np
from numba import njit

OK = 0
ABORTED = 1
REJECTED = 2
CAPPED = 3


@njit(cache=True)
def bridge_min(a, b, var, u):
    """Exact minimum of a Brownian bridge from ``a`` to ``b`` with variance ``var``; ``u`` in (0, 1]."""
    d = b - a
    return 0.5 * (a + b - np.sqrt(d * d - 2.0 * var * np.log(u)))


@njit(cache=True)
def decoration_low(rng, b, sc, tab_x, tab_y):
    """Lowest label of the sub-lattice decorations grafted at a vertex of label ``b``.

    Inverts ``P(no hit below b - sc*eta) = exp(-4 (V(eta) - 1/2))`` on the table
    ``tab_x = log(V - 1/2)`` (increasing), ``tab_y = eta``.
    """
    t = 0.25 * (-np.log(1.0 - rng.random()))
    lt = np.log(t)
    if lt >= tab_x[-1]:
        eta = np.sqrt(1.5 / (0.5 + t))
    elif lt <= tab_x[0]:
        eta = tab_y[0]
    else:
        eta = np.interp(lt, tab_x, tab_y)
    return b - sc * eta


@njit(cache=True)
def _grow_buffers(H, L, I, E, P, F, A, V, R, need):
    cap = H.shape[0]
    if need <= cap:
        return H, L, I, E, P, F, A, V, R
    new = max(need, 2 * cap)
    H2 = np.empty(new, np.int32)
    L2 = np.empty(new, np.float64)
    I2 = np.empty(new, np.float64)
    E2 = np.empty(new, np.float64)
    P2 = np.empty(new, np.float64)
    F2 = np.empty(new, np.int64)
    A2 = np.empty(new, np.int64)
    V2 = np.empty(new, np.int64)
    R2 = np.empty(new, np.float64)
    R2[:cap] = R
    H2[:cap] = H
    L2[:cap] = L
    I2[:cap] = I
    E2[:cap] = E
    P2[:cap] = P
    F2[:cap] = F
    A2[:cap] = A
    V2[:cap] = V
    return H2, L2, I2, E2, P2, F2, A2, V2, R2


@njit(cache=True)
def walk_with_max(rng, m):
    """Lattice excursion (heights) under the excursion measure conditioned on maximum ``m``.

    First leg: walk h-transformed by h(k) = k until it first hits ``m``.
    Second leg: walk from ``m`` h-transformed by h(k) = m + 1 - k until it hits 0.
    """
    cap = min(4 * m * m + 16, 1 << 20)
    out = np.empty(cap, np.int32)
    out[0] = 0
    h = 0
    i = 0
    reached = False
    while True:
        if not reached and h == m:
            reached = True
        if not reached:
            up = True if h == 0 else rng.random() * (2 * h) < (h + 1)
        else:
            up = False if h == m else rng.random() * (2 * (m + 1 - h)) < (m - h)
        h = h + 1 if up else h - 1
        i += 1
        if i >= out.shape[0]:
            grown = np.empty(2 * out.shape[0], np.int32)
            grown[: out.shape[0]] = out
            out = grown
        out[i] = h
        if h == 0:
            break
    return out[: i + 1]


UNSTORED_FACTOR = 50


@njit(cache=True)
def _finish_unstored(rng, m, h, reached, up, labs, depth, delta, abort_level, use_dec, reach_span,
                     dec_ceiling, tab_x, tab_y, wmin, limit):
    """Run a walk to its end without storing it, starting with the pending step ``up``.

    Makes the same draws as the storing loop. Returns (status, lowest label); the
    status is CAPPED when more than ``limit`` further steps would be needed.
    """
    sd = np.sqrt(delta)
    steps = 0
    while True:
        steps += 1
        if steps > limit:
            return CAPPED, wmin
        if up:
            a = labs[depth]
            b = a + sd * rng.standard_normal()
            em = bridge_min(a, b, delta, 1.0 - rng.random())
            depth += 1
            if depth >= labs.shape[0]:
                grown = np.empty(2 * labs.shape[0], np.float64)
                grown[:depth] = labs[:depth]
                labs = grown
            labs[depth] = b
            h += 1
            low = em
            if use_dec and b - reach_span <= dec_ceiling:
                low = min(em, decoration_low(rng, b, sd, tab_x, tab_y))
            if low < wmin:
                wmin = low
            if low <= abort_level:
                return ABORTED, wmin
        else:
            depth -= 1
            h -= 1
            if h == 0:
                return OK, wmin
        if not reached and h == m:
            reached = True
        if not reached:
            up = True if h == 0 else rng.random() * (2 * h) < (h + 1)
        else:
            up = False if h == m else rng.random() * (2 * (m + 1 - h)) < (m - h)


@njit(cache=True)
def grow_batch(rng, ms, xs, delta, abort_level, accept_level, cap, tab_x, tab_y, dec_ceiling):
    """Grow labelled excursions for a batch of proposals (maximum ``ms[j]``, start label ``xs[j]``).

    A proposal is aborted as soon as a reached label is <= ``abort_level``, and
    rejected at the end if its overall minimum exceeds ``accept_level``.
    Decoration depths are drawn only where they can matter, i.e. when the
    vertex label is within reach of ``dec_ceiling``; an empty table disables them.
    Accepted excursions are stored back to back, root return point included.
    Returns (status, offsets, minima, H, L, I, E, P, F, A, V, R).
    """
    n_prop = ms.shape[0]
    status = np.zeros(n_prop, np.int8)
    offsets = np.zeros(n_prop + 1, np.int64)
    minima = np.empty(n_prop, np.float64)
    size0 = 1024
    H = np.empty(size0, np.int32)
    L = np.empty(size0, np.float64)
    I = np.empty(size0, np.float64)
    E = np.empty(size0, np.float64)
    P = np.empty(size0, np.float64)
    F = np.empty(size0, np.int64)
    A = np.empty(size0, np.int64)
    V = np.empty(size0, np.int64)
    R = np.empty(size0, np.float64)
    stack = np.empty(64, np.int64)
    sd = np.sqrt(delta)
    use_dec = tab_x.shape[0] > 1
    reach_span = tab_y[0] * sd if use_dec else 0.0
    pos = 0
    for j in range(n_prop):
        m = ms[j]
        x = xs[j]
        base = pos
        H, L, I, E, P, F, A, V, R = _grow_buffers(H, L, I, E, P, F, A, V, R, base + 2)
        H[base] = 0
        L[base] = x
        I[base] = 0.0
        E[base] = x
        P[base] = x
        F[base] = 0
        A[base] = -1
        V[base] = 0
        R[base] = x
        depth = 0
        stack[0] = 0
        h = 0
        i = 0
        reached = False
        st = OK
        wmin = x
        if x <= abort_level:
            st = ABORTED
        while st == OK:
            if not reached and h == m:
                reached = True
            if not reached:
                up = True if h == 0 else rng.random() * (2 * h) < (h + 1)
            else:
                up = False if h == m else rng.random() * (2 * (m + 1 - h)) < (m - h)
            i += 1
            if i >= cap:
                # too long to store: follow the same path to its end to learn whether it is
                # aborted or rejected anyway, which is what happens to most long proposals
                labs = np.empty(max(2 * (depth + 1), 64), np.float64)
                for d in range(depth + 1):
                    labs[d] = L[base + stack[d]]
                st, wmin = _finish_unstored(rng, m, h, reached, up, labs, depth, delta, abort_level,
                                            use_dec, reach_span, dec_ceiling, tab_x, tab_y, wmin,
                                            UNSTORED_FACTOR * cap)
                if st == OK:
                    st = REJECTED if wmin > accept_level else CAPPED
                break
            H, L, I, E, P, F, A, V, R = _grow_buffers(H, L, I, E, P, F, A, V, R, base + i + 1)
            k = base + i
            if up:
                pv = stack[depth]
                pk = base + pv
                a = L[pk]
                inc = sd * rng.standard_normal()
                b = a + inc
                em = bridge_min(a, b, delta, 1.0 - rng.random())
                depth += 1
                if depth >= stack.shape[0]:
                    grown = np.empty(2 * stack.shape[0], np.int64)
                    grown[:depth] = stack[:depth]
                    stack = grown
                stack[depth] = i
                h += 1
                H[k] = h
                L[k] = b
                I[k] = inc
                E[k] = em
                P[k] = min(P[pk], em)
                F[k] = i
                A[k] = pv
                V[k] = i
                low = em
                if use_dec and b - reach_span <= dec_ceiling:
                    low = min(em, decoration_low(rng, b, sd, tab_x, tab_y))
                R[k] = low
                if low < wmin:
                    wmin = low
                if low <= abort_level:
                    st = ABORTED
            else:
                v = stack[depth]
                V[base + v] = i - 1
                depth -= 1
                h -= 1
                pv = stack[depth]
                pk = base + pv
                H[k] = h
                L[k] = L[pk]
                I[k] = 0.0
                E[k] = E[pk]
                P[k] = P[pk]
                F[k] = pv
                A[k] = A[pk]
                R[k] = R[pk]
                if h == 0:
                    V[base] = i
                    break
        minima[j] = wmin
        if st == OK and wmin > accept_level:
            st = REJECTED
        status[j] = st
        if st == OK:
            n_pts = i + 1
            for q in range(base, base + n_pts):
                V[q] = V[base + F[q]]
            pos = base + n_pts
        offsets[j + 1] = pos
    return (status, offsets, minima, H[:pos], L[:pos], I[:pos], E[:pos], P[:pos],
            F[:pos], A[:pos], V[:pos], R[:pos])


@njit(cache=True)
def label_contour(rng, H, x, delta, tab_x, tab_y):
    """Tree-indexed labels for a given lattice contour ``H`` (steps must be +-1)."""
    n = H.shape[0]
    L = np.empty(n, np.float64)
    I = np.zeros(n, np.float64)
    E = np.empty(n, np.float64)
    P = np.empty(n, np.float64)
    F = np.empty(n, np.int64)
    A = np.empty(n, np.int64)
    V = np.empty(n, np.int64)
    R = np.empty(n, np.float64)
    stack = np.empty(n + 1, np.int64)
    sd = np.sqrt(delta)
    use_dec = tab_x.shape[0] > 1
    L[0] = x
    R[0] = x
    E[0] = x
    P[0] = x
    F[0] = 0
    A[0] = -1
    V[0] = 0
    depth = 0
    stack[0] = 0
    for i in range(1, n):
        step = H[i] - H[i - 1]
        if step == 1:
            pv = stack[depth]
            a = L[pv]
            inc = sd * rng.standard_normal()
            b = a + inc
            em = bridge_min(a, b, delta, 1.0 - rng.random())
            depth += 1
            stack[depth] = i
            L[i] = b
            I[i] = inc
            E[i] = em
            P[i] = min(P[pv], em)
            F[i] = i
            A[i] = pv
            V[i] = i
            R[i] = min(em, decoration_low(rng, b, sd, tab_x, tab_y)) if use_dec else em
        elif step == -1:
            if depth == 0:
                raise ValueError("contour goes below its starting height")
            v = stack[depth]
            V[v] = i - 1
            depth -= 1
            pv = stack[depth]
            L[i] = L[pv]
            E[i] = E[pv]
            P[i] = P[pv]
            F[i] = pv
            A[i] = A[pv]
            R[i] = R[pv]
        else:
            raise ValueError("contour steps must be +1 or -1")
    V[stack[0]] = n - 1
    while depth > 0:
        V[stack[depth]] = n - 1
        depth -= 1
    for q in range(n):
        V[q] = V[F[q]]
    return L, I, E, P, F, A, V, R


@njit(cache=True)
def labels_from_increments(start, inc, F, A):
    """Rebuild labels from stored branch increments (same summation order as growth)."""
    n = inc.shape[0]
    out = np.empty(n, np.float64)
    for i in range(n):
        if A[i] < 0:
            out[i] = start
        elif F[i] == i:
            out[i] = out[A[i]] + inc[i]
        else:
            out[i] = out[F[i]]
    return out


@njit(cache=True)
def path_minima(start, E, F, A):
    """Minimum of the label path from the root, recomputed from edge minima."""
    n = E.shape[0]
    out = np.empty(n, np.float64)
    for i in range(n):
        if A[i] < 0:
            out[i] = start
        elif F[i] == i:
            out[i] = min(out[A[i]], E[i])
        else:
            out[i] = out[F[i]]
    return out
