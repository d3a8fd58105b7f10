"""Closed-form laws for the Brownian plane, the Lamperti representation of the perimeter
process and an exact sampler of the perimeter/crossing-count pair."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import minimize_scalar
from scipy.special import gamma as gamma_fn

from .processes import PathGrid, as_generator


class DomainError(ValueError):
    """Formula arguments outside the documented domain."""


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise DomainError(msg)


def hit_measure(y: float, x: float) -> float:
    """Excursion measure from ``y`` of the paths whose minimum label goes below ``x < y``."""
    _need(x < y, "need x < y")
    return 1.5 / (y - x) ** 2


def excursion_laplace_exit(x: float, r: float, lam: float) -> float:
    """N_x(1 - exp(-lam Z_r)) for an excursion started at ``x > r``."""
    _need(x > r and lam >= 0, "need x > r and lam >= 0")
    if lam == 0:
        return 0.0
    if math.isinf(lam):
        return hit_measure(x, r)
    return (lam ** -0.5 + math.sqrt(2.0 / 3.0) * (x - r)) ** -2


def _layer_scale(r: float, lam: float) -> float:
    # (r^-2 + 2 lam / 3)^(-1/2), which is 0 at lam = infinity
    return 0.0 if math.isinf(lam) else (r ** -2 + 2.0 * lam / 3.0) ** -0.5


def laplace_exit_between(r: float, s: float, t: float, lam: float) -> float:
    """E exp(-lam Z_r^{s,t}), exit measure at ``r`` of the atoms between the last passages at ``s`` and ``t``."""
    _need(0 < r <= s <= t and lam >= 0, "need 0 < r <= s <= t and lam >= 0")
    if lam == 0:
        return 1.0
    c = _layer_scale(r, lam)
    return (t / s) ** 3 * ((s - r + c) / (t - r + c)) ** 3


def prob_exit_between_zero(r: float, s: float, t: float) -> float:
    _need(0 <= r <= s <= t and s > 0, "need 0 <= r <= s <= t, s > 0")
    if r == s == t:
        return 1.0
    return (t / s) ** 3 * ((s - r) / (t - r)) ** 3


def laplace_perimeter(r: float, lam: float) -> float:
    """E exp(-lam Z_r); ``Z_r`` is Gamma with shape 3/2 and mean r^2."""
    _need(r > 0 and lam >= 0, "need r > 0 and lam >= 0")
    return (1.0 + 2.0 * lam * r * r / 3.0) ** -1.5


def perimeter_density(x, r: float = 1.0):
    """Density of ``Z_r``: Gamma(3/2, scale 2 r^2 / 3)."""
    _need(r > 0, "need r > 0")
    x = np.asarray(x, float)
    scale = 2.0 * r * r / 3.0
    with np.errstate(invalid="ignore"):
        out = np.where(x > 0, np.sqrt(np.maximum(x, 0)) * np.exp(-x / scale)
                       / (gamma_fn(1.5) * scale ** 1.5), 0.0)
    return out if out.ndim else float(out)


def laplace_perimeter_given_later(r: float, s: float, lam: float, z_s: float) -> float:
    """E[exp(-lam Z_r) | Z_s = z_s] for ``r <= s``."""
    _need(0 < r <= s and lam >= 0 and z_s >= 0, "need 0 < r <= s, lam >= 0, z_s >= 0")
    root = math.sqrt(1.0 + 2.0 * lam * r * r / 3.0)
    c = _layer_scale(r, lam)
    return (s / (r + (s - r) * root)) ** 3 * math.exp(-1.5 * z_s * (1.0 / (s - r + c) ** 2 - 1.0 / s ** 2))


def mean_perimeter_given_later(r: float, s: float, z_s: float) -> float:
    _need(0 < r <= s and z_s >= 0, "need 0 < r <= s and z_s >= 0")
    return r ** 3 / s ** 3 * z_s + (s - r) / s * r * r


def laplace_hull_given_perimeter(r: float, lam: float, z: float) -> float:
    """E[exp(-lam |hull_r|) | Z_r = z]."""
    _need(r > 0 and lam > 0 and z >= 0, "need r > 0, lam > 0, z >= 0")
    a = (2.0 * lam) ** 0.25 * r
    coth = 1.0 / math.tanh(a)
    pre = r ** 3 * (2.0 * lam) ** 0.75 * math.cosh(a) / math.sinh(a) ** 3
    return pre * math.exp(-z * (math.sqrt(lam / 2.0) * (3.0 * coth * coth - 2.0) - 1.5 / r ** 2))


def laplace_hull(r: float, lam: float) -> float:
    """E exp(-lam |hull_r|)."""
    _need(r > 0 and lam >= 0, "need r > 0 and lam >= 0")
    c = math.cosh((2.0 * lam) ** 0.25 * r)
    return 3.0 ** 1.5 * c * (c * c + 2.0) ** -1.5


def mean_hull_given_perimeter(r: float, z: float) -> float:
    _need(r > 0 and z >= 0, "need r > 0 and z >= 0")
    return 2.0 / 15.0 * r ** 4 + 0.2 * r * r * z


def mean_hull_given_later(s1: float, s2: float, z_s2: float) -> float:
    """E[|hull_{s1}| | Z_{s2}] for ``s1 <= s2``."""
    _need(0 < s1 <= s2 and z_s2 >= 0, "need 0 < s1 <= s2 and z >= 0")
    return s1 ** 4 / 3.0 - s1 ** 5 / (5.0 * s2) + s1 ** 5 / (5.0 * s2 ** 3) * z_s2


def crossing_intensity(s: float) -> float:
    """N_s(0 < W_* <= 1): mean crossing count per unit of perimeter at level ``s``."""
    _need(s > 1, "need s > 1")
    return 1.5 * (2.0 * s - 1.0) / (s * s * (s - 1.0) ** 2)


def laplace_crossings(s: float, lam: float) -> float:
    """E exp(-lam N_1^s)."""
    _need(s > 1 and lam >= 0, "need s > 1 and lam >= 0")
    e = 1.0 if math.isinf(lam) else -math.expm1(-lam)
    return (1.0 + e * (2.0 * s - 1.0) / (s - 1.0) ** 2) ** -1.5


def prob_no_crossing(s: float) -> float:
    _need(s > 1, "need s > 1")
    return ((s - 1.0) / s) ** 3


def mean_crossings(s: float) -> float:
    _need(s > 1, "need s > 1")
    return 1.5 * (2.0 * s - 1.0) / (s - 1.0) ** 2


def tail_rate(s: float) -> float:
    """g(s) = log(s^2 / (2s - 1)) / (2 (s - 1)), whose supremum bounds the upper tail of L_1."""
    _need(s > 1, "need s > 1")
    return math.log(s * s / (2.0 * s - 1.0)) / (2.0 * (s - 1.0))


def crossing_tail_rate(s: float) -> float:
    """-lim log P(N_1^s > u) / u."""
    _need(s > 1, "need s > 1")
    return math.log(s * s / (2.0 * s - 1.0))


def tail_exponent_sup(step: float = 0.01, s_max: float = 10.0) -> tuple[float, float]:
    """Maximize ``tail_rate`` on (1, s_max]: coarse grid, then golden-section refinement."""
    grid = np.arange(1.0 + step, s_max + step / 2, step)
    vals = np.array([tail_rate(s) for s in grid])
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(lambda s: -tail_rate(s), bracket=(lo, grid[i], hi), method="golden",
                          tol=1e-12)
    return float(res.x), float(-res.fun)


def psi(lam: float) -> float:
    """Laplace exponent of the Levy process in the Lamperti representation of Z."""
    _need(lam > -1.5, "psi is defined for lam > -3/2")
    if lam == 0:
        return 0.0
    return math.sqrt(8.0 / 3.0) * float(gamma_fn(lam + 1.5) / gamma_fn(lam))


@dataclass(frozen=True)
class Formula:
    fn: Callable
    anchor: str


FORMULAS: dict[str, Formula] = {
    "hit_measure": Formula(hit_measure, "excursion measure of hitting a lower label"),
    "excursion_laplace_exit": Formula(excursion_laplace_exit, "exit-measure Laplace functional under N_x"),
    "laplace_exit_between": Formula(laplace_exit_between, "Laplace transform of Z_r^{s,t}"),
    "prob_exit_between_zero": Formula(prob_exit_between_zero, "probability that Z_r^{s,t} vanishes"),
    "laplace_perimeter": Formula(laplace_perimeter, "Gamma(3/2, mean r^2) law of Z_r"),
    "perimeter_density": Formula(perimeter_density, "density of Z_r"),
    "laplace_perimeter_given_later": Formula(laplace_perimeter_given_later, "Z_r given Z_s"),
    "mean_perimeter_given_later": Formula(mean_perimeter_given_later, "E[Z_r | Z_s]"),
    "laplace_hull_given_perimeter": Formula(laplace_hull_given_perimeter, "hull volume given Z_r"),
    "laplace_hull": Formula(laplace_hull, "Laplace transform of the hull volume"),
    "mean_hull_given_perimeter": Formula(mean_hull_given_perimeter, "E[|hull_r| | Z_r]"),
    "mean_hull_given_later": Formula(mean_hull_given_later, "E[|hull_s1| | Z_s2]"),
    "crossing_intensity": Formula(crossing_intensity, "N_s(0 < W_* <= 1)"),
    "laplace_crossings": Formula(laplace_crossings, "Laplace transform of N_1^s"),
    "prob_no_crossing": Formula(prob_no_crossing, "P(N_1^s = 0)"),
    "mean_crossings": Formula(mean_crossings, "E N_1^s"),
    "tail_rate": Formula(tail_rate, "upper-tail rate of L_1"),
    "crossing_tail_rate": Formula(crossing_tail_rate, "exponential tail of N_1^s"),
    "psi": Formula(psi, "Laplace exponent of the Lamperti Levy process"),
}


def eval_formula(name: str, *args, **kwargs) -> float:
    try:
        entry = FORMULAS[name]
    except KeyError:
        raise DomainError(f"unknown formula {name!r}") from None
    return entry.fn(*args, **kwargs)


def exact_layer_sample(s: float, seed=None, size: int | None = None):
    """Draw ``(Z_s, N_1^s)`` from their joint law: Gamma perimeter, then Poisson crossings."""
    if not s > 1:
        raise DomainError("need s > 1")
    rng = as_generator(seed)
    z = rng.gamma(1.5, s * s / 1.5, size)
    n = rng.poisson(z * crossing_intensity(s))
    return z, n


def piece_minimum_survival(x, lo: float, hi: float):
    """P(no atom grafted between the last passages at ``lo`` and ``hi`` reaches ``x``).

    ``hi = inf`` gives the whole spine beyond ``lo``.
    """
    _need(0 < lo <= hi, "need 0 < lo <= hi")
    x = np.asarray(x, float)
    inside = (x >= 0) & (x < lo)
    if math.isinf(hi):
        val = ((lo - x) / lo) ** 3
    else:
        val = (hi / lo) ** 3 * ((lo - x) / (hi - x)) ** 3
    out = np.where(inside, val, np.where(x < 0, 1.0, 0.0))
    return out if out.ndim else float(out)


def sample_piece_minima(levels, seed=None, size: int = 1) -> np.ndarray:
    """Exact joint draw of the lowest label reached by the atoms of each spine piece.

    Piece ``k`` is the stretch of spine between the last passages at
    ``levels[k]`` and ``levels[k+1]``; a final column covers the spine beyond
    ``levels[-1]``.  Pieces are independent, so each column is drawn by
    inverting its survival function.  Returns shape ``(size, len(levels))``.
    """
    lv = np.asarray(levels, float)
    _need(lv.ndim == 1 and lv.size >= 1 and lv[0] > 0 and np.all(np.diff(lv) > 0),
          "levels must be positive and increasing")
    rng = as_generator(seed)
    c3 = np.cbrt(rng.random((size, lv.size)))
    out = np.empty((size, lv.size))
    lo, hi = lv[:-1], lv[1:]
    c = c3[:, :-1] * lo / hi
    out[:, :-1] = (lo - c * hi) / (1.0 - c)
    out[:, -1] = lv[-1] * (1.0 - c3[:, -1])
    return out


@dataclass(frozen=True)
class LampertiPath:
    xi: PathGrid
    z: float
    time_change: np.ndarray


def lamperti_forward(xi: PathGrid, z: float, dr: float | None = None) -> PathGrid:
    """Z_r = z exp(xi at kappa(r / sqrt z)), kappa the inverse of the integral of exp(xi / 2)."""
    if not z > 0:
        raise DomainError("need z > 0")
    t = xi.times - xi.t0
    clock = cumulative_trapezoid(np.exp(0.5 * xi.values), t, initial=0.0)
    r_end = math.sqrt(z) * clock[-1]
    dr = xi.dt * math.sqrt(z) if dr is None else dr
    r = np.arange(0.0, r_end + 1e-12 * r_end, dr)
    kappa = np.interp(r / math.sqrt(z), clock, t)
    return PathGrid(dr, z * np.exp(np.interp(kappa, t, xi.values)))


def lamperti_inverse(z_path: PathGrid, z: float, dt: float | None = None) -> LampertiPath:
    """Recover xi from a perimeter path started at ``z``.

    The Lamperti clock of level ``r`` is the integral of ``Z^-1/2`` up to ``r``;
    xi at that clock is ``log(Z_r / z)``.
    """
    if not z > 0:
        raise DomainError("need z > 0")
    vals = np.asarray(z_path.values, float)
    if np.any(vals <= 0):
        raise DomainError("perimeter path must stay positive")
    clock = cumulative_trapezoid(vals ** -0.5, z_path.times - z_path.t0, initial=0.0)
    dt = z_path.dt / math.sqrt(z) if dt is None else dt
    t = np.arange(0.0, clock[-1] + 1e-12 * clock[-1], dt)
    xi = np.interp(t, clock, np.log(vals / z))
    return LampertiPath(PathGrid(dt, xi), float(z), clock)
