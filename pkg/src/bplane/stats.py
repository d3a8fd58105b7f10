"""Estimators with seeded bootstrap intervals: Laplace curves, KS tests, log-log slopes and
partial correlations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats as sps

from .processes import ParameterError

RESAMPLES = 1000


def _as_samples(samples) -> np.ndarray:
    x = np.asarray(samples, float).ravel()
    if x.size == 0:
        raise ParameterError("need at least one sample")
    return x


def _resample_rows(n: int, resamples: int, seed, chunk: int = 64):
    """Yield index arrays of bootstrap resamples, in a fixed order for a given seed."""
    rng = np.random.default_rng(np.random.SeedSequence([0 if seed is None else int(seed), 7919]))
    done = 0
    while done < resamples:
        k = min(chunk, resamples - done)
        yield rng.integers(0, n, size=(k, n))
        done += k


def bootstrap(samples, fn: Callable[[np.ndarray], np.ndarray], resamples: int = RESAMPLES, seed=0,
              level: float = 0.95):
    """Percentile bootstrap of ``fn`` (reducing along the last axis).

    Returns ``(value, se, (lo, hi))`` where ``se`` is the bootstrap standard deviation.
    """
    x = _as_samples(samples)
    value = np.asarray(fn(x), float)
    reps = np.concatenate([np.asarray(fn(x[idx]), float).reshape(len(idx), -1)
                           for idx in _resample_rows(x.size, resamples, seed)])
    reps = reps.reshape((resamples,) + value.shape)
    a = (1.0 - level) / 2.0
    lo, hi = np.quantile(reps, [a, 1.0 - a], axis=0)
    return value, reps.std(axis=0, ddof=1), (lo, hi)


@dataclass(frozen=True)
class LaplaceCurve:
    lambdas: np.ndarray
    values: np.ndarray
    se: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    degenerate: bool


def empirical_laplace(samples, lambdas, resamples: int = RESAMPLES, seed=0) -> LaplaceCurve:
    """Mean of ``exp(-lambda X)`` on a grid, with bootstrap bands."""
    x = _as_samples(samples)
    lam = np.atleast_1d(np.asarray(lambdas, float))
    degenerate = bool(x.size < 2 or np.ptp(x) == 0 or not np.all(np.isfinite(x)))

    def fn(v):
        return np.exp(-v[..., None] * lam).mean(axis=-2)

    if x.size < 2 or (np.ptp(x) == 0 and np.isfinite(x[0])):
        val = np.exp(-lam * x[0])
        z = np.zeros_like(val)
        return LaplaceCurve(lam, val, z, val, val, True)
    val, se, (lo, hi) = bootstrap(x, fn, resamples, seed)
    return LaplaceCurve(lam, val, se, lo, hi, degenerate)


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    n: int
    ci: tuple[float, float]
    degenerate: bool

    def accepts(self, level: float = 0.01) -> bool:
        return self.pvalue >= level


def ks_test(samples, cdf: Callable, resamples: int = RESAMPLES, seed=0) -> KSResult:
    """One-sample Kolmogorov-Smirnov test; the interval is a bootstrap band for the statistic."""
    x = _as_samples(samples)
    res = sps.kstest(x, cdf)
    degenerate = bool(np.unique(x).size < 2)

    def fn(v):
        v = np.sort(v, axis=-1)
        n = v.shape[-1]
        f = cdf(v)
        up = np.arange(1, n + 1) / n - f
        dn = f - np.arange(n) / n
        return np.maximum(up.max(axis=-1), dn.max(axis=-1))

    _, _, (lo, hi) = bootstrap(x, fn, resamples, seed)
    return KSResult(float(res.statistic), float(res.pvalue), int(x.size), (float(lo), float(hi)),
                    degenerate)


def ks_two_sample(a, b) -> KSResult:
    a, b = _as_samples(a), _as_samples(b)
    res = sps.ks_2samp(a, b)
    return KSResult(float(res.statistic), float(res.pvalue), int(min(a.size, b.size)),
                    (float(res.statistic), float(res.statistic)),
                    bool(np.unique(a).size < 2 or np.unique(b).size < 2))


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    se: float
    ci: tuple[float, float]
    degenerate: bool


def _fit(lx: np.ndarray, ly: np.ndarray):
    return np.polyfit(lx, ly, 1)


def loglog_slope(xs, ys, resamples: int = RESAMPLES, seed=0, ys_boot=None) -> SlopeFit:
    """Least-squares slope of ``log y`` against ``log x``.

    ``ys_boot`` may hold bootstrap replicates of ``ys`` (one row each), which is
    how Monte Carlo curves carry their sampling error into the slope; otherwise
    the (x, y) pairs themselves are resampled.
    """
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    if xs.shape != ys.shape or xs.size < 2:
        raise ParameterError("need at least two paired points")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ParameterError("log-log fits need positive data")
    lx, ly = np.log(xs), np.log(ys)
    slope, icpt = _fit(lx, ly)
    degenerate = bool(np.ptp(lx) == 0)
    if ys_boot is not None:
        yb = np.asarray(ys_boot, float)
        good = np.all(yb > 0, axis=1)
        slopes = np.array([_fit(lx, np.log(row))[0] for row in yb[good]])
        degenerate |= bool(good.mean() < 0.99)
    else:
        slopes = []
        for idx in _resample_rows(xs.size, resamples, seed):
            for row in idx:
                if np.ptp(lx[row]) > 0:
                    slopes.append(_fit(lx[row], ly[row])[0])
        slopes = np.array(slopes)
    if slopes.size < 2:
        return SlopeFit(float(slope), float(icpt), 0.0, (float(slope), float(slope)), True)
    lo, hi = np.quantile(slopes, [0.025, 0.975])
    return SlopeFit(float(slope), float(icpt), float(slopes.std(ddof=1)), (float(lo), float(hi)),
                    degenerate)


@dataclass(frozen=True)
class PartialCorrelation:
    rho: float
    pvalue: float
    n: int
    bins: int


def partial_correlation(x, y, z, bins: int = 10) -> PartialCorrelation:
    """Rank correlation of ``x`` and ``y`` after removing, within quantile bins of ``z``,
    a per-bin linear trend in ``z``; Fisher z-test for zero."""
    x, y, z = (np.asarray(v, float) for v in (x, y, z))
    n = x.size
    if not (y.size == n and z.size == n) or n < 4 * bins:
        raise ParameterError("need equal-length samples, at least four per bin")
    edges = np.quantile(z, np.linspace(0, 1, bins + 1)[1:-1])
    b = np.digitize(z, edges)
    cols = []
    zr = sps.rankdata(z)
    for k in np.unique(b):
        m = (b == k).astype(float)
        cols += [m, m * (zr - zr[b == k].mean())]
    design = np.column_stack(cols)

    def resid(v):
        r = sps.rankdata(v)
        coef, *_ = np.linalg.lstsq(design, r, rcond=None)
        return r - design @ coef

    rx, ry = resid(x), resid(y)
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    rho = float(rx @ ry / denom) if denom > 0 else 0.0
    dof = n - design.shape[1] - 1
    zstat = np.arctanh(np.clip(rho, -0.999999, 0.999999)) * np.sqrt(max(dof - 2, 1))
    return PartialCorrelation(rho, float(2.0 * sps.norm.sf(abs(zstat))), n, int(np.unique(b).size))
