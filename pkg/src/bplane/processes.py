"""Primitive samplers: Bessel-9 spine, lattice excursions under the Ito measure, Gamma and Poisson draws.

Lattice convention used throughout the package: time step ``dt``, height step
``delta = sqrt(dt)``.  A contour is a +-1 walk in units of ``delta``; one
contour step carries ``dt`` of volume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import pbdv

from . import _kernels


class ParameterError(ValueError):
    """Raised when a sampler receives parameters outside its domain."""


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class PathGrid:
    """Real samples at times ``t0 + k*dt``."""

    dt: float
    values: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if len(self.values) == 0:
            raise ParameterError("a path needs at least one value")

    @property
    def horizon(self) -> float:
        return (len(self.values) - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))


@dataclass(frozen=True)
class ExcursionSample:
    """One lattice excursion drawn from the Ito measure restricted to ``{max > eps}``.

    ``steps`` holds integer heights (units of ``delta``); ``contour`` holds the
    same path in real units.  ``mass_weight`` is the Ito mass of the restricted
    set, so ``mass_weight * mean(f)`` estimates the measure integral of ``f``.
    """

    contour: PathGrid
    maxHeight: float
    mass_weight: float
    steps: np.ndarray = field(repr=False)
    delta: float = 0.0
    eps_cutoff: float = 0.0

    @property
    def lifetime(self) -> float:
        return (len(self.steps) - 1) * self.contour.dt


def lattice_delta(dt: float) -> float:
    return float(np.sqrt(dt))


def cutoff_units(eps_cutoff: float, dt: float) -> int:
    """Smallest lattice maximum (units of ``delta``) reaching ``eps_cutoff``."""
    if not eps_cutoff > dt:
        raise ParameterError(
            f"eps_cutoff={eps_cutoff} must exceed dt={dt}: the grid cannot resolve the cutoff")
    return max(1, int(np.ceil(eps_cutoff / lattice_delta(dt) - 1e-9)))


def sample_bessel9_spine(horizon: float, dt: float, seed=None) -> PathGrid:
    """Norm of a 9-dimensional Brownian motion sampled exactly at grid points."""
    if horizon < 0 or not dt > 0:
        raise ParameterError("horizon must be >= 0 and dt > 0")
    rng = as_generator(seed)
    n = int(round(horizon / dt))
    if n == 0:
        return PathGrid(dt, np.zeros(1))
    steps = rng.standard_normal((n, 9)) * np.sqrt(dt)
    pos = np.cumsum(steps, axis=0)
    values = np.empty(n + 1)
    values[0] = 0.0
    values[1:] = np.sqrt(np.einsum("ij,ij->i", pos, pos))
    return PathGrid(dt, values)


def spine_edge_minima(values: np.ndarray, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Bridge minimum on each spine edge (entry k covers edge k-1 -> k; entry 0 is the root).

    Uses the one-dimensional bridge law on the radial path, clamped at 0.
    """
    u = 1.0 - rng.random(len(values) - 1)
    a, b = values[:-1], values[1:]
    emin = np.empty(len(values))
    emin[0] = values[0]
    emin[1:] = np.maximum(0.5 * (a + b - np.sqrt((b - a) ** 2 - 2.0 * delta * np.log(u))), 0.0)
    return emin


def spine_until(level: float, delta: float, rng: np.random.Generator,
                max_steps: int = 50_000_000) -> tuple[np.ndarray, np.ndarray, bool]:
    """Bessel-9 spine on a height grid of step ``delta`` until it exceeds ``level``.

    Returns the values, the edge minima and whether the level was reached
    within ``max_steps``.
    """
    # the mean hitting time of level by a 9-dimensional Bessel process is level**2 / 9
    chunk = max(1024, int(0.2 * level * level / delta))
    pos = np.zeros(9)
    parts = [np.zeros(1)]
    total = 0
    reached = False
    while total < max_steps:
        inc = rng.standard_normal((chunk, 9)) * np.sqrt(delta)
        path = np.cumsum(inc, axis=0) + pos
        norms = np.sqrt(np.einsum("ij,ij->i", path, path))
        hit = np.nonzero(norms >= level)[0]
        if hit.size:
            parts.append(norms[: hit[0] + 1])
            reached = True
            break
        parts.append(norms)
        pos = path[-1]
        total += chunk
    values = np.concatenate(parts)
    return values, spine_edge_minima(values, delta, rng), reached


def sample_max_units(m_cut: int, rng: np.random.Generator, size=None):
    """Lattice maxima with ``P(M >= m) = m_cut / m`` for ``m >= m_cut``."""
    u = 1.0 - rng.random(size)
    return np.floor(m_cut / u).astype(np.int64)


def sample_ito_excursion(eps_cutoff: float, dt: float, seed=None) -> ExcursionSample:
    """Excursion from the Ito measure conditioned on its maximum reaching ``eps_cutoff``.

    The cutoff is rounded up to the lattice, ``m_c = ceil(eps_cutoff / delta)``.
    The maximum ``M`` (lattice units) has ``P(M >= m) = m_c/m``; given ``M`` the
    contour is an h-transformed walk up to ``M`` followed by a walk conditioned
    to reach 0 before ``M + 1`` (Williams decomposition at the maximum).
    """
    if not dt > 0 or not eps_cutoff > 0:
        raise ParameterError("eps_cutoff and dt must be positive")
    delta = lattice_delta(dt)
    m_c = cutoff_units(eps_cutoff, dt)
    rng = as_generator(seed)
    m = int(sample_max_units(m_c, rng))
    steps = _kernels.walk_with_max(rng, m)
    contour = PathGrid(dt, steps * delta)
    return ExcursionSample(contour, m * delta, 1.0 / (2.0 * m_c * delta), steps, delta, eps_cutoff)


# Amplitude of the decaying mode at which the self-similar profile below blows up
# exactly at the origin (found once by bisection on the blow-up location).
_PROFILE_SHOOT = 9.495941513967113
_PROFILE_START = 8.0


def _profile_rhs(eta, y):
    return [y[1], -eta * y[1] - 2.0 * y[0] + 4.0 * y[0] ** 2]


@lru_cache(maxsize=1)
def hitting_profile() -> tuple[np.ndarray, np.ndarray]:
    """Self-similar profile ``V`` with ``N_y(min label <= 0 or max height > h) = V(y/sqrt(h))/h``.

    ``V`` solves ``V'' + eta V' + 2V = 4V^2`` with ``V ~ 3/(2 eta^2)`` at 0 and
    ``V -> 1/2`` at infinity.  Returns a grid ``eta`` (decreasing) and ``V`` on it.
    """
    d, dp = pbdv(-3.0, _PROFILE_START)
    w = np.exp(-_PROFILE_START ** 2 / 4) * d
    wp = np.exp(-_PROFILE_START ** 2 / 4) * (dp - 0.5 * _PROFILE_START * d)
    eta = np.linspace(_PROFILE_START, 0.2, 2000)
    sol = solve_ivp(_profile_rhs, [_PROFILE_START, 0.2],
                    [0.5 + _PROFILE_SHOOT * w, _PROFILE_SHOOT * wp],
                    t_eval=eta, rtol=1e-11, atol=1e-14)
    return sol.t, sol.y[0]


@lru_cache(maxsize=1)
def decoration_table(eta_max: float = 6.0) -> tuple[np.ndarray, np.ndarray]:
    """Inversion table ``(log(V - 1/2), eta)`` with increasing first column."""
    eta, v = hitting_profile()
    keep = eta <= eta_max
    x = np.log(v[keep] - 0.5)
    order = np.argsort(x)
    return np.ascontiguousarray(x[order]), np.ascontiguousarray(eta[keep][order])


NO_DECORATION = (np.zeros(1), np.zeros(1))


def sample_gamma(shape: float, mean: float, seed=None, size=None):
    if not shape > 0 or not mean > 0:
        raise ParameterError("Gamma shape and mean must be positive")
    return as_generator(seed).gamma(shape, mean / shape, size)


def sample_poisson(intensity, seed=None, size=None):
    lam = np.asarray(intensity, dtype=float)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ParameterError("Poisson intensity must be finite and >= 0")
    out = as_generator(seed).poisson(lam, size)
    return int(out) if np.ndim(out) == 0 else out
