"""
Summand laws: pointwise density, score, Fisher information, Stein kernel and
relative entropy.

A DistributionSpec is declarative (family, parameters, scale). The numeric
work happens in a private law object built from those fields at construction;
every law is recentred to mean zero there, so ``shift`` only survives as an
echo of what the caller asked for.
"""
from __future__ import annotations

import enum
import functools
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize, special

from tvclt.errors import (
    DisconnectedSupport,
    NonSmoothDensity,
    QuadratureDivergent,
    ScoreUndefined,
)

logger = logging.getLogger(__name__)

P_FLOOR = 1e-300
TAIL_FLOOR_REL = 1e-16
QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-10
QUAD_LIMIT = 200
J_MAX = 1e6
CUSTOM_MASS_TOL = 1e-9
HERMITE_NODES = 64

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _norm_logpdf(z):
    return -0.5 * np.square(z) - LOG_SQRT_2PI


def _as_output(x, values):
    """Return a float for scalar input, an array otherwise."""
    if np.ndim(x) == 0:
        return float(values)
    return values


# ---------------------------------------------------------------------------
# Laws (raw coordinates, mean zero)
# ---------------------------------------------------------------------------

class _Law:
    variance: float = 1.0
    smooth = True
    atomic = False
    connected = True
    support = (-math.inf, math.inf)

    def pdf(self, x):
        with np.errstate(under="ignore"):
            return np.exp(self.logpdf(x))

    def logpdf(self, x):
        raise NotImplementedError

    def score(self, x):
        """Analytic score, or None when only numeric differentiation is available."""
        return None

    def kernel(self, x):
        """Closed-form Stein kernel, or None."""
        return None

    def kinks(self):
        """Points where p' jumps, as (location, p'(c-) - p'(c+))."""
        return ()

    def breakpoints(self):
        return tuple(c for c, _ in self.kinks())

    @functools.cached_property
    def _cdf_scalar(self):
        lo, hi = self.support

        def cdf(x):
            if x <= lo:
                return 0.0
            if x >= hi:
                return 1.0
            val, _ = integrate.quad(lambda y: float(self.pdf(y)), lo, x, limit=QUAD_LIMIT)
            return min(max(val, 0.0), 1.0)

        return np.vectorize(cdf, otypes=[float])

    def cdf(self, x):
        return self._cdf_scalar(x)

    def sf(self, x):
        lo, hi = self.support
        x = np.asarray(x, dtype=float)

        def sf(v):
            if v >= hi:
                return 0.0
            if v <= lo:
                return 1.0
            val, _ = integrate.quad(lambda y: float(self.pdf(y)), v, hi, limit=QUAD_LIMIT)
            return min(max(val, 0.0), 1.0)

        return np.vectorize(sf, otypes=[float])(x)

    def tail_radius(self, eps):
        """Radius r with P(|X| > r) <= eps."""
        lo, hi = self.support
        if math.isfinite(lo) and math.isfinite(hi):
            return max(-lo, hi)
        r = math.sqrt(self.variance)
        while float(self.cdf(-r)) + float(self.sf(r)) > eps:
            r *= 1.5
            if r > 1e8:
                raise QuadratureDivergent("tail mass does not vanish; variance may be infinite")
        return r

    def convolve_gaussian(self, delta):
        return _HermiteBlurLaw(self, delta)

    @functools.cached_property
    def interval(self):
        """Integration window: from the first to the last point where p >= TAIL_FLOOR_REL * max p.

        Valleys between modes stay inside the window however deep they are.
        """
        lo, hi = self.support
        r = self.tail_radius(1e-12)
        left, right = max(lo, -r), min(hi, r)
        marks = [c for c in self.breakpoints() if left < c < right]
        xs = np.union1d(np.linspace(left, right, 4001), marks)
        with np.errstate(divide="ignore", under="ignore"):
            logs = np.asarray(self.logpdf(xs), dtype=float)
        log_floor = math.log(TAIL_FLOOR_REL) + float(np.max(logs))
        above = np.flatnonzero(logs >= log_floor)
        step = max(r, 1.0)

        def level(x):
            with np.errstate(divide="ignore", under="ignore"):
                value = float(self.logpdf(x)) - log_floor
            return value if math.isfinite(value) else -1e6

        def edge(i, direction, bound):
            j = i + direction
            if 0 <= j < xs.size:
                a, b = sorted((float(xs[i]), float(xs[j])))
                return optimize.brentq(level, a, b, xtol=1e-10)
            # scan ended above the floor: walk outwards
            inner, outer, width = float(xs[i]), float(xs[i]) + direction * step, step
            while True:
                if direction * (outer - bound) >= 0:
                    return bound
                if level(outer) < 0:
                    break
                width *= 2.0
                inner, outer = outer, outer + direction * width
            a, b = sorted((inner, outer))
            return optimize.brentq(level, a, b, xtol=1e-10)

        window = (edge(int(above[0]), -1, lo), edge(int(above[-1]), 1, hi))
        logger.debug("integration window %s for %s", window, type(self).__name__)
        return window


class _NormalLaw(_Law):
    def __init__(self, sigma):
        self.sigma = float(sigma)
        self.variance = self.sigma ** 2

    def logpdf(self, x):
        return _norm_logpdf(np.asarray(x, dtype=float) / self.sigma) - math.log(self.sigma)

    def score(self, x):
        return -np.asarray(x, dtype=float) / self.variance

    def kernel(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.variance)

    def cdf(self, x):
        return special.ndtr(np.asarray(x, dtype=float) / self.sigma)

    def sf(self, x):
        return special.ndtr(-np.asarray(x, dtype=float) / self.sigma)

    def tail_radius(self, eps):
        return -self.sigma * float(special.ndtri(eps / 2.0))

    def convolve_gaussian(self, delta):
        return _NormalLaw(math.hypot(self.sigma, delta))


class _LaplaceLaw(_Law):
    """Laplace(b), optionally convolved with N(0, blur^2) in closed form."""

    def __init__(self, b, blur=0.0):
        self.b = float(b)
        self.blur = float(blur)
        self.variance = 2.0 * self.b ** 2 + self.blur ** 2

    def _log_terms(self, x):
        b, d = self.b, self.blur
        c = d * d / b
        log_t1 = -x / b + special.log_ndtr((x - c) / d)
        log_t2 = x / b + special.log_ndtr(-(x + c) / d)
        return log_t1, log_t2

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.blur == 0.0:
            return -np.abs(x) / self.b - math.log(2.0 * self.b)
        log_t1, log_t2 = self._log_terms(x)
        return (self.blur ** 2 / (2.0 * self.b ** 2) - math.log(2.0 * self.b)
                + np.logaddexp(log_t1, log_t2))

    def score(self, x):
        x = np.asarray(x, dtype=float)
        if self.blur == 0.0:
            return -np.sign(x) / self.b
        log_t1, log_t2 = self._log_terms(x)
        return -np.tanh(0.5 * (log_t1 - log_t2)) / self.b

    def kernel(self, x):
        if self.blur == 0.0:
            return self.b * (np.abs(np.asarray(x, dtype=float)) + self.b)
        return None

    def kinks(self):
        if self.blur == 0.0:
            return ((0.0, 1.0 / self.b ** 2),)
        return ()

    def breakpoints(self):
        if self.blur == 0.0:
            return (0.0,)
        return (-4.0 * self.blur, 0.0, 4.0 * self.blur)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.blur == 0.0:
            return np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0.0) / self.b),
                            1.0 - 0.5 * np.exp(-np.maximum(x, 0.0) / self.b))
        log_t1, log_t2 = self._log_terms(x)
        e = self.blur ** 2 / (2.0 * self.b ** 2)
        with np.errstate(under="ignore"):
            value = (special.ndtr(x / self.blur)
                     - 0.5 * (np.exp(e + log_t1) - np.exp(e + log_t2)))
        return np.clip(value, 0.0, 1.0)

    def sf(self, x):
        return self.cdf(-np.asarray(x, dtype=float))

    def tail_radius(self, eps):
        radius = self.b * math.log(2.0 / eps)
        if self.blur > 0.0:
            radius += -self.blur * float(special.ndtri(eps / 4.0))
        return radius

    def convolve_gaussian(self, delta):
        return _LaplaceLaw(self.b, math.hypot(self.blur, delta))


class _LogisticLaw(_Law):
    def __init__(self, s):
        self.s = float(s)
        self.variance = (math.pi * self.s) ** 2 / 3.0

    def logpdf(self, x):
        t = np.abs(np.asarray(x, dtype=float)) / self.s
        return -t - 2.0 * np.log1p(np.exp(-t)) - math.log(self.s)

    def score(self, x):
        return -np.tanh(np.asarray(x, dtype=float) / (2.0 * self.s)) / self.s

    def kernel(self, x):
        t = np.abs(np.asarray(x, dtype=float)) / self.s
        u = np.exp(-t)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(u > 0.0, np.log1p(u) / u, 1.0)
        return self.s ** 2 * (t * (1.0 + u) + (1.0 + u) ** 2 * ratio)

    def cdf(self, x):
        return special.expit(np.asarray(x, dtype=float) / self.s)

    def sf(self, x):
        return special.expit(-np.asarray(x, dtype=float) / self.s)

    def tail_radius(self, eps):
        return self.s * math.log(2.0 / eps)


class _MixtureLaw(_Law):
    """Finite Gaussian mixture; means are recentred so the mixture has mean 0."""

    def __init__(self, weights, means, sigmas):
        w = np.asarray(weights, dtype=float)
        mu = np.asarray(means, dtype=float)
        sd = np.asarray(sigmas, dtype=float)
        if not (w.shape == mu.shape == sd.shape) or w.ndim != 1 or w.size == 0:
            raise ValueError("weights, means and sigmas must be equal-length sequences")
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("mixture weights must be nonnegative with positive sum")
        if np.any(sd <= 0):
            raise ValueError("mixture component sigmas must be positive")
        w = w / w.sum()
        mu = mu - float(np.dot(w, mu))
        self.weights, self.means, self.sigmas = w, mu, sd
        self.variance = float(np.dot(w, sd ** 2 + mu ** 2))

    def _component_logs(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return (np.log(self.weights) + _norm_logpdf((x - self.means) / self.sigmas)
                - np.log(self.sigmas))

    def logpdf(self, x):
        return special.logsumexp(self._component_logs(x), axis=-1)

    def score(self, x):
        logs = self._component_logs(x)
        resp = np.exp(logs - special.logsumexp(logs, axis=-1, keepdims=True))
        xs = np.asarray(x, dtype=float)[..., None]
        return np.sum(resp * (-(xs - self.means) / self.sigmas ** 2), axis=-1)

    def kernel(self, x):
        x = np.asarray(x, dtype=float)
        xs = x[..., None]
        z = (xs - self.means) / self.sigmas
        phi = np.exp(_norm_logpdf(z)) / self.sigmas
        upper = self.weights * (self.sigmas ** 2 * phi + self.means * special.ndtr(-z))
        lower = self.weights * (self.sigmas ** 2 * phi - self.means * special.ndtr(z))
        numerator = np.where(x >= 0, upper.sum(axis=-1), lower.sum(axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            return numerator / self.pdf(x)

    def cdf(self, x):
        z = (np.asarray(x, dtype=float)[..., None] - self.means) / self.sigmas
        return np.sum(self.weights * special.ndtr(z), axis=-1)

    def sf(self, x):
        z = (np.asarray(x, dtype=float)[..., None] - self.means) / self.sigmas
        return np.sum(self.weights * special.ndtr(-z), axis=-1)

    def breakpoints(self):
        # each component peak and its shoulders
        marks = np.concatenate([self.means, self.means - 4.0 * self.sigmas,
                                self.means + 4.0 * self.sigmas])
        return tuple(float(c) for c in np.unique(marks))

    def tail_radius(self, eps):
        return float(np.max(np.abs(self.means) - self.sigmas * special.ndtri(eps / 2.0)))

    def convolve_gaussian(self, delta):
        return _MixtureLaw(self.weights, self.means, np.hypot(self.sigmas, delta))


class _AtomicLaw(_Law):
    """Finitely many atoms: no density at all."""

    smooth = False
    atomic = True
    connected = False

    def __init__(self, atoms, weights):
        a = np.asarray(atoms, dtype=float)
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        self.atoms = a - float(np.dot(w, a))
        self.weights = w
        self.variance = float(np.dot(w, self.atoms ** 2))
        self.support = (float(self.atoms.min()), float(self.atoms.max()))

    def logpdf(self, x):
        raise NonSmoothDensity("atomic law has no density")

    def pdf(self, x):
        raise NonSmoothDensity("atomic law has no density")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(self.weights * (self.atoms <= x), axis=-1)

    def sf(self, x):
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(self.weights * (self.atoms > x), axis=-1)

    def breakpoints(self):
        return tuple(float(c) for c in self.atoms)

    def tail_radius(self, eps):
        return float(np.max(np.abs(self.atoms)))

    def convolve_gaussian(self, delta):
        return _MixtureLaw(self.weights, self.atoms, np.full_like(self.atoms, delta))


class _UniformLaw(_Law):
    """Uniform[-a, a], optionally convolved with N(0, delta^2)."""

    def __init__(self, half_width, delta=0.0):
        self.a = float(half_width)
        self.delta = float(delta)
        self.variance = self.a ** 2 / 3.0 + self.delta ** 2
        if self.delta == 0.0:
            self.smooth = False
            self.support = (-self.a, self.a)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.delta == 0.0:
            with np.errstate(divide="ignore"):
                return np.where(np.abs(x) <= self.a, -math.log(2.0 * self.a), -np.inf)
        return self._log_mass(x) - math.log(2.0 * self.a)

    def _log_mass(self, x):
        t = np.abs(x)
        u_minus = (t - self.a) / self.delta
        u_plus = (t + self.a) / self.delta
        l_minus = special.log_ndtr(-u_minus)
        l_plus = special.log_ndtr(-u_plus)
        return l_minus + np.log1p(-np.exp(l_plus - l_minus))

    def score(self, x):
        if self.delta == 0.0:
            return None
        x = np.asarray(x, dtype=float)
        t = np.abs(x)
        u_minus = (t - self.a) / self.delta
        with np.errstate(under="ignore"):
            rho_t = (np.exp(_norm_logpdf(u_minus) - self._log_mass(x))
                     * np.expm1(-2.0 * self.a * t / self.delta ** 2) / self.delta)
        return np.sign(x) * rho_t

    def kernel(self, x):
        if self.delta == 0.0:
            x = np.asarray(x, dtype=float)
            return np.where(np.abs(x) <= self.a, 0.5 * (self.a ** 2 - x ** 2), 0.0)
        return None

    def breakpoints(self):
        if self.delta == 0.0:
            return (-self.a, self.a)
        # edge layers of width delta around -a and a
        offsets = self.delta * np.array([-8.0, -4.0, 0.0, 4.0, 8.0])
        return tuple(float(c) for c in np.concatenate([offsets - self.a, offsets + self.a]))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.delta == 0.0:
            return np.clip((x + self.a) / (2.0 * self.a), 0.0, 1.0)

        def g(v):
            return v * special.ndtr(v) + np.exp(_norm_logpdf(v))

        d = self.delta
        value = d / (2.0 * self.a) * (g((x + self.a) / d) - g((x - self.a) / d))
        return np.clip(value, 0.0, 1.0)

    def sf(self, x):
        return self.cdf(-np.asarray(x, dtype=float))

    def tail_radius(self, eps):
        if self.delta == 0.0:
            return self.a
        return self.a - self.delta * float(special.ndtri(eps / 2.0))

    def convolve_gaussian(self, delta):
        return _UniformLaw(self.a, math.hypot(self.delta, delta))


class _CustomLaw(_Law):
    def __init__(self, pdf, intervals, mean, variance, score=None, absolutely_continuous=True):
        self._pdf = pdf
        self._score = score
        self._mean = float(mean)
        self.intervals = tuple((float(lo) - self._mean, float(hi) - self._mean)
                               for lo, hi in intervals)
        self.support = (min(lo for lo, _ in self.intervals), max(hi for _, hi in self.intervals))
        self.connected = len(self.intervals) == 1
        self.smooth = bool(absolutely_continuous)
        self.variance = float(variance)
        if not self.variance > 0 or not math.isfinite(self.variance):
            raise ValueError("custom law needs a finite positive variance")
        mass = sum(integrate.quad(lambda y: float(self.pdf(y)), lo, hi, limit=QUAD_LIMIT)[0]
                   for lo, hi in self.intervals)
        if abs(mass - 1.0) > CUSTOM_MASS_TOL:
            raise ValueError(f"custom density integrates to {mass!r}, not 1")

    def _inside(self, x):
        inside = np.zeros(np.shape(x), dtype=bool)
        for lo, hi in self.intervals:
            inside |= (x >= lo) & (x <= hi)
        return inside

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = self._inside(x)
        safe = np.where(inside, x, 0.0 if self.support[0] <= 0.0 <= self.support[1]
                        else self.intervals[0][0])
        values = np.asarray(self._pdf(safe + self._mean), dtype=float)
        return np.where(inside, np.maximum(values, 0.0), 0.0)

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def score(self, x):
        if self._score is None:
            return None
        return np.asarray(self._score(np.asarray(x, dtype=float) + self._mean), dtype=float)

    def breakpoints(self):
        return tuple(v for lo, hi in self.intervals for v in (lo, hi) if math.isfinite(v))

    def cdf(self, x):
        def cdf(v):
            total = 0.0
            for lo, hi in self.intervals:
                if v > lo:
                    total += integrate.quad(lambda y: float(self.pdf(y)), lo, min(v, hi),
                                            limit=QUAD_LIMIT)[0]
            return min(max(total, 0.0), 1.0)

        return np.vectorize(cdf, otypes=[float])(x)

    def sf(self, x):
        return 1.0 - self.cdf(x)


class _HermiteBlurLaw(_Law):
    """base + delta * N(0, 1), integrated against Gauss-Hermite nodes."""

    def __init__(self, base, delta):
        self.base = base
        self.delta = float(delta)
        self.variance = base.variance + self.delta ** 2
        nodes, weights = np.polynomial.hermite_e.hermegauss(HERMITE_NODES)
        self._nodes = nodes
        self._weights = weights / math.sqrt(2.0 * math.pi)

    def _shifted(self, x):
        return np.asarray(x, dtype=float)[..., None] - self.delta * self._nodes

    def pdf(self, x):
        return np.sum(self._weights * self.base.pdf(self._shifted(x)), axis=-1)

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def _base_derivative(self, y):
        rho = self.base.score(y)
        if rho is None:
            h = 1e-5 * max(1.0, math.sqrt(self.base.variance))
            return (self.base.pdf(y + h) - self.base.pdf(y - h)) / (2.0 * h)
        return rho * self.base.pdf(y)

    def score(self, x):
        shifted = self._shifted(x)
        derivative = np.sum(self._weights * self._base_derivative(shifted), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            return derivative / self.pdf(x)

    def cdf(self, x):
        return np.sum(self._weights * self.base.cdf(self._shifted(x)), axis=-1)

    def sf(self, x):
        return np.sum(self._weights * self.base.sf(self._shifted(x)), axis=-1)

    def breakpoints(self):
        return self.base.breakpoints()

    def tail_radius(self, eps):
        return self.base.tail_radius(eps / 2.0) - self.delta * float(special.ndtri(eps / 4.0))

    def convolve_gaussian(self, delta):
        return _HermiteBlurLaw(self.base, math.hypot(self.delta, delta))


# ---------------------------------------------------------------------------
# Public types
# ---------------------------------------------------------------------------

class Family(enum.Enum):
    NORMAL = "normal"
    LAPLACE = "laplace"
    LOGISTIC = "logistic"
    GAUSSIAN_MIXTURE = "gaussian_mixture"
    SMOOTHED_RADEMACHER = "smoothed_rademacher"
    SMOOTHED_UNIFORM = "smoothed_uniform"
    CUSTOM = "custom"


# Parameters each family accepts, with defaults.
FAMILY_PARAMS = {
    Family.NORMAL: {"sigma": 1.0},
    Family.LAPLACE: {"b": 1.0},
    Family.LOGISTIC: {"s": 1.0},
    Family.GAUSSIAN_MIXTURE: {"weights": None, "means": None, "sigmas": None},
    Family.SMOOTHED_RADEMACHER: {"delta": 0.0},
    Family.SMOOTHED_UNIFORM: {"delta": 0.0, "half_width": 1.0},
    Family.CUSTOM: {"pdf": None, "support": None, "mean": 0.0, "variance": None,
                    "score": None, "absolutely_continuous": True},
}


def _freeze(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, (int, float, np.floating, np.integer)) and not isinstance(value, bool):
        return float(value)
    return value


def _build_law(family, p):
    if family is Family.NORMAL:
        return _NormalLaw(p["sigma"])
    if family is Family.LAPLACE:
        return _LaplaceLaw(p["b"])
    if family is Family.LOGISTIC:
        return _LogisticLaw(p["s"])
    if family is Family.GAUSSIAN_MIXTURE:
        return _MixtureLaw(p["weights"], p["means"], p["sigmas"])
    if family is Family.SMOOTHED_RADEMACHER:
        atomic = _AtomicLaw((-1.0, 1.0), (0.5, 0.5))
        return atomic if p["delta"] == 0.0 else atomic.convolve_gaussian(p["delta"])
    if family is Family.SMOOTHED_UNIFORM:
        return _UniformLaw(p["half_width"], p["delta"])
    if family is Family.CUSTOM:
        if p["pdf"] is None or p["support"] is None or p["variance"] is None:
            raise ValueError("custom family needs pdf, support and variance")
        support = p["support"]
        intervals = (support,) if np.ndim(support[0]) == 0 else support
        return _CustomLaw(p["pdf"], intervals, p["mean"], p["variance"],
                          score=p["score"], absolutely_continuous=p["absolutely_continuous"])
    raise ValueError(f"unknown family {family!r}")


@dataclass(frozen=True)
class DistributionSpec:
    """Declarative description of one summand's law.

    The law is recentred to mean zero, then multiplied by ``scale``. ``blur``
    is the standard deviation of an extra independent Gaussian added in the
    law's own units (see convolve_gaussian).
    """

    family: Family
    params: tuple = ()
    scale: float = 1.0
    shift: float = 0.0
    blur: float = 0.0
    law: _Law = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"scale must be positive and finite, got {self.scale!r}")
        if not self.blur >= 0:
            raise ValueError(f"blur must be nonnegative, got {self.blur!r}")
        accepted = FAMILY_PARAMS[self.family]
        given = dict(self.params)
        unknown = set(given) - set(accepted)
        if unknown:
            raise ValueError(f"unknown parameters for {self.family.value}: {sorted(unknown)}")
        merged = {**accepted, **given}
        law = _build_law(self.family, merged)
        if self.blur > 0.0:
            law = law.convolve_gaussian(self.blur)
        if not (law.variance > 0 and math.isfinite(law.variance)):
            raise ValueError("variance must be finite and strictly positive")
        object.__setattr__(self, "law", law)

    # --- constructors ---

    @classmethod
    def of(cls, family, scale=1.0, shift=0.0, blur=0.0, **params):
        family = Family(family) if not isinstance(family, Family) else family
        frozen = tuple(sorted((k, _freeze(v)) for k, v in params.items()))
        return cls(family, frozen, float(scale), float(shift), float(blur))

    @classmethod
    def normal(cls, sigma=1.0):
        return cls.of(Family.NORMAL, sigma=sigma)

    @classmethod
    def laplace(cls, b=1.0):
        return cls.of(Family.LAPLACE, b=b)

    @classmethod
    def logistic(cls, s=1.0):
        return cls.of(Family.LOGISTIC, s=s)

    @classmethod
    def gaussian_mixture(cls, weights, means, sigmas):
        return cls.of(Family.GAUSSIAN_MIXTURE, weights=weights, means=means, sigmas=sigmas)

    @classmethod
    def smoothed_rademacher(cls, delta):
        return cls.of(Family.SMOOTHED_RADEMACHER, delta=delta)

    @classmethod
    def smoothed_uniform(cls, delta, half_width=1.0):
        return cls.of(Family.SMOOTHED_UNIFORM, delta=delta, half_width=half_width)

    @classmethod
    def custom(cls, pdf, support, mean, variance, score=None, absolutely_continuous=True):
        """User-supplied law. ``pdf`` (and ``score``) must accept numpy arrays."""
        return cls.of(Family.CUSTOM, pdf=pdf, support=support, mean=mean, variance=variance,
                      score=score, absolutely_continuous=absolutely_continuous)

    @classmethod
    def from_mapping(cls, mapping):
        """Build from a config mapping: family, params, scale, shift, blur."""
        family = Family(str(mapping["family"]).lower())
        if family is Family.CUSTOM:
            raise ValueError("custom laws need a density evaluator and cannot come from a config file")
        params = dict(mapping.get("params") or {})
        return cls.of(family, scale=mapping.get("scale", 1.0), shift=mapping.get("shift", 0.0),
                      blur=mapping.get("blur", 0.0), **params)

    # --- derived quantities ---

    @property
    def variance(self):
        return self.scale ** 2 * self.law.variance

    @property
    def std(self):
        return math.sqrt(self.variance)

    @property
    def smooth(self):
        return self.law.smooth

    @property
    def atomic(self):
        return self.law.atomic

    @property
    def support(self):
        lo, hi = self.law.support
        return (self.scale * lo, self.scale * hi)

    @property
    def interval(self):
        lo, hi = self.law.interval
        return (self.scale * lo, self.scale * hi)

    def kinks(self):
        return tuple((self.scale * c, jump / self.scale ** 2) for c, jump in self.law.kinks())

    def breakpoints(self):
        return tuple(self.scale * c for c in self.law.breakpoints())

    def cdf(self, x):
        return _as_output(x, self.law.cdf(np.asarray(x, dtype=float) / self.scale))

    def sf(self, x):
        return _as_output(x, self.law.sf(np.asarray(x, dtype=float) / self.scale))

    def outside_mass(self, lo, hi):
        """P(X < lo) + P(X > hi)."""
        return float(self.cdf(lo)) + float(self.sf(hi))

    def tail_radius(self, eps):
        return self.scale * self.law.tail_radius(eps)

    # --- transformations ---

    def with_scale(self, factor):
        return replace(self, scale=self.scale * float(factor))

    def with_std(self, sigma):
        return self.with_scale(float(sigma) / self.std)

    def convolve_gaussian(self, delta):
        """Law of X + delta*N with N standard normal and independent."""
        if delta == 0:
            return self
        return replace(self, blur=math.hypot(self.blur, float(delta) / self.scale))

    def label(self):
        shown = []
        for key, value in self.params:
            if callable(value) or value is None:
                continue
            if isinstance(value, tuple):
                value = "/".join(f"{v:g}" for v in value if not isinstance(v, tuple))
            elif isinstance(value, float):
                value = f"{value:g}"
            shown.append(f"{key}={value}")
        text = f"{self.family.value}({', '.join(shown)})"
        if self.blur:
            text += f"+N(0,{self.blur:g}^2)"
        if self.scale != 1.0:
            text = f"{self.scale:g}*{text}"
        return text

    def to_mapping(self):
        params = {k: (list(v) if isinstance(v, tuple) else v)
                  for k, v in self.params if not callable(v)}
        return {"family": self.family.value, "params": params, "scale": self.scale,
                "shift": self.shift, "blur": self.blur}


class ScoreProvenance(enum.Enum):
    ANALYTIC = "analytic"
    NUMERIC_DIFFERENTIATION = "numeric_differentiation"


@dataclass(frozen=True)
class ScoreFn:
    evaluator: Callable[[Any], Any]
    provenance: ScoreProvenance
    domain: tuple = (-math.inf, math.inf)

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        lo, hi = self.domain
        if np.any(x_arr < lo) or np.any(x_arr > hi):
            raise ScoreUndefined(f"score requested outside [{lo:g}, {hi:g}]")
        return _as_output(x, self.evaluator(x_arr))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def density(spec: DistributionSpec, x):
    """p(x); exactly 0 outside the declared support."""
    s = spec.scale
    return _as_output(x, spec.law.pdf(np.asarray(x, dtype=float) / s) / s)


def log_density(spec: DistributionSpec, x):
    s = spec.scale
    with np.errstate(divide="ignore"):
        return _as_output(x, spec.law.logpdf(np.asarray(x, dtype=float) / s) - math.log(s))


def numeric_diff_step(spec: DistributionSpec):
    return max(1e-5, 1e-4 * spec.std)


def _require_smooth(spec):
    if not spec.smooth:
        raise NonSmoothDensity(f"{spec.label()} has no absolutely continuous density")


def numeric_score(spec: DistributionSpec, x):
    """Central difference of log p, whatever the family provides."""
    x_arr = np.asarray(x, dtype=float)
    h = numeric_diff_step(spec)
    values = (log_density(spec, x_arr + h) - log_density(spec, x_arr - h)) / (2.0 * h)
    return _as_output(x, values)


def _score_values(spec, x):
    """Score without the floor check; callers stay inside the integration window."""
    x = np.asarray(x, dtype=float)
    s = spec.scale
    analytic = spec.law.score(x / s)
    if analytic is not None:
        return analytic / s
    return numeric_score(spec, x)


def score_fn(spec: DistributionSpec) -> ScoreFn:
    _require_smooth(spec)
    provenance = (ScoreProvenance.ANALYTIC if spec.law.score(np.zeros(1)) is not None
                  else ScoreProvenance.NUMERIC_DIFFERENTIATION)

    def evaluate(x):
        p = density(spec, x)
        if np.any(np.asarray(p) <= P_FLOOR):
            raise ScoreUndefined(f"density at or below {P_FLOOR:g}")
        return _score_values(spec, x)

    return ScoreFn(evaluate, provenance, spec.support)


def score(spec: DistributionSpec, x):
    """rho(x) = p'(x)/p(x)."""
    return score_fn(spec)(x)


def expectation(spec: DistributionSpec, g: Callable, points: Sequence[float] = ()):
    """E[g(X)] by adaptive Gauss-Kronrod quadrature over the integration window.

    ``g`` receives scalars. Atomic laws are summed over their atoms.
    """
    law = spec.law
    if law.atomic:
        return float(sum(w * g(spec.scale * a) for a, w in zip(law.atoms, law.weights)))
    a, b = spec.interval
    cuts = {a, b}
    cuts.update(c for c in spec.breakpoints() if a < c < b)
    cuts.update(float(c) for c in points if a < c < b)
    cuts = sorted(cuts)
    s = spec.scale

    def integrand(x):
        return g(x) * float(law.pdf(x / s)) / s

    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            value, err = integrate.quad(integrand, lo, hi, epsabs=QUAD_EPSABS,
                                        epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
            if not math.isfinite(value):
                raise QuadratureDivergent(f"integral over [{lo:g}, {hi:g}] is not finite")
            if err > 1e-6 * max(1.0, abs(value)):
                logger.debug("quadrature error estimate %.3g on [%g, %g]", err, lo, hi)
            total += value
    return total


@functools.lru_cache(maxsize=512)
def fisher_j(spec: DistributionSpec) -> float:
    """J(X) = Var(X) * E[rho(X)^2], at least 1 (Cramer-Rao)."""
    _require_smooth(spec)
    info = expectation(spec, lambda x: float(_score_values(spec, x)) ** 2)
    j = spec.variance * info
    if not math.isfinite(j) or j > J_MAX:
        raise QuadratureDivergent(f"Fisher information of {spec.label()} exceeds {J_MAX:g}")
    if j < 1.0 - 1e-6:
        # below Cramer-Rao: quadrature lost part of the score
        raise QuadratureDivergent(
            f"Fisher information of {spec.label()} came out as {j:.12g}, below 1")
    if j < 1.0:
        if j < 1.0 - 1e-9:
            logger.warning("fisher_j(%s) = %.12g below 1; clamped", spec.label(), j)
        j = 1.0
    return j


def _kernel_numeric(spec, x):
    a, b = spec.interval
    s = spec.scale
    p = density(spec, x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        integrand = lambda y: y * float(spec.law.pdf(y / s)) / s  # noqa: E731
        if x >= 0:
            moment, _ = integrate.quad(integrand, x, max(b, x), epsabs=1e-13,
                                       epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
        else:
            moment, _ = integrate.quad(integrand, min(a, x), x, epsabs=1e-13,
                                       epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
            moment = -moment
    return moment / p


def stein_kernel(spec: DistributionSpec, x):
    """tau(x) = int_x^inf y p(y) dy / p(x) for a centred law on a connected support."""
    if spec.atomic or not spec.law.connected:
        raise DisconnectedSupport(f"{spec.label()} is not supported on a single interval")
    x_arr = np.asarray(x, dtype=float)
    p = np.asarray(density(spec, x_arr))
    if np.any(p <= P_FLOOR):
        raise ScoreUndefined("Stein kernel requested where the density vanishes")
    s = spec.scale
    closed = spec.law.kernel(x_arr / s)
    if closed is not None:
        tau = s ** 2 * np.asarray(closed, dtype=float)
    else:
        tau = np.vectorize(lambda v: _kernel_numeric(spec, v), otypes=[float])(x_arr)
    return _as_output(x, np.maximum(tau, 0.0))


def relative_entropy(spec: DistributionSpec) -> float:
    """D(X) against the normal law with matching mean and variance."""
    if spec.atomic:
        raise NonSmoothDensity(f"{spec.label()} has no density")
    var = spec.variance

    def integrand(x):
        logp = float(log_density(spec, x))
        log_phi = -0.5 * x * x / var - 0.5 * math.log(2.0 * math.pi * var)
        return logp - log_phi

    d = expectation(spec, integrand)
    return max(d, 0.0)


def third_abs_moment(spec: DistributionSpec) -> float:
    return expectation(spec, lambda x: abs(x) ** 3, points=(0.0,))
