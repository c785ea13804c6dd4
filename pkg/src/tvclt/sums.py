"""
Grid densities for normalized sums S_n, leave-one-out sums S_{k,n} and
Gaussian-smoothed laws.

Every grid is centred: node i sits at (i - m/2) * step, so 0 is always a node
and a full linear convolution of two grids lines up with the grid itself
after dropping m/2 entries on each side.
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import integrate, signal

from tvclt.dist import (
    P_FLOOR,
    DistributionSpec,
    ScoreFn,
    ScoreProvenance,
    density,
)
from tvclt.errors import DegenerateSum, GridTooSmall, RingingError, ScoreUndefined

logger = logging.getLogger(__name__)

CLIP_TOL = 1e-9
TAIL_EPS = 1e-12
SCORE_FLOOR_REL = 1e-12
SCORE_MASS = 1.0 - 1e-6


@dataclass(frozen=True)
class GridConfig:
    m: int = 2 ** 14
    extent_sigmas: float = 12.0
    # widen the half-width to cover each summand's 1e-12 tail radius
    widen: bool = True

    def __post_init__(self):
        m = int(self.m)
        if m < 16 or m & (m - 1):
            raise ValueError(f"grid size m must be a power of two >= 16, got {self.m!r}")
        if not self.extent_sigmas > 0:
            raise ValueError("extent_sigmas must be positive")


@dataclass(frozen=True, eq=False)
class GridDensity:
    lo: float
    hi: float
    values: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def m(self):
        return self.values.size

    @property
    def step(self):
        return (self.hi - self.lo) / (self.m - 1)

    @functools.cached_property
    def x(self):
        grid = self.lo + self.step * np.arange(self.m)
        grid.setflags(write=False)
        return grid

    def integrate(self, values):
        return float(integrate.trapezoid(values, dx=self.step))

    def expect(self, fn):
        """Trapezoid estimate of E[fn(X)] for a vectorized ``fn``."""
        return self.integrate(fn(self.x) * self.values)

    @functools.cached_property
    def mass(self):
        return self.integrate(self.values)

    @functools.cached_property
    def mean(self):
        return self.expect(lambda x: x)

    @functools.cached_property
    def variance(self):
        return self.expect(lambda x: (x - self.mean) ** 2)

    def pdf(self, x):
        """Linear interpolation between nodes, 0 off the grid."""
        return np.interp(x, self.x, self.values, left=0.0, right=0.0)

    def cdf(self):
        """CDF at every node by cumulative trapezoid."""
        return integrate.cumulative_trapezoid(self.values, dx=self.step, initial=0.0)

    def same_grid(self, other):
        return (self.m == other.m and math.isclose(self.lo, other.lo, rel_tol=0, abs_tol=1e-12)
                and math.isclose(self.hi, other.hi, rel_tol=0, abs_tol=1e-12))

    def __repr__(self):
        return (f"GridDensity(m={self.m}, lo={self.lo:.6g}, hi={self.hi:.6g}, "
                f"tail_mass={self.tail_mass:.3g})")


@dataclass(frozen=True)
class SumSequence:
    """Independent summands X_1, X_2, ... in order."""

    specs: tuple
    name: str = "sequence"

    def __post_init__(self):
        specs = tuple(self.specs)
        if not specs:
            raise ValueError("a sum needs at least one summand")
        object.__setattr__(self, "specs", specs)

    @property
    def n(self):
        return len(self.specs)

    @property
    def variances(self):
        return np.array([s.variance for s in self.specs])

    @property
    def b_n(self):
        return math.sqrt(math.fsum(s.variance for s in self.specs))

    def b_kn(self, k):
        self._check_index(k)
        return math.sqrt(math.fsum(s.variance for i, s in enumerate(self.specs, 1) if i != k))

    def _check_index(self, k):
        if not 1 <= k <= self.n:
            raise IndexError(f"summand index {k} outside 1..{self.n}")

    def head(self, n):
        if not 1 <= n <= self.n:
            raise IndexError(f"sequence {self.name!r} has {self.n} summands, {n} requested")
        return SumSequence(self.specs[:n], self.name)

    def without(self, k):
        self._check_index(k)
        return SumSequence(self.specs[:k - 1] + self.specs[k:], self.name)

    def rescaled(self, factor):
        return SumSequence(tuple(s.with_scale(factor) for s in self.specs), self.name)

    def smoothed(self, delta):
        if delta == 0:
            return self
        return SumSequence(tuple(s.convolve_gaussian(delta) for s in self.specs), self.name)


def _nodes(half_width, m):
    h = 2.0 * half_width / m
    return h * (np.arange(m) - m // 2), h


def _kink_corrected(spec, values, x, h):
    """Euler-Maclaurin node correction at derivative jumps that sit on grid nodes."""
    m = x.size
    for c, jump in spec.kinks():
        j = int(round(c / h)) + m // 2
        if 0 <= j < m and abs(x[j] - c) <= 1e-9 * h:
            values = values.copy()
            values[j] -= h * jump / 12.0
        elif x[0] < c < x[-1]:
            logger.warning("kink of %s at %g is not on a grid node", spec.label(), c)
    return values


@functools.lru_cache(maxsize=64)
def _fold(specs, norm, cfg, extent_sd):
    """Density of (sum of specs) / norm on a centred grid."""
    scaled = [s.with_scale(1.0 / norm) for s in specs]
    half_width = cfg.extent_sigmas * extent_sd
    if cfg.widen:
        radius = max(s.tail_radius(TAIL_EPS) for s in scaled)
        if radius > half_width:
            logger.debug("grid widened from %.4g to %.4g", half_width, radius)
            half_width = radius
    m = cfg.m
    x, h = _nodes(half_width, m)
    lo, hi = float(x[0]), float(x[-1])
    convolving = len(scaled) > 1

    samples = {}
    clipped = 0.0
    vectors = []
    for spec in scaled:
        if spec not in samples:
            outside = spec.outside_mass(lo, hi)
            if outside > CLIP_TOL:
                raise GridTooSmall(
                    f"grid [{lo:.4g}, {hi:.4g}] clips {outside:.3g} of {spec.label()}")
            raw = np.asarray(density(spec, x), dtype=float)
            corrected = _kink_corrected(spec, raw, x, h)
            # the corrected samples carry the mass; a lone summand keeps its exact values
            values = (corrected if convolving else raw) / integrate.trapezoid(corrected, dx=h)
            samples[spec] = (values, outside)
        values, outside = samples[spec]
        clipped += outside
        vectors.append(values)

    if not convolving:
        logger.debug("grid m=%d half-width %.4g: single summand, clipped %.3g", m, half_width, clipped)
        return GridDensity(lo, hi, vectors[0], tail_mass=clipped)

    acc = vectors[0]
    negative = 0.0
    for values in vectors[1:]:
        full = signal.fftconvolve(acc, values) * h
        acc = full[m // 2: m // 2 + m]
        neg = -float(np.sum(np.minimum(acc, 0.0))) * h
        negative += neg
        if negative > CLIP_TOL:
            raise RingingError(f"FFT ringing clipped {negative:.3g} of mass")
        acc = np.maximum(acc, 0.0)

    mass = integrate.trapezoid(acc, dx=h)
    tail = max(clipped, 1.0 - mass, 0.0)
    logger.debug("grid m=%d half-width %.4g: mass %.12f, clipped %.3g, negative %.3g",
                 m, half_width, mass, clipped, negative)
    return GridDensity(lo, hi, acc / mass, tail_mass=tail)


def sample_density(spec: DistributionSpec, grid_cfg: GridConfig = GridConfig()) -> GridDensity:
    """A single law sampled pointwise on a grid sized to its own standard deviation."""
    return _fold((spec,), 1.0, grid_cfg, spec.std)


def _canonical(specs):
    # convolution commutes; a fixed order lets equal multisets share a cache entry
    return tuple(sorted(specs, key=repr))


def sum_density(seq: SumSequence, grid_cfg: GridConfig = GridConfig()) -> GridDensity:
    """Density of S_n = (X_1 + ... + X_n) / b_n."""
    return _fold(_canonical(seq.specs), seq.b_n, grid_cfg, 1.0)


def leave_one_out_density(seq: SumSequence, k: int,
                          grid_cfg: GridConfig = GridConfig()) -> GridDensity:
    """Density of S_{k,n}, the sum without X_k normalized by b_{k,n}. ``k`` is 1-based."""
    if seq.n == 1:
        raise DegenerateSum("leave-one-out sum of a single summand is empty")
    rest = seq.without(k)
    return _fold(_canonical(rest.specs), rest.b_n, grid_cfg, 1.0)


def _gaussian_kernel(delta, h):
    half = int(math.ceil(12.0 * delta / h))
    offsets = h * np.arange(-half, half + 1)
    kernel = np.exp(-0.5 * (offsets / delta) ** 2)
    return kernel / kernel.sum()


def gaussian_smooth(target: Union[DistributionSpec, GridDensity], delta: float,
                    grid_cfg: GridConfig = GridConfig()) -> GridDensity:
    """Density of X + delta*N, N standard normal independent of X."""
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta!r}")
    if isinstance(target, DistributionSpec):
        smoothed = target.convolve_gaussian(delta)
        return _fold((smoothed,), 1.0, grid_cfg, smoothed.std)
    if delta == 0:
        return target
    h = target.step
    if delta < h / 4.0:
        logger.debug("delta %.3g below a quarter grid step; smoothing is a no-op", delta)
        return target
    out = signal.fftconvolve(target.values, _gaussian_kernel(delta, h), mode="same")
    out = np.maximum(out, 0.0)
    mass = integrate.trapezoid(out, dx=h)
    leaked = max(target.mass - mass, 0.0)
    if leaked > CLIP_TOL:
        raise GridTooSmall(f"smoothing by {delta:g} pushed {leaked:.3g} of mass off the grid")
    return GridDensity(target.lo, target.hi, out / mass, tail_mass=target.tail_mass + leaked)


def _score_region(d):
    values = d.values
    peak = int(np.argmax(values))
    keep = values > max(P_FLOOR, SCORE_FLOOR_REL * float(values[peak]))
    lo = peak
    while lo > 0 and keep[lo - 1]:
        lo -= 1
    hi = peak
    while hi < d.m - 1 and keep[hi + 1]:
        hi += 1
    return lo, hi


def grid_score(d: GridDensity) -> ScoreFn:
    """Score (log p)' by central differences over the positive region around the mode."""
    lo, hi = _score_region(d)
    if hi - lo < 2:
        raise ScoreUndefined("grid density is positive on fewer than three nodes")
    xs = d.x[lo:hi + 1]
    ps = d.values[lo:hi + 1]
    inside = d.integrate(ps) / d.mass
    if inside < SCORE_MASS:
        raise ScoreUndefined(f"positive region holds only {inside:.9f} of the mass")
    rho = np.gradient(np.log(ps), d.step)
    xs.setflags(write=False)
    rho.setflags(write=False)

    def evaluate(x):
        return np.interp(x, xs, rho)

    return ScoreFn(evaluate, ScoreProvenance.NUMERIC_DIFFERENTIATION, (float(xs[0]), float(xs[-1])))


def grid_score_expectation(d: GridDensity, fn) -> float:
    """E[fn(rho(S))] over the region where the grid score is defined."""
    lo, hi = _score_region(d)
    rho_fn = grid_score(d)
    xs = d.x[lo:hi + 1]
    return d.integrate(fn(rho_fn(xs)) * d.values[lo:hi + 1])
