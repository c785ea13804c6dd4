"""Distances to the normal law and the condition functionals of a summand sequence."""
from __future__ import annotations

import functools
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, special

from tvclt import dist
from tvclt.dist import DistributionSpec
from tvclt.errors import GridMismatch, QuadratureDivergent
from tvclt.sums import GridDensity, SumSequence

logger = logging.getLogger(__name__)

MAX_COMMON_NODES = 2 ** 22


@dataclass(frozen=True)
class DistanceReport:
    tv: float
    kolmogorov: float
    tail_mass: float
    lo: float
    hi: float


def _std_normal(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _common(p: GridDensity, q: GridDensity):
    """Put two grids on one set of nodes; returns (x, p_values, q_values, step)."""
    if p.same_grid(q):
        return p.x, p.values, q.values, p.step
    if p.hi <= q.lo or q.hi <= p.lo:
        raise GridMismatch(f"grids [{p.lo:g}, {p.hi:g}] and [{q.lo:g}, {q.hi:g}] do not overlap")
    lo, hi = min(p.lo, q.lo), max(p.hi, q.hi)
    step = min(p.step, q.step)
    count = int(math.ceil((hi - lo) / step)) + 1
    if count > MAX_COMMON_NODES:
        raise GridMismatch(f"common grid would need {count} nodes")
    x = np.linspace(lo, hi, count)
    logger.debug("resampled grids onto %d common nodes over [%g, %g]", count, lo, hi)
    return x, p.pdf(x), q.pdf(x), x[1] - x[0]


def _reference(p: GridDensity, q: Optional[GridDensity]):
    """(x, p, q, step, q tail mass, q mass below the grid)."""
    if q is None:
        x = p.x
        below = float(special.ndtr(p.lo))
        tail = below + float(special.ndtr(-p.hi))
        return x, p.values, _std_normal(x), p.step, tail, below
    x, pv, qv, step = _common(p, q)
    return x, pv, qv, step, q.tail_mass, 0.0


def tv_distance(p: GridDensity, q: Optional[GridDensity] = None) -> float:
    """Half the L1 distance between p and q (standard normal when q is None).

    Mass outside the grid is added in full.
    """
    x, pv, qv, step, q_tail, _ = _reference(p, q)
    inner = 0.5 * float(integrate.trapezoid(np.abs(pv - qv), dx=step))
    value = inner + 0.5 * (p.tail_mass + q_tail)
    return min(max(value, 0.0), 1.0)


def kolmogorov_distance(p: GridDensity, q: Optional[GridDensity] = None) -> float:
    """sup |F_p - F_q| over the grid nodes, CDFs by cumulative trapezoid."""
    x, pv, qv, step, _, below = _reference(p, q)
    fp = integrate.cumulative_trapezoid(pv, dx=step, initial=0.0)
    fq = below + integrate.cumulative_trapezoid(qv, dx=step, initial=0.0)
    return min(float(np.max(np.abs(fp - fq))), 1.0)


def distance_report(p: GridDensity, q: Optional[GridDensity] = None) -> DistanceReport:
    return DistanceReport(tv_distance(p, q), kolmogorov_distance(p, q), p.tail_mass, p.lo, p.hi)


def char_fn(p: GridDensity, t: float) -> complex:
    """E exp(itS) for a grid density, by trapezoid."""
    re = p.expect(lambda x: np.cos(t * x))
    im = p.expect(lambda x: np.sin(t * x))
    return complex(re, im)


def spec_char_fn(spec: DistributionSpec, t: float) -> complex:
    """E exp(itX) for one summand, by quadrature."""
    re = dist.expectation(spec, lambda x: math.cos(t * x))
    im = dist.expectation(spec, lambda x: math.sin(t * x))
    return complex(re, im)


@functools.lru_cache(maxsize=4096)
def tail_second_moment(spec: DistributionSpec, t: float) -> float:
    """E[X^2 1{|X| > t}]."""
    return dist.expectation(spec, lambda x: x * x if abs(x) > t else 0.0, points=(-t, t))


@functools.lru_cache(maxsize=4096)
def truncated_third_moment(spec: DistributionSpec, b: float) -> float:
    """E[X^2 min(b, |X|)]."""
    return dist.expectation(spec, lambda x: x * x * min(b, abs(x)), points=(-b, 0.0, b))


def _grouped(seq: SumSequence, n: int):
    head = seq.head(n)
    return Counter(head.specs), head.b_n


def lindeberg_functional(seq: SumSequence, n: int, eps: float) -> float:
    """L_n(eps) = sum_k E[X_k^2 1{|X_k| > eps b_n}] / b_n^2."""
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps!r}")
    counts, b = _grouped(seq, n)
    t = eps * b
    total = math.fsum(c * tail_second_moment(s, t) for s, c in counts.items())
    return total / (b * b)


def feller_ratio(seq: SumSequence, n: int) -> float:
    head = seq.head(n)
    return float(np.max(head.variances)) / head.b_n ** 2


def truncated_moment(seq: SumSequence, n: int) -> float:
    """M_n = sum_k E[X_k^2 min(b_n, |X_k|)] / b_n^3."""
    counts, b = _grouped(seq, n)
    total = math.fsum(c * truncated_third_moment(s, b) for s, c in counts.items())
    return total / b ** 3


def third_moment_ratio(seq: SumSequence, n: int) -> float:
    """sum_k E|X_k|^3 / b_n^3; infinite when a third moment diverges."""
    counts, b = _grouped(seq, n)
    try:
        total = math.fsum(c * dist.third_abs_moment(s) for s, c in counts.items())
    except QuadratureDivergent:
        return math.inf
    return total / b ** 3 if math.isfinite(total) else math.inf


def lindeberg_table(seq: SumSequence, n: int, eps_grid) -> list:
    return [(float(eps), lindeberg_functional(seq, n, float(eps))) for eps in eps_grid]
