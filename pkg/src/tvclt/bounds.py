"""
The explicit total-variation bound for normalized sums, its sharper
intermediate form, the Kolmogorov-distance bounds, the entropy inequality,
the Lindeberg decomposition of M_n, the delta-smoothing scan and the
matching-normal smoothing of a possibly singular base sequence.
"""
from __future__ import annotations

import enum
import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional

import numpy as np

from tvclt import dist, metrics
from tvclt.dist import DistributionSpec
from tvclt.errors import NonSmoothDensity, QuadratureDivergent
from tvclt.sums import (
    GridConfig,
    SumSequence,
    grid_score_expectation,
    leave_one_out_density,
    sum_density,
)

logger = logging.getLogger(__name__)

SQRT_8PI = math.sqrt(8.0 * math.pi)
HOLD_TOL = 1e-6


class BoundReason(enum.Enum):
    FINITE = "finite"
    SINGLE_SUMMAND = "single_summand"
    NON_SMOOTH = "non_smooth"
    INFINITE_FISHER = "infinite_fisher"


@dataclass(frozen=True)
class BoundReport:
    sequence: str
    n: int
    j_values: tuple
    j_max: float
    feller: float
    m_n: float
    tv_bound: float
    tv_actual: float
    k_actual: float
    reason: BoundReason
    intermediate_bound: Optional[float] = None

    @property
    def bound_finite(self):
        return math.isfinite(self.tv_bound)

    @property
    def slack(self):
        return self.tv_bound - self.tv_actual

    @property
    def slack_ratio(self):
        if not self.bound_finite or self.tv_bound == 0.0:
            return 0.0
        return self.tv_actual / self.tv_bound

    @property
    def bound_holds(self):
        return not (self.tv_actual > self.tv_bound + HOLD_TOL)

    @property
    def intermediate_holds(self):
        """tv_actual <= intermediate_bound <= tv_bound, when the intermediate bound was computed."""
        if self.intermediate_bound is None:
            return True
        return (self.tv_actual <= self.intermediate_bound + HOLD_TOL
                and self.intermediate_bound <= self.tv_bound + HOLD_TOL)


def _fisher_values(seq: SumSequence):
    """Per-summand J values and the reason the bound may be vacuous."""
    cache = {}
    values = []
    for spec in seq.specs:
        if spec not in cache:
            try:
                cache[spec] = dist.fisher_j(spec)
            except NonSmoothDensity:
                return tuple(), BoundReason.NON_SMOOTH
            except QuadratureDivergent:
                return tuple(), BoundReason.INFINITE_FISHER
        values.append(cache[spec])
    return tuple(values), BoundReason.FINITE


def explicit_bound(j_max: float, feller: float, m_n: float) -> float:
    """(8 pi J_max / (1 - max sigma_k^2 / b_n^2))^(1/2) * M_n."""
    if feller >= 1.0:
        return math.inf
    return math.sqrt(8.0 * math.pi * j_max / (1.0 - feller)) * m_n


def tv_bound(seq: SumSequence, n: int) -> float:
    head = seq.head(n)
    if n == 1:
        return math.inf
    j_values, reason = _fisher_values(head)
    if reason is not BoundReason.FINITE:
        return math.inf
    return explicit_bound(max(j_values), metrics.feller_ratio(seq, n), metrics.truncated_moment(seq, n))


def intermediate_bound(seq: SumSequence, n: int, grid_cfg: GridConfig = GridConfig()) -> float:
    """(sqrt(8 pi)/b_n^2) sum_k E|rho_{k,n}| E[X_k^2 min(b_n,|X_k|)] / b_{k,n}."""
    head = seq.head(n)
    b = head.b_n
    total = 0.0
    for k, spec in enumerate(head.specs, 1):
        loo = leave_one_out_density(head, k, grid_cfg)
        e_abs = grid_score_expectation(loo, np.abs)
        total += e_abs * metrics.truncated_third_moment(spec, b) / head.b_kn(k)
    return SQRT_8PI / b ** 2 * total


def evaluate(seq: SumSequence, n: int, grid_cfg: GridConfig = GridConfig(),
             with_intermediate: bool = True) -> BoundReport:
    """Bound, actual distances and every ingredient for S_n of ``seq``."""
    head = seq.head(n)
    feller = metrics.feller_ratio(seq, n)
    m_n = metrics.truncated_moment(seq, n)

    j_values, reason = _fisher_values(head)
    if n == 1 and reason is BoundReason.FINITE:
        reason = BoundReason.SINGLE_SUMMAND
    j_max = max(j_values) if j_values else math.inf
    bound = explicit_bound(j_max, feller, m_n) if reason is BoundReason.FINITE else math.inf

    try:
        grid = sum_density(head, grid_cfg)
        tv_actual = metrics.tv_distance(grid)
        k_actual = metrics.kolmogorov_distance(grid)
    except NonSmoothDensity:
        # a purely atomic S_n is singular to the normal law
        tv_actual, k_actual = 1.0, math.nan

    intermediate = None
    if with_intermediate and reason is BoundReason.FINITE and n >= 2:
        intermediate = intermediate_bound(head, n, grid_cfg)

    report = BoundReport(seq.name, n, j_values, j_max, feller, m_n, bound, tv_actual,
                         k_actual, reason, intermediate)
    logger.debug("%s n=%d: bound %.6g actual %.6g (%s)", seq.name, n, bound, tv_actual,
                 reason.value)
    return report


def kolmogorov_bounds(seq: SumSequence, n: int, c: float = 1.0):
    """(c * M_n, c * sum E|X_k|^3 / b_n^3); the constant c is not known, so these are shape-only."""
    if not c > 0:
        raise ValueError(f"c must be positive, got {c!r}")
    return c * metrics.truncated_moment(seq, n), c * metrics.third_moment_ratio(seq, n)


@dataclass(frozen=True)
class EntropyCheck:
    d: float
    j: float

    @property
    def holds(self):
        return self.d <= (self.j - 1.0) / 2.0 + 1e-6

    @property
    def slack(self):
        return (self.j - 1.0) / 2.0 - self.d


def entropy_inequality(spec: DistributionSpec) -> EntropyCheck:
    """D(X) <= (J(X) - 1)/2."""
    return EntropyCheck(dist.relative_entropy(spec), dist.fisher_j(spec))


@dataclass(frozen=True)
class Cor1Decomposition:
    """M_n split by where |X_k| falls: above b_n, in (eps b_n, b_n], at most eps b_n."""

    eps: float
    m_n: float
    l_n_eps: float
    above: float
    middle: float
    below: float

    @property
    def holds(self):
        return self.m_n <= self.l_n_eps + self.eps + 1e-8

    @property
    def pieces_hold(self):
        # above + middle <= L_n(eps) and below <= eps
        return self.above + self.middle <= self.l_n_eps + 1e-8 and self.below <= self.eps + 1e-8


def cor1_decomposition(seq: SumSequence, n: int, eps: float) -> Cor1Decomposition:
    if not 0.0 < eps < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {eps!r}")
    head = seq.head(n)
    b = head.b_n
    t = eps * b
    above = middle = below = 0.0
    for spec, count in Counter(head.specs).items():
        above += count * metrics.tail_second_moment(spec, b) * b
        middle += count * dist.expectation(
            spec, lambda x: abs(x) ** 3 if t < abs(x) <= b else 0.0, points=(-b, -t, t, b))
        below += count * dist.expectation(
            spec, lambda x: abs(x) ** 3 if abs(x) <= t else 0.0, points=(-t, 0.0, t))
    scale = b ** 3
    return Cor1Decomposition(eps, metrics.truncated_moment(seq, n),
                             metrics.lindeberg_functional(seq, n, eps),
                             above / scale, middle / scale, below / scale)


@dataclass(frozen=True)
class SmoothingRow:
    delta: float
    tv_bound: float
    tv_actual: float


def smoothing_stability(seq: SumSequence, n: int, deltas, grid_cfg: GridConfig = GridConfig()):
    """Bound and actual distance of S_n for the sequence X_k + delta N_k, one row per delta."""
    rows = []
    for delta in deltas:
        smoothed = seq.head(n).smoothed(float(delta))
        report = evaluate(smoothed, n, grid_cfg, with_intermediate=False)
        rows.append(SmoothingRow(float(delta), report.tv_bound, report.tv_actual))
    return rows


def smoothing_is_stable(rows, tol=1e-3):
    """tv_actual at the two smallest deltas agrees within ``tol``."""
    if len(rows) < 2:
        return True
    smallest = sorted(rows, key=lambda r: r.delta)[:2]
    return abs(smallest[0].tv_actual - smallest[1].tv_actual) < tol


# ---------------------------------------------------------------------------
# Matching-normal smoothing of a base sequence
# ---------------------------------------------------------------------------

def matching_normal(seq: SumSequence) -> SumSequence:
    """X_k = Y_k + N_k with N_k normal, Var N_k = Var Y_k."""
    return SumSequence(tuple(s.convolve_gaussian(s.std) for s in seq.specs), seq.name)


@dataclass(frozen=True)
class CharFnRecovery:
    n: int
    t: float
    recovered: complex
    exact: complex

    @property
    def gap(self):
        return abs(self.recovered - self.exact)

    @property
    def to_normal(self):
        return abs(self.recovered - math.exp(-0.5 * self.t ** 2))


def char_fn_recovery(base: SumSequence, n: int, t: float,
                     grid_cfg: GridConfig = GridConfig()) -> CharFnRecovery:
    """E exp(it sum Y_k / a_n) recovered as e^{t^2/2} E exp(i sqrt(2) t S_n)."""
    head = base.head(n)
    a_n = head.b_n
    smoothed = matching_normal(head)
    grid = sum_density(smoothed, grid_cfg)
    recovered = math.exp(0.5 * t * t) * metrics.char_fn(grid, math.sqrt(2.0) * t)
    exact = complex(1.0, 0.0)
    for spec, count in Counter(head.specs).items():
        exact *= metrics.spec_char_fn(spec, t / a_n) ** count
    return CharFnRecovery(n, float(t), recovered, exact)


@dataclass(frozen=True)
class LindebergTransfer:
    n: int
    eps: float
    smoothed: float
    base: float
    noise: float

    @property
    def bound(self):
        return 2.0 * self.base + 2.0 * self.noise

    @property
    def holds(self):
        return self.smoothed <= self.bound + 1e-9


def lindeberg_transfer(base: SumSequence, n: int, eps: float) -> LindebergTransfer:
    """L_n^X(eps) against 2 L_n^Y(eps/sqrt 2) + 2 L_n^N(eps/sqrt 2)."""
    head = base.head(n)
    smoothed = matching_normal(head)
    noise = SumSequence(tuple(DistributionSpec.normal(s.std) for s in head.specs), head.name)
    shrunk = eps / math.sqrt(2.0)
    return LindebergTransfer(
        n, float(eps),
        metrics.lindeberg_functional(smoothed, n, eps),
        metrics.lindeberg_functional(head, n, shrunk),
        metrics.lindeberg_functional(noise, n, shrunk),
    )


def rate_slope(ns, values) -> float:
    """Least-squares slope of log(value) against log(n), ignoring non-positive entries."""
    pairs = [(math.log(n), math.log(v)) for n, v in zip(ns, values)
             if v is not None and math.isfinite(v) and v > 0]
    if len(pairs) < 2:
        return math.nan
    x, y = np.array(pairs).T
    return float(np.polyfit(x, y, 1)[0])
