"""
Stein's equation f'(x) - x f(x) = h(x) - E h(N) for bounded test functions,
and numeric checks of the identities a total-variation CLT bound is built
from: the score integration-by-parts identity, the Stein-kernel identity,
the leave-one-out score bound, the increment bound on f and the truncated
kernel moment.
"""
from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from tvclt import dist
from tvclt.dist import DistributionSpec
from tvclt.errors import DisconnectedSupport, QuadratureDivergent
from tvclt.sums import GridConfig, SumSequence, grid_score_expectation, leave_one_out_density

logger = logging.getLogger(__name__)

SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
SQRT_2PI = math.sqrt(2.0 * math.pi)
SQRT_8PI = math.sqrt(8.0 * math.pi)
RANDOM_SEED = 20240601

# Generic solutions are tabulated on [-FAR, FAR] and continued from the
# nearest node; beyond FAR h is treated as constant.
FAR = 12.0
TABLE_STEP = 0.005
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


class FunctionKind(enum.Enum):
    INDICATOR = "indicator"
    SIGN = "sign"
    SMOOTH_BUMP = "smooth_bump"
    PIECEWISE_LINEAR = "piecewise_linear"
    CUSTOM = "custom"


@dataclass(frozen=True)
class TestFunction:
    """A bounded h. ``pieces`` holds (a, b, alpha, beta) with h = alpha + beta*x on [a, b)."""

    evaluator: Callable
    kind: FunctionKind
    bound: float = 1.0
    pieces: tuple = ()
    knots: tuple = ()
    name: str = ""

    __test__ = False  # not a pytest class

    def __call__(self, x):
        return self.evaluator(x)

    @classmethod
    def indicator(cls, t=0.0):
        t = float(t)
        return cls(lambda x: np.where(np.asarray(x) <= t, 1.0, 0.0), FunctionKind.INDICATOR, 1.0,
                   ((-math.inf, t, 1.0, 0.0), (t, math.inf, 0.0, 0.0)), (t,), f"1{{x<={t:g}}}")

    @classmethod
    def sign(cls):
        return cls(lambda x: np.sign(x), FunctionKind.SIGN, 1.0,
                   ((-math.inf, 0.0, -1.0, 0.0), (0.0, math.inf, 1.0, 0.0)), (0.0,), "sign")

    @classmethod
    def smooth_bump(cls, center=0.0, width=1.0):
        c, w = float(center), float(width)
        return cls(lambda x: np.exp(-((np.asarray(x) - c) / w) ** 2), FunctionKind.SMOOTH_BUMP, 1.0,
                   name=f"bump({c:g},{w:g})")

    @classmethod
    def piecewise_linear(cls, knots, values):
        """Linear interpolation through (knots, values), constant outside the knots."""
        k = np.asarray(knots, dtype=float)
        v = np.asarray(values, dtype=float)
        if k.ndim != 1 or k.size < 2 or k.shape != v.shape or np.any(np.diff(k) <= 0):
            raise ValueError("piecewise-linear h needs at least two increasing knots")
        pieces = [(-math.inf, float(k[0]), float(v[0]), 0.0)]
        for a, b, va, vb in zip(k[:-1], k[1:], v[:-1], v[1:]):
            beta = (vb - va) / (b - a)
            pieces.append((float(a), float(b), float(va - beta * a), float(beta)))
        pieces.append((float(k[-1]), math.inf, float(v[-1]), 0.0))
        bound = float(np.max(np.abs(v)))
        return cls(lambda x: np.interp(x, k, v), FunctionKind.PIECEWISE_LINEAR, bound,
                   tuple(pieces), tuple(float(t) for t in k), f"pl[{k.size}]")

    @classmethod
    def random_piecewise_linear(cls, rng, n_knots=8, lo=-6.0, hi=6.0):
        knots = np.sort(rng.uniform(lo, hi, n_knots))
        values = rng.uniform(-1.0, 1.0, n_knots)
        return cls.piecewise_linear(knots, values)

    @classmethod
    def custom(cls, fn, bound=1.0, knots=(), name="custom"):
        return cls(fn, FunctionKind.CUSTOM, float(bound), knots=tuple(knots), name=name)

    def scaled(self, factor):
        c = float(factor)
        pieces = tuple((a, b, c * alpha, c * beta) for a, b, alpha, beta in self.pieces)
        return TestFunction(lambda x: c * self.evaluator(x), self.kind, abs(c) * self.bound,
                            pieces, self.knots, f"{c:g}*{self.name}")

    def check_bound(self, xs):
        worst = float(np.max(np.abs(self.evaluator(xs))))
        if worst > self.bound + 1e-12:
            raise ValueError(f"|h| reaches {worst:g} above its bound {self.bound:g}")


def random_test_functions(count=20, seed=RANDOM_SEED):
    rng = np.random.default_rng(seed)
    return [TestFunction.random_piecewise_linear(rng) for _ in range(count)]


def _phi(x):
    with np.errstate(over="ignore"):
        return np.exp(-0.5 * np.square(x)) / SQRT_2PI


def _cdf_ratio(u, x):
    """Phi(u)/phi(x) for u <= x <= 0."""
    with np.errstate(over="ignore", invalid="ignore"):
        return SQRT_HALF_PI * special.erfcx(-u / math.sqrt(2.0)) * np.exp(0.5 * (x * x - u * u))


def _sf_ratio(u, x):
    """(1 - Phi(u))/phi(x) for u >= x >= 0."""
    with np.errstate(over="ignore", invalid="ignore"):
        return SQRT_HALF_PI * special.erfcx(u / math.sqrt(2.0)) * np.exp(0.5 * (x * x - u * u))


def _pdf_ratio(u, x):
    return np.exp(0.5 * (x * x - u * u))


def _exact_mean(h: TestFunction):
    total = 0.0
    for a, b, alpha, beta in h.pieces:
        total += alpha * (special.ndtr(b) - special.ndtr(a)) + beta * (_phi(a) - _phi(b))
    return float(total)


def _exact_f(h: TestFunction, eh, x):
    """Closed form of the bounded solution for piecewise-linear h."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _exact_f_unguarded(h, eh, np.asarray(x, dtype=float))


def _exact_f_unguarded(h, eh, x):
    left = np.minimum(x, 0.0)
    right = np.maximum(x, 0.0)
    # x <= 0: integrate from -inf up to x
    acc_left = -eh * _cdf_ratio(left, left)
    for a, b, alpha, beta in h.pieces:
        active = a < left
        c = np.minimum(b, left)
        part = (alpha * (_cdf_ratio(c, left) - np.where(np.isinf(a), 0.0, _cdf_ratio(a, left)))
                + beta * (np.where(np.isinf(a), 0.0, _pdf_ratio(a, left)) - _pdf_ratio(c, left)))
        acc_left = acc_left + np.where(active, part, 0.0)
    # x > 0: integrate from x up to +inf, with the sign flipped
    acc_right = -eh * _sf_ratio(right, right)
    for a, b, alpha, beta in h.pieces:
        active = b > right
        c = np.maximum(a, right)
        part = (alpha * (_sf_ratio(c, right) - np.where(np.isinf(b), 0.0, _sf_ratio(b, right)))
                + beta * (_pdf_ratio(c, right) - np.where(np.isinf(b), 0.0, _pdf_ratio(b, right))))
        acc_right = acc_right + np.where(active, part, 0.0)
    return np.where(x <= 0.0, acc_left, -acc_right)


def _numeric_mean(h: TestFunction):
    points = [t for t in h.knots if -40.0 < t < 40.0]
    value, err = integrate.quad(lambda y: float(h(y)) * float(_phi(y)), -40.0, 40.0,
                                points=points or None, epsabs=1e-13, epsrel=1e-12, limit=400)
    if not math.isfinite(value):
        raise QuadratureDivergent(f"E h(N) for {h.name} did not converge")
    return value


def _step_integral(h, eh, x_from, x_to, anchor):
    """int_{x_from}^{x_to} (h(y) - eh) exp((anchor^2 - y^2)/2) dy by Gauss-Legendre."""
    mid = 0.5 * (x_from + x_to)
    half = 0.5 * (x_to - x_from)
    ys = mid[..., None] + half[..., None] * _GL_NODES
    integrand = (np.asarray(h(ys), dtype=float) - eh) * np.exp(0.5 * (anchor[..., None] ** 2 - ys ** 2))
    return half * np.sum(_GL_WEIGHTS * integrand, axis=-1)


class _GenericSolver:
    """Tabulates f for any bounded h by stable one-step recursions from each tail."""

    def __init__(self, h, eh):
        self.h, self.eh = h, eh
        n_half = int(round(FAR / TABLE_STEP))
        self.nodes = TABLE_STEP * np.arange(-n_half, n_half + 1)
        table = np.empty_like(self.nodes)
        neg = self.nodes <= 0.0
        xs = self.nodes[neg]
        table_left = np.empty_like(xs)
        table_left[0] = self._tail(xs[0])
        for i in range(1, xs.size):
            table_left[i] = (_pdf_ratio(xs[i - 1], xs[i]) * table_left[i - 1]
                             + float(_step_integral(h, eh, xs[i - 1:i], xs[i:i + 1], xs[i:i + 1])[0]))
        xs_r = self.nodes[~neg][::-1]
        table_right = np.empty_like(xs_r)
        table_right[0] = self._tail(xs_r[0])
        for i in range(1, xs_r.size):
            table_right[i] = (_pdf_ratio(xs_r[i - 1], xs_r[i]) * table_right[i - 1]
                              - float(_step_integral(h, eh, xs_r[i:i + 1], xs_r[i - 1:i],
                                                     xs_r[i:i + 1])[0]))
        table[neg] = table_left
        table[~neg] = table_right[::-1]
        self.table = table

    def _tail(self, x):
        level = float(self.h(x)) - self.eh
        if x <= 0:
            return level * float(_cdf_ratio(x, x))
        return -level * float(_sf_ratio(x, x))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        clipped = np.clip(x, -FAR, FAR)
        # left of 0 continue from the node below, right of 0 from the node above
        pos = (clipped + FAR) / TABLE_STEP
        j = np.where(clipped <= 0.0, np.floor(pos), np.ceil(pos)).astype(int)
        j = np.clip(j, 0, self.nodes.size - 1)
        xj = self.nodes[j]
        carried = _pdf_ratio(xj, clipped) * self.table[j]
        step = _step_integral(self.h, self.eh, np.minimum(xj, clipped), np.maximum(xj, clipped), clipped)
        inside = np.where(clipped <= 0.0, carried + step, carried - step)
        tail = np.vectorize(self._tail, otypes=[float])(x) if np.any(np.abs(x) > FAR) else inside
        return np.where(np.abs(x) > FAR, tail, inside)


@dataclass(frozen=True, eq=False)
class SteinSolution:
    """Bounded solution of f' - x f = h - E h(N), with f and f' tabulated on ``xs``."""

    h: TestFunction
    eh: float
    xs: np.ndarray
    f_values: np.ndarray
    fprime_values: np.ndarray
    _evaluate: Callable = field(repr=False)

    def f(self, x):
        return self._evaluate(x)

    def fprime(self, x):
        x = np.asarray(x, dtype=float)
        return x * self.f(x) + np.asarray(self.h(x), dtype=float) - self.eh

    @property
    def sup_f(self):
        return float(np.max(np.abs(self.f_values)))

    @property
    def sup_fprime(self):
        return float(np.max(np.abs(self.fprime_values)))

    def residual(self, eta=1e-5, skip=1e-4):
        """Max |central-difference f' - x f - (h - E h)| over ``xs``, away from knots."""
        xs = self.xs
        if self.h.knots:
            dist_to_knot = np.min(np.abs(xs[:, None] - np.asarray(self.h.knots)[None, :]), axis=1)
            xs = xs[dist_to_knot > skip]
        derivative = (self.f(xs + eta) - self.f(xs - eta)) / (2.0 * eta)
        ode = xs * self.f(xs) + np.asarray(self.h(xs), dtype=float) - self.eh
        return float(np.max(np.abs(derivative - ode)))


def solve_stein(h: TestFunction, radius: float = 8.0, points: int = 1601) -> SteinSolution:
    xs = np.linspace(-radius, radius, points)
    h.check_bound(xs)
    if h.pieces:
        eh = _exact_mean(h)
        evaluate = functools.partial(_exact_f, h, eh)
    else:
        eh = _numeric_mean(h)
        evaluate = _GenericSolver(h, eh)
    f_values = np.asarray(evaluate(xs), dtype=float)
    if not np.all(np.isfinite(f_values)):
        raise QuadratureDivergent(f"Stein solution for {h.name} is not finite")
    fprime_values = xs * f_values + np.asarray(h(xs), dtype=float) - eh
    logger.debug("solved Stein equation for %s: E h(N)=%.12g", h.name, eh)
    return SteinSolution(h, eh, xs, f_values, fprime_values, evaluate)


# ---------------------------------------------------------------------------
# Identity checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothFunction:
    name: str
    f: Callable[[float], float]
    fprime: Callable[[float], float]


SMOOTH_FUNCTIONS = {
    "sin": SmoothFunction("sin", math.sin, math.cos),
    "tanh": SmoothFunction("tanh", math.tanh, lambda x: 1.0 - math.tanh(x) ** 2),
    "arctan": SmoothFunction("arctan", math.atan, lambda x: 1.0 / (1.0 + x * x)),
    "bump": SmoothFunction("bump", lambda x: math.exp(-x * x), lambda x: -2.0 * x * math.exp(-x * x)),
    "identity": SmoothFunction("identity", lambda x: x, lambda x: 1.0),
    "constant": SmoothFunction("constant", lambda x: 1.0, lambda x: 0.0),
}


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float

    @property
    def gap(self):
        return abs(self.lhs - self.rhs)

    def holds(self, tol=1e-5):
        return self.gap < tol


def check_ibp_score(spec: DistributionSpec, f: SmoothFunction) -> IdentityCheck:
    """E[f(X) rho(X)] against -E[f'(X)]."""
    rho = dist.score_fn(spec)
    lhs = dist.expectation(spec, lambda x: f.f(x) * float(rho(x)))
    rhs = -dist.expectation(spec, f.fprime)
    return IdentityCheck(lhs, rhs)


def check_kernel_identity(spec: DistributionSpec, f: SmoothFunction) -> IdentityCheck:
    """E[f(Y) Y] against E[f'(Y) tau(Y)]."""
    if spec.atomic or not spec.law.connected:
        raise DisconnectedSupport(f"{spec.label()} is not supported on a single interval")
    lhs = dist.expectation(spec, lambda x: f.f(x) * x)
    rhs = dist.expectation(spec, lambda x: f.fprime(x) * dist.stein_kernel(spec, x))
    return IdentityCheck(lhs, rhs)


@dataclass(frozen=True)
class LooScoreCheck:
    k: int
    e_abs_rho: float
    e_rho: float
    e_rho_sq: float
    j_weighted: float
    j_max: float

    @property
    def j_bound(self):
        return math.sqrt(self.j_max)

    @property
    def holds(self):
        return self.e_abs_rho <= self.j_bound + 1e-4

    @property
    def chain_holds(self):
        # E rho^2 <= sum_{i != k} sigma_i^2 J(X_i) / b_{k,n}^2 <= max J
        return (self.e_rho_sq <= self.j_weighted * (1.0 + 1e-3) + 1e-4
                and self.j_weighted <= self.j_max + 1e-9)


def check_loo_score_bound(seq: SumSequence, k: int,
                          grid_cfg: GridConfig = GridConfig()) -> LooScoreCheck:
    grid = leave_one_out_density(seq, k, grid_cfg)
    j_values = [dist.fisher_j(s) for s in seq.specs]
    rest = [(s.variance, j) for i, (s, j) in enumerate(zip(seq.specs, j_values), 1) if i != k]
    b_kn_sq = math.fsum(v for v, _ in rest)
    j_weighted = math.fsum(v * j for v, j in rest) / b_kn_sq
    return LooScoreCheck(
        k=k,
        e_abs_rho=grid_score_expectation(grid, np.abs),
        e_rho=grid_score_expectation(grid, lambda r: r),
        e_rho_sq=grid_score_expectation(grid, np.square),
        j_weighted=j_weighted,
        j_max=max(j_values),
    )


def check_increment_bound(x_spec: DistributionSpec, b_n: float, solution: SteinSolution,
                          points: int = 200, radius: float = 6.0) -> float:
    """Largest excess of |f(u + x/b_n) - f(u)| over (sqrt(8 pi)/b_n) * min(b_n, |x|).

    ``u`` runs over [-radius, radius]; ``x`` over radius standard deviations of X_k.
    """
    us = np.linspace(-radius, radius, points)
    xs = np.linspace(-radius, radius, points) * x_spec.std
    u, x = np.meshgrid(us, xs, indexing="ij")
    lhs = np.abs(solution.f(u + x / b_n) - solution.f(u))
    rhs = SQRT_8PI / b_n * np.minimum(b_n, np.abs(x))
    return float(max(np.max(lhs - rhs), 0.0))


@dataclass(frozen=True)
class TruncatedKernelCheck:
    lhs: float
    rhs: float
    association_lhs: float

    @property
    def holds(self):
        return self.lhs <= self.rhs + 1e-6

    @property
    def association_holds(self):
        return self.association_lhs <= self.rhs + 1e-6


def check_truncated_kernel_moment(spec: DistributionSpec, b: float) -> TruncatedKernelCheck:
    """E[min(b,|X|) tau(X)] <= E[X^2 min(b,|X|)], plus E[min(b,|X|)] E[X^2] <= the same."""
    if spec.atomic or not spec.law.connected:
        raise DisconnectedSupport(f"{spec.label()} is not supported on a single interval")
    cuts = (0.0, -b, b) if math.isfinite(b) else (0.0,)
    lhs = dist.expectation(spec, lambda x: min(b, abs(x)) * dist.stein_kernel(spec, x), cuts)
    rhs = dist.expectation(spec, lambda x: x * x * min(b, abs(x)), cuts)
    truncated = dist.expectation(spec, lambda x: min(b, abs(x)), cuts)
    return TruncatedKernelCheck(lhs, rhs, truncated * spec.variance)
