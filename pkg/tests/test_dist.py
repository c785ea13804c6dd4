import math

import numpy as np
import pytest

from tvclt import dist
from tvclt.dist import DistributionSpec, Family, ScoreProvenance
from tvclt.errors import (
    DisconnectedSupport,
    NonSmoothDensity,
    QuadratureDivergent,
    ScoreUndefined,
)


def test_density_at_mode(normal, laplace):
    assert dist.density(normal, 0.0) == pytest.approx(1.0 / math.sqrt(2.0 * math.pi), abs=1e-12)
    assert dist.density(laplace, 0.0) == pytest.approx(0.5, abs=1e-12)


def test_smoothed_rademacher_is_two_normal_mixture(rademacher_smooth):
    x = np.linspace(-4.0, 4.0, 81)
    phi = lambda u: np.exp(-0.5 * (u / 0.5) ** 2) / (0.5 * math.sqrt(2.0 * math.pi))  # noqa: E731
    expected = 0.5 * phi(x + 1.0) + 0.5 * phi(x - 1.0)
    assert np.max(np.abs(dist.density(rademacher_smooth, x) - expected)) < 1e-12


def test_densities_integrate_to_one(smooth_families, bimodal):
    for spec in smooth_families + [bimodal, DistributionSpec.smoothed_uniform(0.2)]:
        assert dist.expectation(spec, lambda x: 1.0) == pytest.approx(1.0, abs=1e-9), spec.label()


def test_analytic_scores(normal, laplace, logistic):
    assert dist.score(normal, 1.5) == pytest.approx(-1.5, abs=1e-12)
    assert dist.score(laplace, 0.7) == pytest.approx(-1.0, abs=1e-12)
    assert dist.score(laplace, -0.7) == pytest.approx(1.0, abs=1e-12)
    assert dist.score(logistic, 0.0) == pytest.approx(0.0, abs=1e-12)
    assert dist.score_fn(laplace).provenance is ScoreProvenance.ANALYTIC


def test_numeric_score_matches_analytic(logistic, bimodal, rademacher_smooth):
    xs = np.linspace(-4.0, 4.0, 100)
    for spec in (logistic, bimodal, rademacher_smooth):
        assert np.max(np.abs(dist.numeric_score(spec, xs) - dist.score(spec, xs))) < 1e-5


def test_score_has_mean_zero_and_unit_covariance(smooth_families, bimodal):
    for spec in smooth_families + [bimodal]:
        rho = dist.score_fn(spec)
        assert abs(dist.expectation(spec, lambda x: float(rho(x)))) < 1e-6, spec.label()
        assert dist.expectation(spec, lambda x: x * float(rho(x))) == pytest.approx(-1.0, abs=1e-5)


def test_score_undefined_outside_support():
    spec = DistributionSpec.custom(lambda x: np.where(np.abs(x) <= 1.0, 0.75 * (1.0 - x * x), 0.0),
                                   support=(-1.0, 1.0), mean=0.0, variance=0.2)
    with pytest.raises(ScoreUndefined):
        dist.score(spec, 1.5)


def test_fisher_information_oracles(normal, laplace, logistic):
    assert dist.fisher_j(normal) == pytest.approx(1.0, abs=1e-8)
    assert dist.fisher_j(DistributionSpec.normal(3.0)) == pytest.approx(1.0, abs=1e-8)
    assert dist.fisher_j(laplace) == pytest.approx(2.0, abs=1e-6)
    assert dist.fisher_j(logistic) == pytest.approx(math.pi ** 2 / 9.0, abs=1e-8)


def test_fisher_information_is_scale_free(laplace):
    assert dist.fisher_j(laplace.with_scale(3.5)) == pytest.approx(2.0, abs=1e-6)


def test_fisher_information_at_least_one(smooth_families, bimodal):
    for spec in smooth_families + [bimodal, DistributionSpec.smoothed_uniform(0.3)]:
        assert dist.fisher_j(spec) >= 1.0 - 1e-9


def test_well_separated_modes_keep_all_mass():
    spec = DistributionSpec.gaussian_mixture([0.5, 0.5], [-3.0, 3.0], [0.05, 0.05])
    lo, hi = spec.interval
    assert lo < -3.0 and hi > 3.0
    assert dist.expectation(spec, lambda x: 1.0) == pytest.approx(1.0, abs=1e-8)
    assert dist.expectation(spec, lambda x: x * x) == pytest.approx(9.0025, rel=1e-8)


def test_sharp_smoothed_rademacher_moments():
    spec = DistributionSpec.smoothed_rademacher(0.05)
    assert dist.expectation(spec, lambda x: 1.0) == pytest.approx(1.0, abs=1e-8)
    assert dist.expectation(spec, lambda x: x * x) == pytest.approx(1.0025, rel=1e-8)


def test_sharp_smoothed_rademacher_fisher_information():
    delta = 0.03
    spec = DistributionSpec.smoothed_rademacher(delta)
    assert dist.fisher_j(spec) == pytest.approx((1.0 + delta ** 2) / delta ** 2, rel=1e-6)


def test_sharp_uniform_edges_are_resolved():
    # two edge layers, each contributing int phi^2 / Phi = 0.9031 / (2 a delta)
    delta = 1e-4
    j = dist.fisher_j(DistributionSpec.smoothed_uniform(delta))
    assert j == pytest.approx((1.0 / 3.0 + delta ** 2) * 0.9031 / delta, rel=5e-3)


def test_fisher_information_beyond_cap_diverges():
    with pytest.raises(QuadratureDivergent):
        dist.fisher_j(DistributionSpec.smoothed_uniform(1e-8))
    with pytest.raises(QuadratureDivergent):
        dist.fisher_j(DistributionSpec.smoothed_rademacher(0.0005))


def test_atomic_law_has_no_density():
    spec = DistributionSpec.smoothed_rademacher(0.0)
    assert spec.atomic
    with pytest.raises(NonSmoothDensity):
        dist.density(spec, 0.0)
    with pytest.raises(NonSmoothDensity):
        dist.fisher_j(spec)
    with pytest.raises(DisconnectedSupport):
        dist.stein_kernel(spec, 0.0)
    assert dist.expectation(spec, lambda x: x * x) == pytest.approx(1.0)


def test_uniform_jumps_are_not_smooth():
    spec = DistributionSpec.smoothed_uniform(0.0)
    with pytest.raises(NonSmoothDensity):
        dist.fisher_j(spec)


def test_stein_kernel_closed_forms():
    assert dist.stein_kernel(DistributionSpec.normal(2.0), 0.7) == pytest.approx(4.0, abs=1e-12)
    uniform = DistributionSpec.smoothed_uniform(0.0)
    assert dist.stein_kernel(uniform, 0.3) == pytest.approx(0.455, abs=1e-12)


def test_stein_kernel_mean_is_variance(smooth_families, bimodal):
    for spec in smooth_families + [bimodal]:
        tau_mean = dist.expectation(spec, lambda x: float(dist.stein_kernel(spec, x)))
        assert tau_mean == pytest.approx(spec.variance, abs=1e-6), spec.label()


def test_numeric_stein_kernel_matches_closed_form(laplace):
    closed = dist.stein_kernel(laplace, 1.3)
    numeric = dist._kernel_numeric(laplace, 1.3)
    assert numeric == pytest.approx(closed, abs=1e-9)
    assert dist.stein_kernel(laplace, 1.3) == pytest.approx(1.0 * (1.3 + 1.0), abs=1e-12)


def test_relative_entropy(normal, laplace):
    assert dist.relative_entropy(normal) == pytest.approx(0.0, abs=1e-9)
    expected = 0.5 * math.log(math.pi * math.e) - 1.0
    assert dist.relative_entropy(laplace) == pytest.approx(expected, abs=1e-7)


def test_third_absolute_moment_of_normal(normal):
    assert dist.third_abs_moment(normal) == pytest.approx(2.0 * math.sqrt(2.0 / math.pi), abs=1e-9)


def test_convolve_gaussian_adds_variance(laplace):
    smoothed = laplace.convolve_gaussian(1.0)
    assert smoothed.variance == pytest.approx(3.0, abs=1e-6)
    assert dist.expectation(smoothed, lambda x: x * x) == pytest.approx(3.0, abs=1e-6)
    assert laplace.convolve_gaussian(0.0) is laplace


def test_convolve_gaussian_of_rademacher_is_closed_form():
    atomic = DistributionSpec.smoothed_rademacher(0.0)
    xs = np.linspace(-3.0, 3.0, 61)
    expected = dist.density(DistributionSpec.smoothed_rademacher(0.5), xs)
    assert np.max(np.abs(dist.density(atomic.convolve_gaussian(0.5), xs) - expected)) < 1e-12


def test_blurred_logistic_keeps_unit_mass(logistic):
    blurred = logistic.convolve_gaussian(0.4)
    assert dist.expectation(blurred, lambda x: 1.0) == pytest.approx(1.0, abs=1e-8)
    assert blurred.variance == pytest.approx(logistic.variance + 0.16, rel=1e-9)


def test_spec_mapping_round_trip(bimodal):
    again = DistributionSpec.from_mapping(bimodal.to_mapping())
    assert again == bimodal
    assert again.family is Family.GAUSSIAN_MIXTURE


def test_spec_rejects_bad_input():
    with pytest.raises(ValueError):
        DistributionSpec.of("laplace", bogus=1.0)
    with pytest.raises(ValueError):
        DistributionSpec.from_mapping({"family": "custom"})
    with pytest.raises(ValueError):
        DistributionSpec.laplace(1.0).with_scale(0.0)
    with pytest.raises(ValueError):
        DistributionSpec.custom(lambda x: np.where(np.abs(x) <= 1.0, 1.0, 0.0),
                                support=(-1.0, 1.0), mean=0.0, variance=1.0 / 3.0)


def test_laws_are_recentred():
    shifted = DistributionSpec.of("laplace", shift=5.0, b=1.0)
    assert dist.expectation(shifted, lambda x: x) == pytest.approx(0.0, abs=1e-9)
    skewed = DistributionSpec.gaussian_mixture([0.75, 0.25], [0.0, 2.0], [0.5, 0.5])
    assert dist.expectation(skewed, lambda x: x) == pytest.approx(0.0, abs=1e-9)
