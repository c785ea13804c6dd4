import os
import sys

import pytest

# Ensure the src directory is in the python path
sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src"))

from tvclt.dist import DistributionSpec  # noqa: E402
from tvclt.sums import GridConfig, SumSequence  # noqa: E402

BIMODAL = dict(weights=[0.5, 0.5], means=[-1.0, 1.0], sigmas=[0.5, 0.5])


@pytest.fixture
def normal():
    return DistributionSpec.normal(1.0)


@pytest.fixture
def laplace():
    return DistributionSpec.laplace(1.0)


@pytest.fixture
def logistic():
    return DistributionSpec.logistic(1.0)


@pytest.fixture
def bimodal():
    return DistributionSpec.gaussian_mixture(**BIMODAL)


@pytest.fixture
def rademacher_smooth():
    return DistributionSpec.smoothed_rademacher(0.5)


@pytest.fixture
def smooth_families(normal, laplace, logistic, rademacher_smooth):
    return [normal, laplace, logistic, rademacher_smooth]


@pytest.fixture
def small_grid():
    return GridConfig(m=2 ** 12)


def iid(spec, n, name="seq"):
    return SumSequence((spec,) * n, name)


def cyclic(spec, n, name="cyc"):
    return SumSequence(tuple(spec.with_std(1.0 + (k % 3)) for k in range(1, n + 1)), name)


@pytest.fixture
def minimal_config(tmp_path):
    path = tmp_path / "minimal.yml"
    path.write_text(
        "sequences:\n"
        "  - name: laplace\n"
        "    profile: iid\n"
        "    base: {family: laplace, params: {b: 1.0}}\n"
        "n_values: [2, 10]\n"
    )
    return path
