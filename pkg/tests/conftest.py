"""Shared fixtures: small schedules and datasets reused across test modules."""

import numpy as np
import pytest

from guidelab import data as gdata
from guidelab import schedule as gschedule


@pytest.fixture(scope="session")
def linb_1000():
    return gschedule.build_linear_beta(1000, 1e-4, 0.02)


@pytest.fixture(scope="session")
def lina_1000():
    return gschedule.build_linear_alphabar(1000)


@pytest.fixture(scope="session")
def linb_50():
    return gschedule.build_linear_beta(50, 1e-4, 0.02)


@pytest.fixture(scope="session")
def bench_descriptor():
    return gdata.eight_gaussians()


@pytest.fixture(scope="session")
def bench_dataset(bench_descriptor):
    return gdata.generate(bench_descriptor, 8000, seed=1)


@pytest.fixture(scope="session")
def small_descriptor():
    """Two well-separated classes in D=8 for cheap gradient/oracle tests."""
    means = np.zeros((2, 8))
    means[0, 0] = 4.0
    means[1, 0] = -4.0
    return gdata.ManifoldDescriptor(kind="gaussian_mixture", dim=8,
                                    weights=np.array([0.5, 0.5]),
                                    means=means,
                                    variances=np.array([1.0, 1.0]))
