import math

import numpy as np
import pytest

from mrbidomain.model import ModelParams, StimulusProtocol


@pytest.fixture(scope="session")
def paper_params():
    """The published parameter set, unscaled (used by formula-level tests)."""
    return ModelParams()


@pytest.fixture(scope="session")
def desk_params():
    """Desk-normalized parameters of the default configuration."""
    from mrbidomain.config import RunConfig

    return RunConfig().params


@pytest.fixture(scope="session")
def desk_proto():
    return StimulusProtocol()


def principal_axis_angle(mask, X, Y):
    """Orientation (degrees) of the second-moment principal axis of a cell set."""
    xs, ys = X[mask], Y[mask]
    xm, ym = xs.mean(), ys.mean()
    ixx = ((xs - xm) ** 2).mean()
    iyy = ((ys - ym) ** 2).mean()
    ixy = ((xs - xm) * (ys - ym)).mean()
    return 0.5 * math.degrees(math.atan2(2.0 * ixy, ixx - iyy))


def monomial_cell_averages(level, a, b):
    """Exact cell averages of x^a y^b on the level grid (closed-form integral)."""
    n = 1 << level
    h = 1.0 / n
    i = np.arange(n, dtype=float)
    fx = (((i + 1) ** (a + 1) - i ** (a + 1)) * h**a) / (a + 1)
    fy = (((i + 1) ** (b + 1) - i ** (b + 1)) * h**b) / (b + 1)
    return np.outer(fx, fy)
