import numpy as np
import pytest

from semint import models
from semint.bounds import derive_constants, estimate_bounds
from semint.extphase import ExtendedState

PEND_RADIUS = 2.5
DELTA = 0.5
SAFETY = 1.1


@pytest.fixture(scope="session")
def pendulum():
    return models.pendulum()


@pytest.fixture(scope="session")
def pendulum_origin():
    return ExtendedState.from_parts([0.0], 0.0, [0.0], 0.0)


@pytest.fixture(scope="session")
def pendulum_bounds(pendulum, pendulum_origin):
    """Raw sampled bounds on the standard test box |q|,|p| <= 2.5."""
    return estimate_bounds(pendulum, pendulum_origin, PEND_RADIUS, 17)


@pytest.fixture(scope="session")
def pendulum_scaled(pendulum_bounds):
    return pendulum_bounds.scaled(SAFETY)


@pytest.fixture(scope="session")
def pendulum_constants(pendulum_scaled):
    return derive_constants(pendulum_scaled, DELTA)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def pendulum_state(q, p, wp=0.0, t=0.0):
    return ExtendedState.from_parts([q], t, [p], wp)
