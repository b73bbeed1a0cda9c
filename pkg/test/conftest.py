"""Pytest configuration and fixtures for the rtegrad test suite.

Small geometries shared by the solver tests live here; statistical runs at the
published problem sizes are marked ``slow`` and deselected by default.
"""

import math

import pytest

from rtegrad.core.domain import GridSpec, SigmaField, SpatialDomain, VelocityDomain
from rtegrad.core.objectives import (
    ControlWeight,
    InitialDistribution,
    Measurement,
    Objective,
)
from rtegrad.solvers.forward_mc import SimulationConfig


def pytest_configure(config):
    """Register the marker for long-running statistical tests."""
    config.addinivalue_line(
        "markers",
        "slow: statistical checks at full problem size (deselected by default)",
    )


@pytest.fixture
def line():
    """The periodic interval [-2, 2] with velocities in [-1, 1]."""
    return SpatialDomain(((-2.0, 2.0),)), VelocityDomain("interval")


@pytest.fixture
def square():
    """The periodic square [-1, 1]^2 with velocities on the unit circle."""
    return SpatialDomain(((-1.0, 1.0), (-1.0, 1.0))), VelocityDomain("circle")


@pytest.fixture
def gauss_1d(line):
    domain, velocity = line
    return InitialDistribution(
        "gauss", domain, velocity, a=2.0 / math.sqrt(math.pi), c=4.0
    )


@pytest.fixture
def gauss_2d(square):
    domain, velocity = square
    return InitialDistribution("gauss", domain, velocity, a=4.0 / math.pi, c=4.0)


@pytest.fixture
def measurement_1d(line):
    domain, _ = line
    return Measurement(
        domain=domain, a=math.sqrt(5.0) / math.sqrt(math.pi), c=5.0, center=(0.6,)
    )


@pytest.fixture
def measurement_2d(square):
    domain, _ = square
    return Measurement(domain=domain, a=5.0 / math.pi, c=5.0, center=(0.3, -0.3))


@pytest.fixture
def control_1d():
    return ControlWeight(speed="v2", center=(0.5,), half_width=(0.25,), sharpness=40.0)


@pytest.fixture
def j1_1d(measurement_1d):
    return Objective("J1", measurement=measurement_1d)


@pytest.fixture
def j2_1d(control_1d):
    return Objective("J2", control=control_1d)


@pytest.fixture
def small_sim(line, gauss_1d):
    """Factory for short 1D particle runs with sigma = 2."""
    domain, velocity = line

    def make(N=2000, M=20, dt=0.01, seed=7, sigma=2.0, threads=1, chunk_size=512):
        return SimulationConfig(
            domain=domain,
            velocity=velocity,
            sigma=SigmaField.constant(sigma, domain),
            f_in=gauss_1d,
            N=N,
            dt=dt,
            M=M,
            seed=seed,
            threads=threads,
            chunk_size=chunk_size,
        )

    return make


@pytest.fixture
def grid_1d(line):
    domain, _ = line
    return GridSpec(domain, (40,))
