import math
from types import SimpleNamespace

import numpy as np
import pytest

from rtegrad.core.domain import DensityField, GridSpec, VelocityDomain
from rtegrad.core.errors import ConfigurationError
from rtegrad.core.objectives import (
    ControlWeight,
    InitialDistribution,
    Measurement,
    Objective,
    adjoint_final_condition,
    bump_indicator,
    eval_J1,
    eval_J2_mc,
    periodic_gaussian,
    weak_observable_mc,
)
from rtegrad.core.rng import particle_keys


def test_gaussian_masses(gauss_1d, gauss_2d):
    """Test the Gaussian initial data carry their closed-form mass"""
    assert gauss_1d.mass == pytest.approx(2.0, rel=1e-14)
    assert gauss_2d.mass == pytest.approx(2.0 * math.pi, rel=1e-14)


def test_uniform_and_point_masses(line):
    """Test masses of uniform and point-source initial data"""
    domain, velocity = line
    uniform = InitialDistribution("uniform", domain, velocity, a=0.125)
    assert uniform.mass == pytest.approx(1.0)
    point = InitialDistribution(
        "point", domain, velocity, a=3.0, x0=(0.3,), velocity0=0.7
    )
    assert point.mass == 3.0
    with pytest.raises(ConfigurationError):
        point.evaluate(np.zeros((1, 1)))


def test_unsupported_initial_shape(line):
    """Test unknown initial shapes and incomplete point sources are refused"""
    domain, velocity = line
    with pytest.raises(ConfigurationError):
        InitialDistribution("lorentzian", domain, velocity)
    with pytest.raises(ConfigurationError):
        InitialDistribution("point", domain, velocity, x0=())


def test_periodic_gaussian_matches_plain_profile_near_center(line):
    """Test the periodic Gaussian agrees with exp(-c x^2) near its center"""
    domain, _ = line
    x = np.array([[0.0], [0.5], [-1.0]])
    expected = np.exp(-4.0 * x[:, 0] ** 2)
    np.testing.assert_allclose(
        periodic_gaussian(x, np.zeros(1), 4.0, domain), expected, rtol=1e-12
    )
    # periodic in x
    np.testing.assert_allclose(
        periodic_gaussian(np.array([[-1.9]]), np.zeros(1), 4.0, domain),
        periodic_gaussian(np.array([[2.1]]), np.zeros(1), 4.0, domain),
    )


def test_gaussian_sample_moments(gauss_1d):
    """Test sampled Gaussian positions have mean 0 and variance 1/8"""
    x, v, theta = gauss_1d.sample(particle_keys(5, np.arange(200_000)))
    assert theta is None
    assert abs(x[:, 0].mean()) < 3 * math.sqrt(0.125) / math.sqrt(200_000)
    assert x[:, 0].var() == pytest.approx(0.125, abs=0.002)
    assert v.min() >= -1.0 and v.max() < 1.0


def test_point_sample_is_deterministic(square):
    """Test a point source samples the same phase point every time"""
    domain, velocity = square
    point = InitialDistribution(
        "point", domain, velocity, x0=(0.2, -0.4), velocity0=math.pi / 2
    )
    x, v, theta = point.sample(particle_keys(1, np.arange(5)))
    np.testing.assert_allclose(x, np.tile([0.2, -0.4], (5, 1)))
    np.testing.assert_allclose(v, np.tile([0.0, 1.0], (5, 1)), atol=1e-15)
    np.testing.assert_allclose(theta, math.pi / 2)


def test_measurement_unit_mass(measurement_1d, measurement_2d):
    """Test the shipped measurements have unit mass"""
    assert measurement_1d.mass == pytest.approx(1.0, abs=1e-9)
    assert measurement_2d.mass == pytest.approx(1.0, abs=1e-9)


def test_measurement_rejects_non_unit_mass(line):
    """Test a measurement without unit mass is refused"""
    domain, _ = line
    with pytest.raises(ConfigurationError):
        Measurement(domain=domain, a=1.0, c=5.0, center=(0.6,))


def test_eval_J1_matched_and_offset(grid_1d, measurement_1d):
    """Test J1 is zero for matched data and quadratic in an offset"""
    d = measurement_1d.on_grid(grid_1d)
    assert eval_J1(DensityField(grid_1d, d), measurement_1d) == 0.0
    shifted = DensityField(grid_1d, d + 0.1)
    assert eval_J1(shifted, measurement_1d) == pytest.approx(0.02, rel=1e-12)


def test_eval_J1_against_fine_quadrature(line, measurement_1d):
    """Test J1 of a zero density against the closed-form integral"""
    domain, _ = line
    grid = GridSpec(domain, (10_000,))
    value = eval_J1(DensityField(grid, np.zeros(grid.n_cells)), measurement_1d)
    assert value == pytest.approx(0.5 * math.sqrt(5.0 / (2.0 * math.pi)), rel=1e-9)
    assert value >= 0.0


def test_eval_J1_grid_mismatch(line, grid_1d):
    """Test J1 refuses a measurement tabulated on an unrelated grid"""
    domain, _ = line
    tabulated = Measurement.tabulated(
        GridSpec(domain, (8,)), np.full(8, 0.25), check_mass=True
    )
    with pytest.raises(ConfigurationError):
        eval_J1(DensityField(grid_1d, np.zeros(40)), tabulated)


def test_eval_J2_mc_normalization():
    """Test the J2 estimate of a unit payoff equals the mass weight"""
    v = np.linspace(-1.0, 1.0, 1000)[:, None]
    ensemble = SimpleNamespace(x=np.zeros((1000, 1)), v=v)
    one = ControlWeight(speed="const", value=1.0, indicator=False)
    assert eval_J2_mc(ensemble, one, 1.0) == 1.0
    assert eval_J2_mc(ensemble, one, 2.0) == 2.0


def test_eval_J2_mc_second_moment(gauss_1d):
    """Test the J2 estimate of v^2 approaches 1/3"""
    N = 1_000_000
    x, v, _ = gauss_1d.sample(particle_keys(8, np.arange(N)))
    r = ControlWeight(speed="v2", indicator=False)
    value = eval_J2_mc(SimpleNamespace(x=x, v=v), r, 1.0)
    assert abs(value - 1.0 / 3.0) < 3 * math.sqrt(4.0 / 45.0) / 1000


def test_weak_observable(gauss_1d):
    """Test the weak observable is the mass-weighted particle mean"""
    x = np.array([[0.0], [2.0 / 3.0]])
    ensemble = SimpleNamespace(x=x, v=np.zeros((2, 1)))
    value = weak_observable_mc(
        ensemble, lambda x, v: np.cos(np.pi * x[:, 0] / 2), gauss_1d.mass
    )
    assert value == pytest.approx(2.0 * (1.0 + 0.5) / 2)


def test_bump_indicator_bounds():
    """Test the smooth indicator stays in [0, 1] and saturates inside the box"""
    x = np.linspace(-2, 2, 401)[:, None]
    bump = bump_indicator(x, np.array([0.5]), np.array([0.25]), 40.0)
    assert bump.min() >= 0.0 and bump.max() <= 1.0
    assert bump[np.argmin(abs(x[:, 0] - 0.5))] > 0.999
    assert bump[0] < 1e-12


def test_control_weight_profiles():
    """Test the v^2 and v1^2 speed profiles"""
    v = np.array([[0.5], [-1.0]])
    x = np.zeros((2, 1))
    r = ControlWeight(speed="v2", indicator=False)
    np.testing.assert_array_equal(r.evaluate(x, v), [0.25, 1.0])
    r2 = ControlWeight(speed="v1sq", indicator=False)
    v2 = np.array([[0.6, 0.8]])
    assert r2.evaluate(np.zeros((1, 2)), v2)[0] == pytest.approx(0.36)
    with pytest.raises(ConfigurationError):
        ControlWeight(speed="v3")


def test_objective_requires_its_data(control_1d):
    """Test each objective needs its measurement or control block"""
    with pytest.raises(ConfigurationError):
        Objective("J1")
    with pytest.raises(ConfigurationError):
        Objective("J2")
    assert Objective("J2", control=control_1d).kind == "J2"


def test_final_condition_J1(line):
    """Test the J1 adjoint final condition is (d - rho) / |Omega| and constant in v"""
    domain, velocity = line
    grid = GridSpec(domain, (4,))
    d = Measurement.tabulated(grid, np.full(4, 0.5), check_mass=False)
    rho = DensityField(grid, np.full(4, 0.3))
    psi = adjoint_final_condition(Objective("J1", measurement=d), velocity, rho)
    x = np.array([[-1.5], [0.5]])
    np.testing.assert_allclose(psi(x, np.zeros((2, 1))), 0.1)
    # constant in v, bit for bit
    np.testing.assert_array_equal(
        psi(x, np.array([[0.9], [-0.3]])), psi(x, np.array([[-0.2], [0.1]]))
    )


def test_final_condition_J1_matched_is_zero(grid_1d, measurement_1d):
    """Test matched data give a zero J1 final condition"""
    rho = DensityField(grid_1d, measurement_1d.on_grid(grid_1d))
    psi = adjoint_final_condition(
        Objective("J1", measurement=measurement_1d), VelocityDomain("interval"), rho
    )
    x = grid_1d.centers
    assert np.all(psi(x, np.zeros_like(x)) == 0.0)


def test_final_condition_J1_needs_density(j1_1d):
    """Test the J1 final condition needs a final density"""
    with pytest.raises(ConfigurationError):
        adjoint_final_condition(j1_1d, VelocityDomain("interval"))


def test_final_condition_J2_constant():
    """Test the J2 final condition is minus the payoff"""
    r = ControlWeight(speed="const", value=0.7, indicator=False)
    objective = Objective("J2", control=r)
    psi = adjoint_final_condition(objective, VelocityDomain("interval"))
    out = psi(np.zeros((3, 1)), np.array([[0.1], [0.5], [-0.9]]))
    np.testing.assert_array_equal(out, -0.7)


def test_tabulated_measurement_averages_onto_coarser_grid(line):
    """Test a fine tabulated measurement is read on a coarser grid as block means"""
    domain, _ = line
    values = np.linspace(0.0, 0.5, 8)
    d = Measurement.tabulated(GridSpec(domain, (8,)), values, check_mass=False)
    coarse = d.on_grid(GridSpec(domain, (4,)))
    np.testing.assert_allclose(coarse, values.reshape(4, 2).mean(axis=1))
    np.testing.assert_array_equal(d.on_grid(GridSpec(domain, (8,))), values)
