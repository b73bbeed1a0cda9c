"""Initial data, measurements, control weights and the two objective functionals.

Gaussian profiles are periodized over the box D (summed over enough periodic
images that the truncation is below double precision), which is the density of a
whole-space Gaussian sample wrapped into D.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Tuple

import numpy as np
from loguru import logger
from scipy.special import expit

from rtegrad.core.domain import (
    CellField,
    DensityField,
    GridSpec,
    SpatialDomain,
    VelocityDomain,
    cell_index,
    velocity_from_uniform,
    wrap_periodic,
)
from rtegrad.core.errors import ConfigurationError
from rtegrad.core.rng import uniform_block

UNIT_MASS_TOL = 1e-6
_QUADRATURE_POINTS = {1: 4000, 2: 600}

PhaseFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


def periodic_gaussian(
    x: np.ndarray, center: np.ndarray, c: float, domain: SpatialDomain
) -> np.ndarray:
    """Sum over periodic images of exp(-c |x - center|^2), shape ``(N,)``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, domain.dim)
    out = np.ones(x.shape[0])
    for axis in range(domain.dim):
        length = domain.lengths[axis]
        images = max(1, math.ceil(math.sqrt(40.0 / c) / length))
        shifts = np.arange(-images, images + 1) * length
        diff = x[:, axis, None] - center[axis] + shifts[None, :]
        out *= np.exp(-c * diff**2).sum(axis=1)
    return out


def _midpoint_mass(fn: Callable[[np.ndarray], np.ndarray], domain: SpatialDomain):
    grid = GridSpec(domain, (_QUADRATURE_POINTS[domain.dim],) * domain.dim)
    return float(np.sum(fn(grid.centers)) * grid.cell_volume)


@dataclass(frozen=True, eq=False)
class InitialDistribution:
    """Initial phase-space density f_in(x, v), independent of v.

    ``gauss``: a * exp(-c |x - center|^2), sampled on the whole space and
    wrapped into D. ``uniform``: the constant a on D x Omega. ``point``: every
    particle starts at (x0, velocity0) with total mass ``a``; velocity0 is v on
    the interval and the angle on the circle.
    """

    kind: Literal["gauss", "uniform", "point"]
    domain: SpatialDomain
    velocity: VelocityDomain
    a: float = 1.0
    c: float = 1.0
    center: Tuple[float, ...] = ()
    x0: Tuple[float, ...] = ()
    velocity0: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gauss", "uniform", "point"):
            raise ConfigurationError(
                f"unsupported initial distribution {self.kind!r}", key="initial.kind"
            )
        if not (math.isfinite(self.a) and self.a > 0):
            raise ConfigurationError(
                f"amplitude must be positive, got {self.a}", key="initial.a"
            )
        if self.kind == "gauss" and not (math.isfinite(self.c) and self.c > 0):
            raise ConfigurationError(
                f"width parameter must be positive, got {self.c}", key="initial.c"
            )
        if not self.center:
            object.__setattr__(self, "center", (0.0,) * self.domain.dim)
        if len(self.center) != self.domain.dim:
            raise ConfigurationError(
                f"center needs {self.domain.dim} coordinates", key="initial.center"
            )
        if self.kind == "point" and len(self.x0) != self.domain.dim:
            raise ConfigurationError(
                f"x0 needs {self.domain.dim} coordinates", key="initial.x0"
            )
        if (
            self.kind == "point"
            and self.velocity.kind == "interval"
            and abs(self.velocity0) > 1
        ):
            raise ConfigurationError(
                "velocity0 must lie in [-1, 1]", key="initial.velocity0"
            )

    @property
    def mass(self) -> float:
        """Total mass rho_tot of f_in over D x Omega."""
        omega = self.velocity.measure
        if self.kind == "gauss":
            return self.a * (math.pi / self.c) ** (self.domain.dim / 2) * omega
        if self.kind == "uniform":
            return self.a * self.domain.volume * omega
        return self.a

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Point values of f_in at positions ``x`` (any velocity)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.domain.dim)
        if self.kind == "gauss":
            return self.a * periodic_gaussian(
                x, np.asarray(self.center), self.c, self.domain
            )
        if self.kind == "uniform":
            return np.full(x.shape[0], self.a)
        raise ConfigurationError(
            "point initial data has no pointwise density", key="initial.kind"
        )

    def sample(self, keys: np.ndarray):
        """Initial states of the particles owning ``keys``.

        Uses draws 0 and 1 for the position and draw 2 for the velocity.
        Returns ``(x, v, theta)``.
        """
        n = keys.shape[0]
        dim = self.domain.dim
        u0 = uniform_block(keys, 0)
        u1 = uniform_block(keys, 1)
        if self.kind == "gauss":
            radius = np.sqrt(-2.0 * np.log1p(-u0))
            angle = 2.0 * math.pi * u1
            normals = np.stack([radius * np.cos(angle), radius * np.sin(angle)], 1)
            std = 1.0 / math.sqrt(2.0 * self.c)
            x = np.asarray(self.center) + std * normals[:, :dim]
            x = wrap_periodic(x, self.domain)
        elif self.kind == "uniform":
            u = np.stack([u0, u1], axis=1)[:, :dim]
            x = self.domain.lower + self.domain.lengths * u
        else:
            x = wrap_periodic(
                np.tile(np.asarray(self.x0, dtype=np.float64), (n, 1)), self.domain
            )
        if self.kind == "point":
            if self.velocity.kind == "interval":
                return x, np.full((n, 1), self.velocity0), None
            theta = np.full(n, self.velocity0)
            v = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
            return x, v, theta
        v, theta = velocity_from_uniform(uniform_block(keys, 2), self.velocity)
        return x, v, theta


@dataclass(frozen=True, eq=False)
class Measurement:
    """Measured spatial density d(x) with unit mass over D."""

    domain: SpatialDomain
    a: float = 1.0
    c: float = 1.0
    center: Tuple[float, ...] = ()
    grid: Optional[GridSpec] = None
    values: Optional[np.ndarray] = field(default=None, repr=False)
    check_mass: bool = True

    def __post_init__(self):
        if not self.center:
            object.__setattr__(self, "center", (0.0,) * self.domain.dim)
        if self.values is not None:
            if self.grid is None:
                raise ConfigurationError(
                    "tabulated measurement needs a grid", key="measurement"
                )
            vals = np.array(self.values, dtype=np.float64).ravel()
            if vals.size != self.grid.n_cells:
                raise ConfigurationError(
                    f"expected {self.grid.n_cells} values, got {vals.size}",
                    key="measurement.values",
                )
            vals.flags.writeable = False
            object.__setattr__(self, "values", vals)
        elif not (math.isfinite(self.c) and self.c > 0):
            raise ConfigurationError(
                f"width parameter must be positive, got {self.c}", key="measurement.c"
            )
        if self.check_mass:
            mass = self.mass
            if abs(mass - 1.0) > UNIT_MASS_TOL:
                logger.warning(f"Measurement mass {mass:.9f} is not 1")
                raise ConfigurationError(
                    f"measurement must have unit mass, got {mass:.9f}",
                    key="measurement",
                )

    @classmethod
    def tabulated(
        cls, grid: GridSpec, values, check_mass: bool = True
    ) -> "Measurement":
        return cls(domain=grid.domain, grid=grid, values=values, check_mass=check_mass)

    @property
    def mass(self) -> float:
        if self.values is not None:
            return float(self.values.sum() * self.grid.cell_volume)
        return _midpoint_mass(self.evaluate, self.domain)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.domain.dim)
        if self.values is not None:
            return self.values[cell_index(wrap_periodic(x, self.domain), self.grid)]
        return self.a * periodic_gaussian(
            x, np.asarray(self.center), self.c, self.domain
        )

    def on_grid(self, grid: GridSpec) -> np.ndarray:
        """d sampled at the cell centers of ``grid``.

        A tabulated d is averaged onto ``grid`` when its cells refine it.
        """
        if self.values is not None:
            if self.grid.same_as(grid):
                return np.array(self.values)
            try:
                return np.array(CellField(self.grid, self.values).coarsen(grid).values)
            except ConfigurationError:
                raise ConfigurationError(
                    "tabulated measurement lives on a different grid",
                    key="measurement",
                ) from None
        return self.evaluate(grid.centers)


def bump_indicator(
    x: np.ndarray,
    center: np.ndarray,
    half_width: np.ndarray,
    sharpness: float,
) -> np.ndarray:
    """Smooth indicator of the box |x - center| < half_width, per axis a
    product of a rising and a falling logistic ramp."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, len(center))
    rel = x - center
    ramps = expit(sharpness * (rel + half_width)) * expit(
        -sharpness * (rel - half_width)
    )
    return np.prod(ramps, axis=1)


@dataclass(frozen=True)
class ControlWeight:
    """Terminal weight r(x, v) = s(v) I_E(x).

    ``speed`` is ``v2`` (s = v^2 on the interval), ``v1sq`` (s = |v_1|^2 on the
    circle) or ``const`` (s = value). With ``indicator`` off, I_E = 1.
    """

    speed: Literal["v2", "v1sq", "const"] = "v2"
    value: float = 1.0
    indicator: bool = True
    center: Tuple[float, ...] = (0.0,)
    half_width: Tuple[float, ...] = (0.25,)
    sharpness: float = 40.0

    def __post_init__(self):
        if self.speed not in ("v2", "v1sq", "const"):
            raise ConfigurationError(
                f"unknown speed profile {self.speed!r}", key="control.speed"
            )
        if self.indicator:
            if len(self.center) != len(self.half_width):
                raise ConfigurationError(
                    "center and half_width need the same length",
                    key="control.half_width",
                )
            if any(h <= 0 for h in self.half_width) or self.sharpness <= 0:
                raise ConfigurationError(
                    "half widths and sharpness must be positive", key="control"
                )

    def speed_factor(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        v = v.reshape(v.shape[0], -1) if v.ndim else v.reshape(1, 1)
        if self.speed == "const":
            return np.full(v.shape[0], float(self.value))
        return v[:, 0] ** 2

    def spatial_factor(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not self.indicator:
            return np.ones(x.shape[0] if x.ndim > 1 else x.size)
        return bump_indicator(
            x,
            np.asarray(self.center, dtype=np.float64),
            np.asarray(self.half_width, dtype=np.float64),
            self.sharpness,
        )

    def evaluate(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.speed_factor(v) * self.spatial_factor(x)


@dataclass(frozen=True)
class Objective:
    """J1 (density matching against ``measurement``) or J2 (terminal ``control``)."""

    kind: Literal["J1", "J2"]
    measurement: Optional[Measurement] = None
    control: Optional[ControlWeight] = None

    def __post_init__(self):
        if self.kind == "J1" and self.measurement is None:
            raise ConfigurationError("J1 needs a measurement", key="measurement")
        if self.kind == "J2" and self.control is None:
            raise ConfigurationError("J2 needs a control weight", key="control")
        if self.kind not in ("J1", "J2"):
            raise ConfigurationError(
                f"unknown objective {self.kind!r}", key="objective"
            )


def eval_J1(rho_T: DensityField, d: Measurement) -> float:
    """Midpoint value of 1/2 * integral of |rho_T - d|^2 over D."""
    diff = rho_T.values - d.on_grid(rho_T.grid)
    return float(0.5 * np.sum(diff**2) * rho_T.grid.cell_volume)


def weak_observable_mc(ensemble, phi: PhaseFunction, mass_weight: float) -> float:
    """mass_weight * (1/N) * sum_n phi(x_n, v_n)."""
    values = np.asarray(phi(ensemble.x, ensemble.v), dtype=np.float64)
    return float(mass_weight * np.mean(values))


def eval_J2_mc(ensemble, r: ControlWeight, mass_weight: float) -> float:
    return weak_observable_mc(ensemble, r.evaluate, mass_weight)


def adjoint_final_condition(
    objective: Objective,
    velocity: VelocityDomain,
    rho_T: Optional[DensityField] = None,
) -> PhaseFunction:
    """Final condition psi(x, v) of the adjoint variable.

    J1: (d(x) - rho_T(cell of x)) / |Omega|, constant in v.
    J2: -r(x, v).
    """
    if objective.kind == "J2":
        control = objective.control
        return lambda x, v: -control.evaluate(x, v)
    if rho_T is None:
        raise ConfigurationError(
            "J1 adjoint needs a density estimate at the final time", key="objective"
        )
    d = objective.measurement
    omega = velocity.measure
    d_cells = d.on_grid(rho_T.grid)
    psi_cells = (d_cells - rho_T.values) / omega

    def psi(x, v):
        return psi_cells[cell_index(np.asarray(x), rho_T.grid)]

    return psi
