"""Geometry, fields and phase-space primitives shared by all solvers.

Positions are stored as ``(N, dim)`` float64 arrays and velocities as
``(N, dim)`` arrays; on the unit circle the angle is kept alongside the cached
``(cos, sin)`` pair so the velocity norm is exact.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Tuple, Union

import numpy as np

from rtegrad.core.errors import ConfigurationError, NumericalGuardError

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class SpatialDomain:
    """Periodic box D = [a1, b1] x ... with dim 1 or 2."""

    bounds: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        if len(self.bounds) not in (1, 2):
            raise ConfigurationError(
                f"dim must be 1 or 2, got {len(self.bounds)}", key="geometry.bounds"
            )
        for lo, hi in self.bounds:
            if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
                raise ConfigurationError(
                    f"invalid interval [{lo}, {hi}]", key="geometry.bounds"
                )

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.bounds], dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.bounds], dtype=np.float64)

    @property
    def lengths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))


@dataclass(frozen=True)
class VelocityDomain:
    """Velocity space: the interval [-1, 1] or the unit circle."""

    kind: Literal["interval", "circle"]

    def __post_init__(self):
        if self.kind not in ("interval", "circle"):
            raise ConfigurationError(
                f"unknown velocity domain {self.kind!r}", key="geometry.velocity"
            )

    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def measure(self) -> float:
        return 2.0 if self.kind == "interval" else 2.0 * math.pi


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell grid tiling a SpatialDomain; cells are numbered row-major."""

    domain: SpatialDomain
    cells: Tuple[int, ...]

    def __post_init__(self):
        if len(self.cells) != self.domain.dim:
            raise ConfigurationError(
                f"expected {self.domain.dim} cell counts, got {len(self.cells)}",
                key="grids.cells",
            )
        if any(int(n) < 1 for n in self.cells):
            raise ConfigurationError(
                f"cell counts must be positive, got {self.cells}", key="grids.cells"
            )

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(int(n) for n in self.cells)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def widths(self) -> np.ndarray:
        return self.domain.lengths / np.array(self.shape, dtype=np.float64)

    @property
    def cell_volume(self) -> float:
        """Measure |Q| of one cell."""
        return float(np.prod(self.widths))

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.shape[axis]
        return self.domain.lower[axis] + (np.arange(n) + 0.5) * self.widths[axis]

    @property
    def centers(self) -> np.ndarray:
        """Cell centers as an ``(n_cells, dim)`` array in row-major cell order."""
        axes = [self.axis_centers(a) for a in range(self.domain.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def same_as(self, other: "GridSpec") -> bool:
        return self.domain == other.domain and self.shape == other.shape


def wrap_periodic(x: ArrayLike, domain: SpatialDomain) -> ArrayLike:
    """Map positions into [a, b) per axis; points already inside are unchanged."""
    scalar = np.ndim(x) == 0
    arr = np.asarray(x, dtype=np.float64)
    if scalar:
        arr = arr.reshape(1, 1)
    lo, hi, length = domain.lower, domain.upper, domain.lengths
    inside = (arr >= lo) & (arr < hi)
    wrapped = lo + np.mod(arr - lo, length)
    wrapped = np.where(wrapped >= hi, lo, wrapped)
    out = np.where(inside, arr, wrapped)
    if scalar:
        return float(out[0, 0])
    return out


def cell_index(x: ArrayLike, grid: GridSpec) -> Union[int, np.ndarray]:
    """Row-major cell id of wrapped positions (left-closed, right-open cells)."""
    scalar = np.ndim(x) == 0
    arr = np.asarray(x, dtype=np.float64)
    if scalar:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, grid.domain.dim)
    shape = np.array(grid.shape)
    idx = np.floor((arr - grid.domain.lower) / grid.widths).astype(np.int64)
    idx = np.clip(idx, 0, shape - 1)
    flat = np.ravel_multi_index(tuple(idx.T), grid.shape)
    if scalar:
        return int(flat[0])
    return flat


@dataclass(frozen=True, eq=False)
class SigmaField:
    """Scattering coefficient sigma(x) >= 0, analytic or piecewise constant."""

    domain: SpatialDomain
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = None
    grid: Optional[GridSpec] = None
    values: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if (self.fn is None) == (self.values is None):
            raise ConfigurationError(
                "sigma needs exactly one of an analytic form or cell values",
                key="sigma",
            )
        if self.values is not None:
            if self.grid is None:
                raise ConfigurationError("piecewise sigma needs a grid", key="sigma")
            vals = np.array(self.values, dtype=np.float64).ravel()
            if vals.size != self.grid.n_cells:
                raise ConfigurationError(
                    f"expected {self.grid.n_cells} sigma values, got {vals.size}",
                    key="sigma.values",
                )
            if not np.all(np.isfinite(vals)) or np.any(vals < 0):
                raise ConfigurationError(
                    "sigma values must be finite and nonnegative", key="sigma.values"
                )
            vals.flags.writeable = False
            object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value: float, domain: SpatialDomain) -> "SigmaField":
        if not math.isfinite(value) or value < 0:
            raise ConfigurationError(
                f"sigma must be finite and nonnegative, got {value}",
                key="sigma.value",
            )
        grid = GridSpec(domain, (1,) * domain.dim)
        return cls(domain=domain, grid=grid, values=np.full(1, float(value)))

    @classmethod
    def analytic(
        cls, fn: Callable[[np.ndarray], np.ndarray], domain: SpatialDomain
    ) -> "SigmaField":
        return cls(domain=domain, fn=fn)

    @classmethod
    def piecewise(cls, grid: GridSpec, values) -> "SigmaField":
        return cls(domain=grid.domain, grid=grid, values=np.asarray(values))

    def on_grid(self, grid: GridSpec) -> np.ndarray:
        """Sigma sampled at the centers of ``grid``."""
        return sigma_eval(self, grid.centers)


def sigma_eval(sigma: SigmaField, x: ArrayLike) -> ArrayLike:
    """Evaluate sigma at (wrapped) positions."""
    scalar = np.ndim(x) == 0
    pos = np.asarray(x, dtype=np.float64).reshape(-1, sigma.domain.dim)
    pos = wrap_periodic(pos, sigma.domain)
    if sigma.values is not None:
        out = sigma.values[cell_index(pos, sigma.grid)]
    else:
        out = np.asarray(sigma.fn(pos), dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(out)) or np.any(out < 0):
            raise NumericalGuardError("analytic sigma must be finite and non-negative")
    if scalar:
        return float(out[0])
    return out


@dataclass
class PhaseParticle:
    """One photon sample (x, v); ``theta`` is set on the unit circle."""

    x: np.ndarray
    v: np.ndarray
    theta: Optional[float] = None


def velocity_from_uniform(u: ArrayLike, velocity: VelocityDomain):
    """Map uniforms in [0, 1) to velocities uniform on the velocity domain.

    Returns ``(v, theta)`` where ``v`` has shape ``(N, velocity.dim)`` and
    ``theta`` is ``None`` on the interval.
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if velocity.kind == "interval":
        return (2.0 * u - 1.0).reshape(-1, 1), None
    theta = -math.pi + 2.0 * math.pi * u
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1), theta


def uniform_velocity_sample(
    stream, velocity: VelocityDomain
) -> Tuple[np.ndarray, Optional[float]]:
    """Draw one velocity uniformly from ``stream``; returns ``(v, theta)``."""
    v, theta = velocity_from_uniform(stream.uniform01(), velocity)
    return v[0], None if theta is None else float(theta[0])


@dataclass(frozen=True, eq=False)
class CellField:
    """One finite 64-bit value per grid cell."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)
    mass_weight: float = 1.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).ravel()
        if vals.size != self.grid.n_cells:
            raise ConfigurationError(
                f"expected {self.grid.n_cells} values, got {vals.size}"
            )
        if not np.all(np.isfinite(vals)):
            raise NumericalGuardError("cell field contains non-finite values")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def lookup(self, x: np.ndarray) -> np.ndarray:
        """Piecewise-constant read-back at wrapped positions."""
        return self.values[cell_index(x, self.grid)]

    def coarsen(self, grid: GridSpec) -> "CellField":
        """Block means onto ``grid``, whose cells must be unions of ours."""
        if self.grid.same_as(grid):
            return self
        fine, coarse = self.grid.shape, grid.shape
        if grid.domain != self.grid.domain or any(f % c for f, c in zip(fine, coarse)):
            raise ConfigurationError(
                f"cannot average {fine} cells onto {coarse}",
                key="grids.gradient_cells",
            )
        blocks = []
        for f, c in zip(fine, coarse):
            blocks.extend([c, f // c])
        block_axes = tuple(range(1, 2 * len(fine), 2))
        values = self.values.reshape(blocks).mean(axis=block_axes)
        return type(self)(grid=grid, values=values, mass_weight=self.mass_weight)


class DensityField(CellField):
    """Histogram density estimate on a grid."""


class GradientField(CellField):
    """Cell-centered approximation of dJ/dsigma."""
