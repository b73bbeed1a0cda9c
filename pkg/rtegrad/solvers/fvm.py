"""Deterministic upwind finite-volume reference solver.

The phase-space density is stored as ``f[*cells, j]`` on the spatial grid and
``N_v`` velocity cells. One explicit step is

    f^{m+1} = f^m - sum_a T_a f^m + sigma dt (P f^m - f^m)

with first-order upwinding T_a along each spatial axis (periodic) and
P f = |Omega|^-1 dv sum_j f_j the midpoint velocity average. The adjoint sweep
applies the transpose of that step, so the gradient it produces is the exact
derivative of the discrete objective.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from loguru import logger

from rtegrad.core.domain import (
    DensityField,
    GradientField,
    GridSpec,
    SigmaField,
    VelocityDomain,
)
from rtegrad.core.errors import ConfigurationError, NumericalGuardError
from rtegrad.core.objectives import InitialDistribution, Objective

CFL_TOL = 1e-12
# larger forward histories are swept with checkpoints instead of being stored
MAX_HISTORY_VALUES = 50_000_000

Courant = List[Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class FvmGrid:
    """Spatial grid, velocity cells and time stepping of a finite-volume run."""

    spatial: GridSpec
    velocity: VelocityDomain
    nv: int
    dt: float
    M: int

    def __post_init__(self):
        if self.nv < 1:
            raise ConfigurationError(
                f"velocity cells must be positive, got {self.nv}",
                key="grids.velocity_cells",
            )
        if not (math.isfinite(self.dt) and self.dt > 0) or self.M < 0:
            raise ConfigurationError("time step must be positive", key="time.dt")
        if self.spatial.domain.dim != self.velocity.dim:
            raise ConfigurationError(
                "velocity domain does not match the spatial dimension",
                key="geometry.velocity",
            )

    @property
    def dv(self) -> float:
        return self.velocity.measure / self.nv

    @property
    def nodes(self) -> np.ndarray:
        """Velocity cell centers: v_j on the interval, theta_j on the circle."""
        j = np.arange(1, self.nv + 1)
        if self.velocity.kind == "interval":
            return -1.0 + (j - 0.5) * self.dv
        return -math.pi + (j - 0.5) * self.dv

    @property
    def directions(self) -> np.ndarray:
        """Velocity vectors at the nodes, shape ``(nv, dim)``."""
        if self.velocity.kind == "interval":
            return self.nodes.reshape(-1, 1)
        theta = self.nodes
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.spatial.shape + (self.nv,)

    def cfl_number(self) -> float:
        widths = self.spatial.widths
        if self.velocity.kind == "interval":
            return float(self.dt * np.max(np.abs(self.directions)) / widths[0])
        return float(math.sqrt(2.0) * self.dt / np.min(widths))

    def check_cfl(self) -> None:
        cfl = self.cfl_number()
        if cfl > 1.0 + CFL_TOL:
            logger.warning(f"CFL number {cfl:.6g} exceeds 1")
            raise NumericalGuardError(
                f"CFL condition violated: {cfl:.6g} > 1", key="time.dt"
            )

    def refined(self, factor: int, nv: Optional[int] = None) -> "FvmGrid":
        """Spatial cells and time steps multiplied by ``factor`` at fixed T."""
        if factor < 1:
            raise ConfigurationError(
                f"refinement factor must be positive, got {factor}",
                key="reference.refine",
            )
        spatial = GridSpec(
            self.spatial.domain, tuple(n * factor for n in self.spatial.shape)
        )
        return FvmGrid(
            spatial, self.velocity, nv or self.nv, self.dt / factor, self.M * factor
        )

    def same_as(self, other: "FvmGrid") -> bool:
        return (
            self.spatial.same_as(other.spatial)
            and self.velocity == other.velocity
            and self.nv == other.nv
            and self.dt == other.dt
            and self.M == other.M
        )


@dataclass(eq=False)
class FvmState:
    """Stored time levels ``history[m]`` for m = 0..M of a forward or adjoint sweep."""

    grid: FvmGrid
    history: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def terminal(self) -> np.ndarray:
        return self.history[-1]

    def mass(self, m: int = -1) -> float:
        """Discrete mass sum f |Q| dv at level ``m``."""
        return float(
            np.sum(self.history[m]) * self.grid.spatial.cell_volume * self.grid.dv
        )


def courant_numbers(grid: FvmGrid) -> Courant:
    """Per spatial axis, ``(dt/dx v^+, dt/dx v^-)`` over the velocity nodes."""
    directions = grid.directions
    out = []
    for axis, width in enumerate(grid.spatial.widths):
        c = grid.dt / width * directions[:, axis]
        out.append((np.maximum(c, 0.0), np.minimum(c, 0.0)))
    return out


def upwind_apply(f: np.ndarray, courant: Courant) -> np.ndarray:
    """Upwind transport increment sum_a T_a f (periodic)."""
    out = np.zeros_like(f)
    for axis, (plus, minus) in enumerate(courant):
        out += plus * (f - np.roll(f, 1, axis=axis))
        out += minus * (np.roll(f, -1, axis=axis) - f)
    return out


def upwind_apply_transpose(g: np.ndarray, courant: Courant) -> np.ndarray:
    """Transpose of :func:`upwind_apply`."""
    out = np.zeros_like(g)
    for axis, (plus, minus) in enumerate(courant):
        out += plus * (g - np.roll(g, -1, axis=axis))
        out += minus * (np.roll(g, 1, axis=axis) - g)
    return out


def velocity_average(f: np.ndarray, grid: FvmGrid) -> np.ndarray:
    """P f = |Omega|^-1 <f>_v, kept as a trailing axis of length one."""
    return grid.dv / grid.velocity.measure * np.sum(f, axis=-1, keepdims=True)


def _sigma_cells(sigma: SigmaField, grid: FvmGrid) -> np.ndarray:
    return sigma.on_grid(grid.spatial).reshape(grid.spatial.shape + (1,))


def _forward_step(f, grid: FvmGrid, courant: Courant, sigma_dt) -> np.ndarray:
    return f - upwind_apply(f, courant) + sigma_dt * (velocity_average(f, grid) - f)


def _adjoint_step(g, grid: FvmGrid, courant: Courant, sigma_dt) -> np.ndarray:
    return (
        g
        - upwind_apply_transpose(g, courant)
        + sigma_dt * (velocity_average(g, grid) - g)
    )


def initial_state(f_in: InitialDistribution, grid: FvmGrid) -> np.ndarray:
    """f^0_ij = f_in(x_i), constant over the velocity cells."""
    values = f_in.evaluate(grid.spatial.centers).reshape(grid.spatial.shape + (1,))
    return np.broadcast_to(values, grid.shape).copy()


def fvm_forward(
    grid: FvmGrid,
    sigma: SigmaField,
    f_in: Optional[InitialDistribution] = None,
    f0: Optional[np.ndarray] = None,
    keep_history: bool = True,
) -> FvmState:
    """Explicit upwind sweep from f_in (or an explicit ``f0``) over M steps.

    With ``keep_history=False`` only the terminal level is kept.
    """
    grid.check_cfl()
    if f0 is None:
        if f_in is None:
            raise ConfigurationError("forward sweep needs initial data", key="initial")
        f0 = initial_state(f_in, grid)
    f = np.array(f0, dtype=np.float64).reshape(grid.shape)
    courant = courant_numbers(grid)
    sigma_dt = _sigma_cells(sigma, grid) * grid.dt
    history = np.empty((grid.M + 1 if keep_history else 1,) + grid.shape)
    history[0] = f
    for m in range(grid.M):
        f = _forward_step(f, grid, courant, sigma_dt)
        if keep_history:
            history[m + 1] = f
    history[-1] = f
    if not np.all(np.isfinite(f)):
        raise NumericalGuardError("forward sweep produced non-finite values")
    logger.debug(f"FVM forward: grid={grid.shape} M={grid.M}")
    return FvmState(grid=grid, history=history)


def final_condition_on_grid(state: FvmState, objective: Objective) -> np.ndarray:
    """Adjoint final condition on the grid nodes.

    J1: |Omega|^-1 (d_i - |Omega|^-1 <f^M>_i), constant in v. J2: -r(x_i, v_j).
    """
    grid = state.grid
    omega = grid.velocity.measure
    if objective.kind == "J1":
        d = objective.measurement.on_grid(grid.spatial).reshape(
            grid.spatial.shape + (1,)
        )
        rho = velocity_average(state.terminal, grid)
        return np.broadcast_to((d - rho) / omega, grid.shape).copy()
    x = np.repeat(grid.spatial.centers, grid.nv, axis=0)
    v = np.tile(grid.directions, (grid.spatial.n_cells, 1))
    return -objective.control.evaluate(x, v).reshape(grid.shape)


def fvm_adjoint(state: FvmState, psi: np.ndarray, sigma: SigmaField) -> FvmState:
    """Backward sweep g^m = A^T g^{m+1} from g^M = psi."""
    if state.history is None or state.history.shape[0] != state.grid.M + 1:
        raise ConfigurationError("adjoint sweep needs the forward history")
    grid = state.grid
    courant = courant_numbers(grid)
    sigma_dt = _sigma_cells(sigma, grid) * grid.dt
    g = np.array(psi, dtype=np.float64).reshape(grid.shape)
    history = np.empty((grid.M + 1,) + grid.shape)
    history[grid.M] = g
    for m in range(grid.M - 1, -1, -1):
        g = _adjoint_step(g, grid, courant, sigma_dt)
        history[m] = g
    if not np.all(np.isfinite(g)):
        raise NumericalGuardError("adjoint sweep produced non-finite values")
    return FvmState(grid=grid, history=history)


def fvm_gradient(forward: FvmState, adjoint: FvmState) -> GradientField:
    """Cell values dv dt sum_{m<M} sum_j f^m (g^{m+1} - P g^{m+1})."""
    if not forward.grid.same_as(adjoint.grid):
        raise ConfigurationError("forward and adjoint histories use different grids")
    grid = forward.grid
    g_next = adjoint.history[1:]
    f_prev = forward.history[:-1]
    centered = g_next - velocity_average(g_next, grid)
    values = grid.dv * grid.dt * np.sum(f_prev * centered, axis=(0, -1))
    return GradientField(grid=grid.spatial, values=values.ravel())


def fvm_density(state: FvmState, m: int = -1) -> DensityField:
    """rho = |Omega|^-1 <f>_v at level ``m``."""
    grid = state.grid
    rho = velocity_average(state.history[m], grid)
    return DensityField(grid=grid.spatial, values=rho.ravel())


def fvm_objective(state: FvmState, objective: Objective) -> float:
    """Discrete J1 = |Q|/2 sum (d_i - rho_i)^2 or J2 = |Q| dv sum r f."""
    grid = state.grid
    cell = grid.spatial.cell_volume
    if objective.kind == "J1":
        rho = fvm_density(state).values
        d = objective.measurement.on_grid(grid.spatial)
        return float(0.5 * cell * np.sum((d - rho) ** 2))
    r = -final_condition_on_grid(state, objective)
    return float(cell * grid.dv * np.sum(r * state.terminal))


def fvm_weak_observable(
    state: FvmState, phi: Callable[[np.ndarray, np.ndarray], np.ndarray], m: int = -1
) -> float:
    """|Q| dv sum_ij phi(x_i, v_j) f_ij at level ``m``."""
    grid = state.grid
    x = np.repeat(grid.spatial.centers, grid.nv, axis=0)
    v = np.tile(grid.directions, (grid.spatial.n_cells, 1))
    weights = np.asarray(phi(x, v), dtype=np.float64).reshape(grid.shape)
    total = np.sum(weights * state.history[m])
    return float(grid.spatial.cell_volume * grid.dv * total)


def fvm_objective_of_sigma(
    grid: FvmGrid, sigma: SigmaField, f_in: InitialDistribution, objective: Objective
) -> float:
    state = fvm_forward(grid, sigma, f_in, keep_history=False)
    return fvm_objective(state, objective)


def checkpointed_gradient(
    grid: FvmGrid,
    sigma: SigmaField,
    f_in: InitialDistribution,
    objective: Objective,
    every: int,
):
    """Same result as the stored-history sweep, keeping every ``every``-th level.

    The forward levels between two checkpoints are recomputed while the adjoint
    sweep passes through them, so memory is O(M / every + every) levels.
    """
    if every < 1:
        raise ConfigurationError(
            f"checkpoint interval must be positive, got {every}",
            key="reference.checkpoint",
        )
    grid.check_cfl()
    courant = courant_numbers(grid)
    sigma_dt = _sigma_cells(sigma, grid) * grid.dt
    f = initial_state(f_in, grid)
    saved = {0: f}
    for m in range(grid.M):
        f = _forward_step(f, grid, courant, sigma_dt)
        if (m + 1) % every == 0 and m + 1 < grid.M:
            saved[m + 1] = f
    if not np.all(np.isfinite(f)):
        raise NumericalGuardError("forward sweep produced non-finite values")
    terminal = FvmState(grid=grid, history=f[np.newaxis])
    g = final_condition_on_grid(terminal, objective)
    total = np.zeros(grid.shape)
    for start in sorted(saved, reverse=True):
        stop = min(start + every, grid.M)
        segment = [saved[start]]
        for _ in range(start, stop - 1):
            segment.append(_forward_step(segment[-1], grid, courant, sigma_dt))
        # g holds g^{m+1} on entry
        for m in range(stop - 1, start - 1, -1):
            total += segment[m - start] * (g - velocity_average(g, grid))
            g = _adjoint_step(g, grid, courant, sigma_dt)
    if not np.all(np.isfinite(g)):
        raise NumericalGuardError("adjoint sweep produced non-finite values")
    values = grid.dv * grid.dt * np.sum(total, axis=-1)
    gradient = GradientField(grid=grid.spatial, values=values.ravel())
    return gradient, fvm_objective(terminal, objective)


def solve_fvm_gradient(
    grid: FvmGrid,
    sigma: SigmaField,
    f_in: InitialDistribution,
    objective: Objective,
    checkpoint: Optional[int] = None,
):
    """Forward sweep, adjoint sweep and gradient; returns ``(gradient, J)``.

    Histories above MAX_HISTORY_VALUES switch to checkpointing automatically.
    """
    logger.info(
        f"FVM gradient: objective={objective.kind} grid={grid.shape} M={grid.M}"
    )
    levels = (grid.M + 1) * math.prod(grid.shape)
    if checkpoint is None and levels > MAX_HISTORY_VALUES:
        checkpoint = math.isqrt(grid.M) + 1
    if checkpoint is not None:
        logger.debug(f"Checkpointing every {checkpoint} steps")
        return checkpointed_gradient(grid, sigma, f_in, objective, checkpoint)
    forward = fvm_forward(grid, sigma, f_in)
    psi = final_condition_on_grid(forward, objective)
    adjoint = fvm_adjoint(forward, psi, sigma)
    return fvm_gradient(forward, adjoint), fvm_objective(forward, objective)
