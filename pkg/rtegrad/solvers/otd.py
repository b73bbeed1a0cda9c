"""Correlated-adjoint (optimize-then-discretize) particle gradient.

The adjoint value of a particle is its final condition psi evaluated at the
end of its trajectory and is carried unchanged back along that trajectory. The
gradient in a cell is then dt * sum_m (<f g>_v - |Omega|^-1 <f>_v <g>_v), with
<f g>_v and <f>_v from histograms and <g>_v from a trapezoid rule over the
velocities of the particles resident in the cell.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from loguru import logger

from rtegrad.core.domain import GradientField, GridSpec, VelocityDomain, cell_index
from rtegrad.core.objectives import Objective, PhaseFunction, adjoint_final_condition
from rtegrad.solvers.forward_mc import (
    ParticleEnsemble,
    SimulationConfig,
    StepBatch,
    StepVisitor,
    TrajectoryReplay,
    TrajectoryStore,
    simulate,
    spatial_density,
)


@dataclass(frozen=True, eq=False)
class AdjointWeights:
    """Per-particle adjoint value g_n = psi(x_n^M, v_n^M), fixed over all steps."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).ravel()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


def assign_adjoint_weights(ensemble: ParticleEnsemble, psi: PhaseFunction):
    return AdjointWeights(np.asarray(psi(ensemble.x, ensemble.v), dtype=np.float64))


def velocity_coordinate(v: np.ndarray, theta: Optional[np.ndarray]) -> np.ndarray:
    """Scalar velocity node: v on the interval, the angle on the circle."""
    if theta is None:
        return np.asarray(v, dtype=np.float64).reshape(-1)
    return np.asarray(theta, dtype=np.float64).reshape(-1)


def trapezoid_weights(
    cells: np.ndarray, nodes: np.ndarray, velocity: VelocityDomain
) -> Tuple[np.ndarray, np.ndarray]:
    """Scattered-node trapezoid weights of every particle within its cell.

    Returns ``(order, weights)``: ``weights[k]`` belongs to particle
    ``order[k]``. On the interval the end nodes are extended to -1 and 1; on
    the circle neighbours are cyclic. Per cell the weights sum to |Omega| up to
    rounding.
    """
    order = np.lexsort((nodes, cells))
    c = cells[order]
    s = nodes[order]
    n = s.size
    is_first = np.ones(n, dtype=bool)
    is_first[1:] = c[1:] != c[:-1]
    is_last = np.ones(n, dtype=bool)
    is_last[:-1] = c[1:] != c[:-1]
    prev = np.empty(n)
    prev[0] = s[0]
    prev[1:] = s[:-1]
    nxt = np.empty(n)
    nxt[-1] = s[-1]
    nxt[:-1] = s[1:]
    if velocity.kind == "interval":
        lower = np.where(is_first, s + 1.0, 0.5 * (s - prev))
        upper = np.where(is_last, 1.0 - s, 0.5 * (nxt - s))
        return order, lower + upper
    group = np.cumsum(is_first) - 1
    starts = np.flatnonzero(is_first)
    ends = np.flatnonzero(is_last)
    prev = np.where(is_first, s[ends][group] - 2.0 * math.pi, prev)
    nxt = np.where(is_last, s[starts][group] + 2.0 * math.pi, nxt)
    return order, 0.5 * (nxt - prev)


def cell_velocity_integrals(
    cells: np.ndarray,
    nodes: np.ndarray,
    g: np.ndarray,
    n_cells: int,
    velocity: VelocityDomain,
) -> np.ndarray:
    """<g>_v per cell from the residents' velocity nodes; empty cells give 0.

    The weights are rescaled to sum to |Omega| in every cell, so a constant g
    integrates exactly.
    """
    out = np.zeros(n_cells)
    if cells.size == 0:
        return out
    order, w = trapezoid_weights(cells, nodes, velocity)
    c = cells[order]
    sum_w = np.bincount(c, weights=w, minlength=n_cells)
    sum_wg = np.bincount(c, weights=w * g[order], minlength=n_cells)
    np.divide(velocity.measure * sum_wg, sum_w, out=out, where=sum_w > 0)
    return out


def velocity_integral_g(
    nodes: np.ndarray, g: np.ndarray, velocity: VelocityDomain
) -> float:
    """<g>_v of the residents of a single cell."""
    nodes = np.asarray(nodes, dtype=np.float64).reshape(-1)
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    cells = np.zeros(nodes.size, dtype=np.int64)
    return float(cell_velocity_integrals(cells, nodes, g, 1, velocity)[0])


def accumulate_otd(
    batch: StepBatch,
    weights: AdjointWeights,
    grid: GridSpec,
    velocity: VelocityDomain,
):
    """Per-cell <f g>_v and <f>_v <g>_v at one step, before the mass weight."""
    g = weights.values
    N = g.size
    cells = cell_index(batch.x, grid)
    scale = 1.0 / (N * grid.cell_volume)
    counts = np.bincount(cells, minlength=grid.n_cells)
    fg = np.bincount(cells, weights=g, minlength=grid.n_cells) * scale
    g_v = cell_velocity_integrals(
        cells, velocity_coordinate(batch.v, batch.theta), g, grid.n_cells, velocity
    )
    return fg, counts * scale * g_v


class OtdAccumulator(StepVisitor):
    """Sums <f g>_v - |Omega|^-1 <f>_v <g>_v over steps 1..M."""

    def __init__(
        self, weights: AdjointWeights, grid: GridSpec, velocity: VelocityDomain
    ):
        self.weights = weights
        self.grid = grid
        self.velocity = velocity
        self.total = np.zeros(grid.n_cells)

    def on_step(self, batch: StepBatch) -> None:
        fg, f_g = accumulate_otd(batch, self.weights, self.grid, self.velocity)
        self.total += fg - f_g / self.velocity.measure


def assemble_gradient_otd(
    config: SimulationConfig,
    objective: Objective,
    grid: GridSpec,
    store: bool = False,
) -> GradientField:
    """Two-pass correlated-adjoint gradient on ``grid``.

    Pass one runs the forward simulation and fixes every particle's adjoint
    value; pass two revisits the trajectories (replayed from the seed, or from
    a dense in-memory store when ``store`` is set) and accumulates the cells.
    """
    logger.info(
        f"P-OTD gradient: objective={objective.kind} N={config.N} M={config.M} "
        f"cells={grid.shape}"
    )
    recorder = TrajectoryStore(config.N, config.M) if store else None
    final = simulate(config, recorder)
    rho_T = None
    if objective.kind == "J1":
        rho_T = spatial_density(final.x, grid, config.mass_weight, config.velocity)
    psi = adjoint_final_condition(objective, config.velocity, rho_T)
    weights = assign_adjoint_weights(final, psi)
    logger.debug(f"Adjoint weights assigned, mean {weights.values.mean():.6g}")

    accumulator = OtdAccumulator(weights, grid, config.velocity)
    if recorder is not None:
        recorder.replay(accumulator)
    else:
        TrajectoryReplay(config).replay(accumulator)
    values = config.mass_weight * config.dt * accumulator.total
    return GradientField(grid=grid, values=values, mass_weight=config.mass_weight)
