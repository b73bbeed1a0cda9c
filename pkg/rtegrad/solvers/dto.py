"""Score-function (discretize-then-optimize) particle gradient.

Differentiating the acceptance probability of every step with respect to sigma
at the particle's position gives the per-step weight xi = -1 on survival and
alpha / (1 - alpha) on scatter (the factor dt is applied once at the end). The
gradient in a cell is the terminal payoff times xi, binned at the step
positions.
"""

from dataclasses import dataclass

import numpy as np
from loguru import logger

from rtegrad.core.domain import GradientField, GridSpec, cell_index
from rtegrad.core.errors import ConfigurationError, NumericalGuardError
from rtegrad.core.objectives import Objective
from rtegrad.solvers.forward_mc import (
    SimulationConfig,
    StepBatch,
    StepRecord,
    StepVisitor,
    TrajectoryReplay,
    TrajectoryStore,
    simulate,
)


@dataclass
class ScoreRecord:
    """Contribution of one (particle, step): cell of x^m, xi and terminal payoff."""

    cell: int
    xi: float
    payoff: float

    @property
    def contribution(self) -> float:
        return self.payoff * self.xi


def score_factor(record: StepRecord) -> float:
    if not record.scatter:
        return -1.0
    if record.alpha >= 1.0:
        raise NumericalGuardError(
            f"scatter recorded with alpha={record.alpha}; sigma vanishes there"
        )
    return record.alpha / (1.0 - record.alpha)


def score_factors(scatter: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Vectorized score_factor over a step batch."""
    bad = scatter & (alpha >= 1.0)
    if np.any(bad):
        n = int(np.flatnonzero(bad)[0])
        logger.warning(f"Scatter with alpha=1 at particle {n}")
        error = NumericalGuardError(
            f"scatter recorded with alpha=1 at particle n={n}; sigma vanishes there"
        )
        error.particle = n
        raise error
    xi = np.full(alpha.shape, -1.0)
    hit = np.flatnonzero(scatter)
    xi[hit] = alpha[hit] / (1.0 - alpha[hit])
    return xi


class DtoAccumulator(StepVisitor):
    """Sums payoff * xi into the cell of x^m over steps 1..M."""

    def __init__(self, payoff: np.ndarray, grid: GridSpec):
        self.payoff = np.asarray(payoff, dtype=np.float64)
        self.grid = grid
        self.total = np.zeros(grid.n_cells)

    def on_step(self, batch: StepBatch) -> None:
        xi = score_factors(batch.scatter, batch.alpha)
        cells = cell_index(batch.x, self.grid)
        self.total += np.bincount(
            cells, weights=self.payoff * xi, minlength=self.grid.n_cells
        )


def assemble_gradient_dto(
    config: SimulationConfig,
    objective: Objective,
    grid: GridSpec,
    store: bool = False,
) -> GradientField:
    """Two-pass score-function gradient of a terminal-payoff objective."""
    if objective.kind != "J2":
        raise ConfigurationError(
            "the score-function gradient supports terminal payoffs (J2) only",
            key="objective",
        )
    logger.info(f"P-DTO gradient: N={config.N} M={config.M} cells={grid.shape}")
    recorder = TrajectoryStore(config.N, config.M) if store else None
    final = simulate(config, recorder)
    payoff = objective.control.evaluate(final.x, final.v)

    accumulator = DtoAccumulator(payoff, grid)
    if recorder is not None:
        recorder.replay(accumulator)
    else:
        TrajectoryReplay(config).replay(accumulator)
    scale = config.mass_weight * config.dt / (config.N * grid.cell_volume)
    return GradientField(
        grid=grid, values=scale * accumulator.total, mass_weight=config.mass_weight
    )
