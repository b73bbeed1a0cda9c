"""Experiment drivers: problem assembly, gradient runs, convergence studies and
the gradient-descent demonstration."""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from rtegrad.core.domain import (
    DensityField,
    GradientField,
    GridSpec,
    SigmaField,
    SpatialDomain,
    VelocityDomain,
)
from rtegrad.core.errors import ConfigurationError, NumericalGuardError
from rtegrad.core.objectives import (
    ControlWeight,
    InitialDistribution,
    Measurement,
    Objective,
)
from rtegrad.models.schemas import ExperimentConfig
from rtegrad.solvers.dto import assemble_gradient_dto
from rtegrad.solvers.forward_mc import (
    ParticleEnsemble,
    SimulationConfig,
    phase_density,
    simulate,
)
from rtegrad.solvers.fvm import (
    FvmGrid,
    fvm_density,
    fvm_forward,
    fvm_objective,
    solve_fvm_gradient,
)
from rtegrad.solvers.otd import assemble_gradient_otd
from rtegrad.utils.io_utils import ResultTable, gradient_table

DIVERGENCE_PATIENCE = 5


@dataclass
class Problem:
    """Domain objects built from an ExperimentConfig."""

    config: ExperimentConfig
    domain: SpatialDomain
    velocity: VelocityDomain
    grid: GridSpec
    gradient_grid: GridSpec
    sigma: SigmaField
    f_in: InitialDistribution
    objective: Objective
    M: int

    @property
    def fvm_grid(self) -> FvmGrid:
        return FvmGrid(
            self.grid,
            self.velocity,
            self.config.grids.velocity_cells,
            self.config.time.dt,
            self.M,
        )

    @property
    def reference_grid(self) -> FvmGrid:
        """The oracle grid: ``fvm_grid`` refined per the ``reference`` block."""
        ref = self.config.reference
        return self.fvm_grid.refined(ref.refine, ref.velocity_cells)

    def simulation(
        self,
        seed: int,
        N: Optional[int] = None,
        threads: int = 1,
        sigma: Optional[SigmaField] = None,
    ) -> SimulationConfig:
        return SimulationConfig(
            domain=self.domain,
            velocity=self.velocity,
            sigma=sigma or self.sigma,
            f_in=self.f_in,
            N=N or self.config.N,
            dt=self.config.time.dt,
            M=self.M,
            seed=seed,
            threads=threads,
        )

    def with_objective(self, objective: Objective) -> "Problem":
        return Problem(**{**self.__dict__, "objective": objective})


def _tuple(values: Optional[Sequence[float]]) -> Tuple[float, ...]:
    return tuple(float(v) for v in values) if values else ()


def build_problem(config: ExperimentConfig) -> Problem:
    """Validate cross-field constraints and build the domain objects."""
    domain = SpatialDomain(tuple(tuple(b) for b in config.geometry.bounds))
    velocity = VelocityDomain(config.geometry.velocity)
    if velocity.dim != domain.dim:
        raise ConfigurationError(
            f"{velocity.kind} velocities need a {velocity.dim}D box",
            key="geometry.velocity",
        )
    grid = GridSpec(domain, tuple(config.grids.cells))
    gradient_cells = config.grids.gradient_cells or config.grids.cells
    gradient_grid = GridSpec(domain, tuple(gradient_cells))
    M = SimulationConfig.steps_for(config.time.T, config.time.dt)

    if config.sigma.kind == "constant":
        sigma = SigmaField.constant(config.sigma.value, domain)
    else:
        if config.sigma.values is None:
            raise ConfigurationError("piecewise sigma needs values", key="sigma.values")
        sigma = SigmaField.piecewise(gradient_grid, config.sigma.values)

    init = config.initial
    f_in = InitialDistribution(
        kind=init.kind,
        domain=domain,
        velocity=velocity,
        a=init.a,
        c=init.c,
        center=_tuple(init.center),
        x0=_tuple(init.x0),
        velocity0=init.velocity0,
    )

    if config.objective == "J1":
        if config.measurement is None:
            raise ConfigurationError("J1 needs a measurement block", key="measurement")
        meas = config.measurement
        measurement = Measurement(
            domain=domain, a=meas.a, c=meas.c, center=_tuple(meas.center)
        )
        objective = Objective("J1", measurement=measurement)
    else:
        if config.control is None:
            raise ConfigurationError("J2 needs a control block", key="control")
        ctl = config.control
        if ctl.indicator and len(ctl.center) != domain.dim:
            raise ConfigurationError(
                f"control center needs {domain.dim} coordinates", key="control.center"
            )
        control = ControlWeight(
            speed=ctl.speed,
            value=ctl.value,
            indicator=ctl.indicator,
            center=_tuple(ctl.center),
            half_width=_tuple(ctl.half_width),
            sharpness=ctl.sharpness,
        )
        objective = Objective("J2", control=control)

    return Problem(
        config=config,
        domain=domain,
        velocity=velocity,
        grid=grid,
        gradient_grid=gradient_grid,
        sigma=sigma,
        f_in=f_in,
        objective=objective,
        M=M,
    )


def run_forward(
    problem: Problem, seed: int, N: Optional[int] = None, threads: int = 1
) -> Tuple[ParticleEnsemble, DensityField]:
    """Forward particle run and the final phase density <f>_v on the grid."""
    final = simulate(problem.simulation(seed, N, threads))
    return final, phase_density(final.x, problem.gradient_grid, final.mass_weight)


def particle_gradient(
    problem: Problem,
    method: str,
    seed: int,
    N: Optional[int] = None,
    threads: int = 1,
    sigma: Optional[SigmaField] = None,
    store: bool = False,
) -> GradientField:
    sim = problem.simulation(seed, N, threads, sigma)
    if method == "otd":
        return assemble_gradient_otd(
            sim, problem.objective, problem.gradient_grid, store
        )
    if method == "dto":
        return assemble_gradient_dto(
            sim, problem.objective, problem.gradient_grid, store
        )
    raise ConfigurationError(f"unknown particle method {method!r}", key="method")


def fvm_reference(problem: Problem, sigma: Optional[SigmaField] = None):
    """FVM gradient on the gradient grid and the objective value of ``problem``."""
    gradient, value = solve_fvm_gradient(
        problem.reference_grid,
        sigma or problem.sigma,
        problem.f_in,
        problem.objective,
        problem.config.reference.checkpoint,
    )
    return gradient.coarsen(problem.gradient_grid), value


def seed_average(
    fields: Sequence[GradientField],
) -> Tuple[GradientField, GradientField]:
    """Per-cell mean and standard error of the mean across seeds."""
    if not fields:
        raise ConfigurationError("nothing to average", key="seeds")
    grid = fields[0].grid
    stack = np.stack([f.values for f in fields])
    mean = stack.mean(axis=0)
    if len(fields) > 1:
        stderr = stack.std(axis=0, ddof=1) / math.sqrt(len(fields))
    else:
        stderr = np.zeros_like(mean)
    weight = fields[0].mass_weight
    return (
        GradientField(grid=grid, values=mean, mass_weight=weight),
        GradientField(grid=grid, values=stderr, mass_weight=weight),
    )


@dataclass
class GradientRun:
    """Outcome of run_gradient: the (seed-averaged) field and its table."""

    gradient: GradientField
    stderr: Optional[GradientField]
    table: ResultTable
    per_seed: List[GradientField] = field(default_factory=list)
    objective_value: Optional[float] = None


def run_gradient(
    problem: Problem,
    method: Optional[str] = None,
    seeds: Optional[Sequence[int]] = None,
    N: Optional[int] = None,
    threads: int = 1,
    progress: Optional[Callable[[int], None]] = None,
) -> GradientRun:
    """Dispatch to the selected gradient method, averaging over several seeds."""
    method = method or problem.config.method
    name = problem.config.name
    if method == "fvm":
        gradient, value = fvm_reference(problem)
        table = gradient_table(gradient, name, "fvm", None, None)
        return GradientRun(gradient, None, table, [gradient], value)

    seeds = list(seeds or problem.config.seeds)
    N = N or problem.config.N
    fields = []
    for seed in seeds:
        fields.append(particle_gradient(problem, method, seed, N, threads))
        if progress is not None:
            progress(seed)
    if len(fields) == 1:
        table = gradient_table(fields[0], name, method, N, seeds[0])
        return GradientRun(fields[0], None, table, fields)
    mean, stderr = seed_average(fields)
    logger.info(f"Averaged {len(fields)} seeds of {method}")
    table = gradient_table(mean, name, method, N, f"mean{len(fields)}", stderr)
    return GradientRun(mean, stderr, table, fields)


@dataclass
class ConvergenceResult:
    table: ResultTable
    slope: Optional[float]
    intercept: Optional[float]
    exact_match: bool = False


def gradient_error(
    gradient: GradientField, reference: GradientField, scaled: bool = False
) -> float:
    """Euclidean norm over cells, times sqrt|Q| when ``scaled``."""
    if not gradient.grid.same_as(reference.grid):
        raise ConfigurationError(
            "particle and FVM gradients live on different grids",
            key="grids.gradient_cells",
        )
    err = float(np.linalg.norm(gradient.values - reference.values))
    if scaled:
        err *= math.sqrt(gradient.grid.cell_volume)
    return err


def convergence_study(
    problem: Problem,
    n_values: Optional[Sequence[int]] = None,
    seeds: Optional[Sequence[int]] = None,
    method: Optional[str] = None,
    threads: int = 1,
    scaled_norm: Optional[bool] = None,
) -> ConvergenceResult:
    """Mean gradient error against the FVM oracle per N and its log-log fit."""
    n_values = list(n_values or problem.config.convergence.n_values)
    seeds = list(seeds or problem.config.convergence.seeds or problem.config.seeds)
    method = method or problem.config.method
    if scaled_norm is None:
        scaled_norm = problem.config.convergence.scaled_norm
    if len(n_values) < 3:
        raise ConfigurationError(
            f"a convergence fit needs at least 3 N values, got {len(n_values)}",
            key="convergence.n_values",
        )
    reference, _ = fvm_reference(problem)
    columns = ["experiment", "method", "N", "seeds", "error", "stderr"]
    rows = []
    for N in n_values:
        if method == "fvm":
            errors = [gradient_error(reference, reference, scaled_norm)]
        else:
            errors = [
                gradient_error(
                    particle_gradient(problem, method, seed, N, threads),
                    reference,
                    scaled_norm,
                )
                for seed in seeds
            ]
        errs = np.array(errors)
        stderr = errs.std(ddof=1) / math.sqrt(errs.size) if errs.size > 1 else 0.0
        logger.info(f"{method} N={N}: mean error {errs.mean():.6g}")
        rows.append(
            {
                "experiment": problem.config.name,
                "method": method,
                "N": int(N),
                "seeds": len(errors),
                "error": float(errs.mean()),
                "stderr": float(stderr),
            }
        )
    table = ResultTable(kind="convergence", columns=columns, rows=rows)
    mean_errors = table.column("error")
    if np.all(mean_errors == 0):
        logger.info("Gradient matches the reference exactly at every N")
        return ConvergenceResult(table, None, None, exact_match=True)
    if np.any(mean_errors <= 0):
        raise NumericalGuardError("zero error at some but not all N; cannot fit")
    slope, intercept = np.polyfit(np.log10(table.column("N")), np.log10(mean_errors), 1)
    return ConvergenceResult(table, float(slope), float(intercept))


def synthetic_measurement(problem: Problem, sigma_true: float) -> Measurement:
    """Tabulated measurement: the FVM rho_T produced by a constant sigma_true."""
    sigma = SigmaField.constant(sigma_true, problem.domain)
    grid = problem.reference_grid
    state = fvm_forward(grid, sigma, problem.f_in, keep_history=False)
    rho = fvm_density(state)
    return Measurement.tabulated(grid.spatial, rho.values, check_mass=False)


@dataclass
class OptimizationHistory:
    sigmas: List[np.ndarray]
    objective_values: List[float]


def gd_demo(
    problem: Problem,
    step: Optional[float] = None,
    iterations: Optional[int] = None,
    method: Optional[str] = None,
    seed: Optional[int] = None,
    N: Optional[int] = None,
    threads: int = 1,
    sigma_start: Optional[float] = None,
) -> OptimizationHistory:
    """Projected gradient descent sigma <- max(0, sigma - step * G).

    sigma is piecewise constant on the gradient grid; the FVM objective is
    recorded after every iterate. Raises after DIVERGENCE_PATIENCE consecutive
    increases of the objective.
    """
    opts = problem.config.optimize
    step = opts.step if step is None else step
    iterations = opts.iterations if iterations is None else iterations
    method = method or problem.config.method
    seed = problem.config.seeds[0] if seed is None else seed
    if sigma_start is None:
        sigma_start = opts.sigma_start
    grid = problem.gradient_grid
    if sigma_start is not None:
        sigma_values = np.full(grid.n_cells, float(sigma_start))
    else:
        sigma_values = problem.sigma.on_grid(grid)

    def objective_of(values: np.ndarray) -> float:
        sigma = SigmaField.piecewise(grid, values)
        state = fvm_forward(
            problem.reference_grid, sigma, problem.f_in, keep_history=False
        )
        return fvm_objective(state, problem.objective)

    history = OptimizationHistory([sigma_values.copy()], [objective_of(sigma_values)])
    increases = 0
    for k in range(iterations):
        sigma = SigmaField.piecewise(grid, sigma_values)
        if method == "fvm":
            gradient, _ = fvm_reference(problem, sigma)
        else:
            gradient = particle_gradient(problem, method, seed + k, N, threads, sigma)
        sigma_values = np.maximum(0.0, sigma_values - step * gradient.values)
        value = objective_of(sigma_values)
        logger.info(f"Iterate {k + 1}: J={value:.9g}")
        increases = increases + 1 if value > history.objective_values[-1] else 0
        history.sigmas.append(sigma_values.copy())
        history.objective_values.append(value)
        if increases >= DIVERGENCE_PATIENCE:
            logger.warning(f"Objective increased {increases} times in a row")
            raise NumericalGuardError(
                f"objective increased for {increases} consecutive iterates",
                key="optimize.step",
            )
    return history
