"""Particle Monte Carlo solver for the forward transfer equation.

Each step transports every particle ballistically, then runs the acceptance
test at the new position: with probability 1 - exp(-sigma(x) dt) the velocity is
redrawn uniformly on the velocity domain. The loop is step-major so visitors see
the whole ensemble at every step; particles are advanced in fixed-size chunks
that may run on worker threads without changing any result.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from loguru import logger

from rtegrad.core.domain import (
    DensityField,
    GridSpec,
    PhaseParticle,
    SigmaField,
    SpatialDomain,
    VelocityDomain,
    cell_index,
    sigma_eval,
    uniform_velocity_sample,
    velocity_from_uniform,
    wrap_periodic,
)
from rtegrad.core.errors import (
    ConfigurationError,
    RteGradError,
    SimulationError,
)
from rtegrad.core.objectives import InitialDistribution
from rtegrad.core.rng import MasterSeed, particle_keys, step_counter, uniform_block
from rtegrad.core.settings import settings

MAX_STORED_STATES = 10_000_000
HORIZON_RTOL = 1e-12


@dataclass
class SimulationConfig:
    """Everything a particle run depends on; equal configs give equal runs."""

    domain: SpatialDomain
    velocity: VelocityDomain
    sigma: SigmaField
    f_in: InitialDistribution
    N: int
    dt: float
    M: int
    seed: int = 0
    threads: int = 1
    chunk_size: int = field(default_factory=lambda: settings.chunk_size)

    def __post_init__(self):
        MasterSeed(self.seed)
        if self.N < 1:
            raise ConfigurationError(f"N must be at least 1, got {self.N}", key="N")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(
                f"dt must be positive, got {self.dt}", key="time.dt"
            )
        if self.M < 0:
            raise ConfigurationError(f"M must be nonnegative, got {self.M}", key="time")
        if self.threads < 1 or self.chunk_size < 1:
            raise ConfigurationError("threads and chunk size must be positive")

    @staticmethod
    def steps_for(T: float, dt: float) -> int:
        """Step count M with T = M dt, rejecting horizons that are not a multiple."""
        if not (math.isfinite(dt) and dt > 0):
            raise ConfigurationError(f"dt must be positive, got {dt}", key="time.dt")
        M = int(round(T / dt))
        if M < 0 or abs(M * dt - T) > HORIZON_RTOL * max(abs(T), dt):
            raise ConfigurationError(
                f"T={T} is not a whole number of steps of dt={dt}", key="time.T"
            )
        return M

    @property
    def T(self) -> float:
        return self.M * self.dt

    @property
    def mass_weight(self) -> float:
        return self.f_in.mass


@dataclass
class ParticleEnsemble:
    """State of all N particles at one time level."""

    x: np.ndarray
    v: np.ndarray
    theta: Optional[np.ndarray]
    mass_weight: float

    @property
    def N(self) -> int:
        return self.x.shape[0]

    def particle(self, n: int) -> PhaseParticle:
        return PhaseParticle(
            x=self.x[n].copy(),
            v=self.v[n].copy(),
            theta=None if self.theta is None else float(self.theta[n]),
        )


@dataclass
class StepRecord:
    """One particle, one step: position after transport, scatter flag and alpha."""

    x: np.ndarray
    scatter: bool
    alpha: float


@dataclass
class StepBatch:
    """All particles at step ``step`` (1..M), after transport and collision.

    ``x`` is the post-transport position x^m, ``v``/``theta`` the velocity
    leaving the step, ``scatter``/``alpha`` the outcome of its acceptance test.
    """

    step: int
    x: np.ndarray
    v: np.ndarray
    theta: Optional[np.ndarray]
    scatter: np.ndarray
    alpha: np.ndarray

    def record(self, n: int) -> StepRecord:
        return StepRecord(
            x=self.x[n].copy(),
            scatter=bool(self.scatter[n]),
            alpha=float(self.alpha[n]),
        )


class StepVisitor:
    """Receives every step of a run in order, then the final ensemble."""

    def on_step(self, batch: StepBatch) -> None:
        pass

    def on_finish(self, ensemble: ParticleEnsemble) -> None:
        pass


def sample_initial(f_in: InitialDistribution, N: int, seed) -> ParticleEnsemble:
    """N particles drawn i.i.d. from f_in / rho_tot."""
    if N < 1:
        raise ConfigurationError(f"N must be at least 1, got {N}", key="N")
    keys = particle_keys(seed, np.arange(N))
    x, v, theta = f_in.sample(keys)
    return ParticleEnsemble(x=x, v=v, theta=theta, mass_weight=f_in.mass)


def transport(x: np.ndarray, v: np.ndarray, dt: float, domain: SpatialDomain):
    """Wrapped ballistic move x + dt v of a block of particles."""
    return wrap_periodic(x + dt * v, domain)


def transport_step(p: PhaseParticle, dt: float, domain: SpatialDomain) -> PhaseParticle:
    x = transport(np.asarray(p.x, dtype=np.float64).reshape(1, -1), p.v, dt, domain)
    return PhaseParticle(x=x[0], v=p.v, theta=p.theta)


def collide(
    x: np.ndarray,
    v: np.ndarray,
    theta: Optional[np.ndarray],
    sigma: SigmaField,
    dt: float,
    keys: np.ndarray,
    step: int,
    velocity: VelocityDomain,
):
    """Acceptance test of transition ``step`` (0-based) for a block of particles.

    Returns ``(v, theta, scatter, alpha)``; the redraw is always consumed so the
    counter layout is the same for every particle.
    """
    alpha = np.exp(-sigma_eval(sigma, x) * dt)
    p = uniform_block(keys, step_counter(step))
    eta = uniform_block(keys, step_counter(step) + 1)
    scatter = p >= alpha
    v_new, theta_new = velocity_from_uniform(eta, velocity)
    v_out = np.where(scatter[:, None], v_new, v)
    theta_out = None if theta is None else np.where(scatter, theta_new, theta)
    return v_out, theta_out, scatter, alpha


def collision_step(
    p: PhaseParticle,
    sigma: SigmaField,
    dt: float,
    stream,
    velocity: VelocityDomain,
):
    """Acceptance test for one already-transported particle.

    ``stream`` must sit at the particle's acceptance counter for this step.
    """
    x = np.asarray(p.x, dtype=np.float64).reshape(1, -1)
    alpha = float(np.exp(-sigma_eval(sigma, x)[0] * dt))
    draw = stream.uniform01()
    v_new, theta_new = uniform_velocity_sample(stream, velocity)
    scatter = draw >= alpha
    if scatter:
        out = PhaseParticle(x=x[0], v=v_new, theta=theta_new)
    else:
        out = PhaseParticle(x=x[0], v=np.asarray(p.v), theta=p.theta)
    return out, StepRecord(x=x[0], scatter=scatter, alpha=alpha)


def _chunks(N: int, size: int) -> List[slice]:
    return [slice(start, min(start + size, N)) for start in range(0, N, size)]


def _advance(config: SimulationConfig, keys, x, v, theta, step, pool):
    """One full step for all particles, chunk by chunk."""
    N = x.shape[0]
    x_out = np.empty_like(x)
    v_out = np.empty_like(v)
    theta_out = None if theta is None else np.empty_like(theta)
    scatter = np.empty(N, dtype=bool)
    alpha = np.empty(N)

    def run(part: slice):
        xp = transport(x[part], v[part], config.dt, config.domain)
        tp = None if theta is None else theta[part]
        vp, tp, sp, ap = collide(
            xp, v[part], tp, config.sigma, config.dt, keys[part], step, config.velocity
        )
        x_out[part], v_out[part], scatter[part], alpha[part] = xp, vp, sp, ap
        if theta_out is not None:
            theta_out[part] = tp

    parts = _chunks(N, config.chunk_size)
    if pool is None:
        for part in parts:
            run(part)
    else:
        list(pool.map(run, parts))
    return x_out, v_out, theta_out, scatter, alpha


def simulate(
    config: SimulationConfig, visitor: Optional[StepVisitor] = None
) -> ParticleEnsemble:
    """Run M steps from a fresh initial sample, feeding every step to ``visitor``."""
    visitor = visitor or StepVisitor()
    logger.debug(
        f"Simulating N={config.N} M={config.M} dt={config.dt} "
        f"seed={config.seed} threads={config.threads}"
    )
    keys = particle_keys(config.seed, np.arange(config.N))
    x, v, theta = config.f_in.sample(keys)
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for m in range(config.M):
            x, v, theta, scatter, alpha = _advance(config, keys, x, v, theta, m, pool)
            batch = StepBatch(
                step=m + 1, x=x, v=v, theta=theta, scatter=scatter, alpha=alpha
            )
            try:
                visitor.on_step(batch)
            except RteGradError:
                raise
            except Exception as exc:
                logger.error(f"Step visitor failed at step {m + 1}: {exc}")
                raise SimulationError(
                    f"step visitor failed: {exc}",
                    step=m + 1,
                    particle=getattr(exc, "particle", None),
                ) from exc
    finally:
        if pool is not None:
            pool.shutdown()
    ensemble = ParticleEnsemble(x=x, v=v, theta=theta, mass_weight=config.mass_weight)
    try:
        visitor.on_finish(ensemble)
    except RteGradError:
        raise
    except Exception as exc:
        logger.error(f"Final-state visitor failed: {exc}")
        raise SimulationError(
            f"final-state visitor failed: {exc}",
            step=config.M,
            particle=getattr(exc, "particle", None),
        ) from exc
    return ensemble


class TrajectoryReplay:
    """Second pass over a run, regenerated from (seed, config)."""

    def __init__(self, config: SimulationConfig):
        self.config = config

    def replay(self, visitor: StepVisitor) -> ParticleEnsemble:
        logger.debug(f"Replaying trajectories of seed {self.config.seed}")
        return simulate(self.config, visitor)


class TrajectoryStore(StepVisitor):
    """Dense in-memory record of a run, replayable without re-simulating."""

    def __init__(self, N: int, M: int):
        if N * M > MAX_STORED_STATES:
            raise ConfigurationError(
                f"dense storage of N*M={N * M} states exceeds {MAX_STORED_STATES}",
                key="N",
            )
        self.batches: List[StepBatch] = []
        self.final: Optional[ParticleEnsemble] = None

    def on_step(self, batch: StepBatch) -> None:
        self.batches.append(
            StepBatch(
                step=batch.step,
                x=batch.x.copy(),
                v=batch.v.copy(),
                theta=None if batch.theta is None else batch.theta.copy(),
                scatter=batch.scatter.copy(),
                alpha=batch.alpha.copy(),
            )
        )

    def on_finish(self, ensemble: ParticleEnsemble) -> None:
        self.final = ensemble

    def replay(self, visitor: StepVisitor) -> ParticleEnsemble:
        if self.final is None:
            raise ConfigurationError("trajectory store has not recorded a run")
        for batch in self.batches:
            try:
                visitor.on_step(batch)
            except RteGradError:
                raise
            except Exception as exc:
                raise SimulationError(
                    f"step visitor failed: {exc}",
                    step=batch.step,
                    particle=getattr(exc, "particle", None),
                ) from exc
        visitor.on_finish(self.final)
        return self.final


def phase_density(
    positions: np.ndarray, grid: GridSpec, mass_weight: float
) -> DensityField:
    """Histogram estimate of the velocity-integrated density <f>_v per cell."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, grid.domain.dim)
    N = positions.shape[0]
    if N == 0 or grid.n_cells == 0:
        raise ConfigurationError("density histogram needs particles and cells")
    counts = np.bincount(cell_index(positions, grid), minlength=grid.n_cells)
    values = mass_weight * counts / (N * grid.cell_volume)
    return DensityField(grid=grid, values=values, mass_weight=mass_weight)


def spatial_density(
    positions: np.ndarray,
    grid: GridSpec,
    mass_weight: float,
    velocity: VelocityDomain,
) -> DensityField:
    """Histogram estimate of rho = |Omega|^-1 <f>_v per cell."""
    phase = phase_density(positions, grid, mass_weight)
    return DensityField(
        grid=grid, values=phase.values / velocity.measure, mass_weight=mass_weight
    )


def density_histogram(
    positions: np.ndarray,
    grid: GridSpec,
    mass_weight: float,
    velocity: Optional[VelocityDomain] = None,
) -> DensityField:
    """<f>_v per cell, or rho_T when ``velocity`` is given."""
    if velocity is None:
        return phase_density(positions, grid, mass_weight)
    return spatial_density(positions, grid, mass_weight, velocity)
