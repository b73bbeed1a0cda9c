"""Counter-based random streams keyed by (master seed, particle index).

Every particle owns a SplitMix64 sequence whose state is a 64-bit key derived
from the master seed and the particle index. Draw ``k`` of that sequence is a
pure function of ``(key, k)``, so any draw of any particle can be regenerated
without touching the others. The simulators address draws by counter:

    counters [0, INITIAL_DRAWS)         initial position / velocity
    INITIAL_DRAWS + 2*m                 acceptance test of step m -> m+1
    INITIAL_DRAWS + 2*m + 1             new direction of step m -> m+1

Results therefore depend only on (seed, config), never on how the particles
are split between workers.
"""

from dataclasses import dataclass

import numpy as np

from rtegrad.core.errors import ConfigurationError

_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_SEED_SALT = np.uint64(0x6A09E667F3BCC909)
_TO_UNIT = 2.0**-53

INITIAL_DRAWS = 4


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class MasterSeed:
    """Unsigned 64-bit master seed of a simulation."""

    value: int

    def __post_init__(self):
        if not isinstance(self.value, (int, np.integer)) or not (
            0 <= int(self.value) <= _MASK64
        ):
            raise ConfigurationError(
                f"seed must be an unsigned 64-bit integer, got {self.value!r}",
                key="seed",
            )


def _as_seed(seed) -> int:
    if isinstance(seed, MasterSeed):
        return int(seed.value)
    return int(MasterSeed(int(seed)).value)


def particle_keys(seed, ids: np.ndarray) -> np.ndarray:
    """Stream keys for an array of particle indices."""
    ids = np.asarray(ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _mix64(np.array([_as_seed(seed)], dtype=np.uint64) ^ _SEED_SALT)
        return _mix64(base + (ids + np.uint64(1)) * _GAMMA)


def uniform_block(keys: np.ndarray, counter: int) -> np.ndarray:
    """Draw number ``counter`` of every stream in ``keys``, as floats in [0, 1)."""
    with np.errstate(over="ignore"):
        z = _mix64(keys + np.uint64(counter + 1) * _GAMMA)
    return (z >> np.uint64(11)).astype(np.float64) * _TO_UNIT


class ParticleStream:
    """Sequential view of one particle's stream."""

    def __init__(self, key: int, counter: int = 0):
        self.key = np.array([key], dtype=np.uint64)
        self.counter = counter

    def uniform01(self) -> float:
        value = float(uniform_block(self.key, self.counter)[0])
        self.counter += 1
        return value

    def at(self, counter: int) -> "ParticleStream":
        """A copy of this stream positioned at draw ``counter``."""
        return ParticleStream(int(self.key[0]), counter)


def derive_stream(seed, n: int) -> ParticleStream:
    """Stream of particle ``n`` under master seed ``seed``, positioned at draw 0."""
    if n < 0:
        raise ConfigurationError(f"particle index must be nonnegative, got {n}")
    return ParticleStream(int(particle_keys(seed, np.array([n]))[0]))


def uniform01(stream: ParticleStream) -> float:
    """Next value in [0, 1) of ``stream``."""
    return stream.uniform01()


def step_counter(step: int) -> int:
    """Counter of the acceptance draw of step ``step`` (0-based transition)."""
    return INITIAL_DRAWS + 2 * step
