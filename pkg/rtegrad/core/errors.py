"""Exception hierarchy for the rtegrad package.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class RteGradError(Exception):
    """Base class for all rtegrad errors."""

    exit_code: int = 1

    def __init__(self, message: str, *, key: Optional[str] = None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class ConfigurationError(RteGradError):
    """Invalid geometry, grid, objective or config file content."""

    exit_code = 2


class NumericalGuardError(RteGradError):
    """A numerical guard tripped (CFL, non-finite values, divergence)."""

    exit_code = 3


class SimulationError(RteGradError):
    """A step visitor failed during a particle simulation."""

    exit_code = 3

    def __init__(self, message: str, *, step: int, particle: Optional[int] = None):
        self.step = step
        self.particle = particle
        where = f"step m={step}"
        if particle is not None:
            where = f"particle n={particle}, {where}"
        super().__init__(f"{message} ({where})")
