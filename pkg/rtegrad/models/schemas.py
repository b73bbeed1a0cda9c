"""Experiment configuration schemas and the TOML loader."""

import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from rtegrad.core.errors import ConfigurationError
from rtegrad.models.presets import PROFILES, get_profile

U64_MAX = (1 << 64) - 1


class StrictModel(BaseModel):
    """Base for config blocks: unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")


class GeometryConfig(StrictModel):
    """Spatial box and velocity domain."""

    bounds: List[Tuple[float, float]]
    velocity: Literal["interval", "circle"]


class GridConfig(StrictModel):
    """FVM grid and the cell grid particle gradients are binned on.

    ``gradient_cells`` defaults to ``cells`` so particle and FVM outputs share
    cell centers.
    """

    cells: List[int]
    velocity_cells: int = Field(32, ge=1)
    gradient_cells: Optional[List[int]] = None


class TimeConfig(StrictModel):
    T: float = Field(ge=0)
    dt: float = Field(gt=0)


class SigmaConfig(StrictModel):
    """Constant sigma, or one value per cell of the gradient grid."""

    kind: Literal["constant", "piecewise"] = "constant"
    value: float = Field(2.0, ge=0)
    values: Optional[List[float]] = None


class InitialConfig(StrictModel):
    kind: Literal["gauss", "uniform", "point"] = "gauss"
    a: float = Field(1.0, gt=0)
    c: float = Field(4.0, gt=0)
    center: Optional[List[float]] = None
    x0: Optional[List[float]] = None
    velocity0: float = 0.0


class MeasurementConfig(StrictModel):
    a: float = Field(gt=0)
    c: float = Field(gt=0)
    center: Optional[List[float]] = None


class ControlConfig(StrictModel):
    speed: Literal["v2", "v1sq", "const"] = "v2"
    value: float = 1.0
    indicator: bool = True
    center: List[float] = [0.0]
    half_width: List[float] = [0.25]
    sharpness: float = Field(40.0, gt=0)


class ConvergenceConfig(StrictModel):
    n_values: List[int] = [1_000, 10_000, 100_000, 1_000_000]
    seeds: Optional[List[Annotated[int, Field(ge=0, le=U64_MAX)]]] = None
    scaled_norm: bool = False


class ReferenceConfig(StrictModel):
    """Resolution of the finite-volume oracle relative to ``grids``.

    Spatial cells and time steps are multiplied by ``refine``; the oracle's
    gradient is averaged back onto the gradient grid.
    """

    refine: int = Field(1, ge=1)
    velocity_cells: Optional[int] = Field(None, ge=1)
    checkpoint: Optional[int] = Field(None, ge=1)


class OptimizeConfig(StrictModel):
    step: float = Field(1.0, gt=0)
    iterations: int = Field(10, ge=0)
    sigma_start: Optional[float] = Field(None, ge=0)
    sigma_true: Optional[float] = Field(None, ge=0)


class OutputConfig(StrictModel):
    dir: Optional[str] = None


class ExperimentConfig(StrictModel):
    """A full experiment: geometry, grids, physics, objective and run parameters."""

    name: str = "custom"
    geometry: GeometryConfig
    grids: GridConfig
    time: TimeConfig
    sigma: SigmaConfig = SigmaConfig()
    initial: InitialConfig = InitialConfig()
    objective: Literal["J1", "J2"]
    measurement: Optional[MeasurementConfig] = None
    control: Optional[ControlConfig] = None
    method: Literal["otd", "dto", "fvm"] = "otd"
    N: int = Field(100_000, ge=1)
    seeds: List[int] = [1]
    full_seeds: Optional[Union[int, Dict[str, int]]] = None
    reference: ReferenceConfig = ReferenceConfig()
    convergence: ConvergenceConfig = ConvergenceConfig()
    optimize: OptimizeConfig = OptimizeConfig()
    output: OutputConfig = OutputConfig()

    @field_validator("seeds")
    @classmethod
    def seeds_are_u64(cls, seeds: List[int]) -> List[int]:
        if not seeds:
            raise ValueError("at least one seed is required")
        for seed in seeds:
            if not 0 <= seed <= U64_MAX:
                raise ValueError(f"seed {seed} is not an unsigned 64-bit integer")
        return seeds

    def full_seed_count(self) -> Optional[int]:
        """Seed count of the long seed-averaged runs for the selected method."""
        if isinstance(self.full_seeds, dict):
            return self.full_seeds.get(self.method)
        return self.full_seeds

    def canonical_json(self) -> str:
        """Key-sorted compact JSON of the config; the basis of the manifest hash."""
        return json.dumps(
            self.model_dump(mode="json"), sort_keys=True, separators=(",", ":")
        )


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``override`` into a copy of ``base``."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _dotted(loc) -> str:
    return ".".join(str(part) for part in loc)


def validate_config(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key = _dotted(first["loc"])
        logger.debug(f"Config validation failed: {e}")
        raise ConfigurationError(first["msg"], key=key) from e


def load_config(
    path: Optional[Union[str, Path]] = None,
    profile: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """Load a TOML config, merged over ``profile`` (argument or ``profile`` key)."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as e:
            raise ConfigurationError(f"config file not found: {path}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigurationError(f"cannot parse {path}: {e}") from e
    profile = profile or data.pop("profile", None)
    data.pop("profile", None)
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigurationError(
                f"unknown profile {profile!r}; choose from {sorted(PROFILES)}",
                key="profile",
            )
        data = deep_merge(get_profile(profile), data)
    elif path is None:
        raise ConfigurationError("either a config file or a profile is required")
    if overrides:
        data = deep_merge(data, overrides)
    return validate_config(data)
