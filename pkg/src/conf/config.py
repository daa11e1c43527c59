import logging
from pathlib import Path
from typing import Any, Literal

import numpy as np
from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.schemas.schedule import Schedule
from src.schemas.solver import SolverParams
from src.services.errors import ConfigError
from src.services.optimizer import build_schedule, default_schedule

load_dotenv()

logger = logging.getLogger(__name__)

PRECISIONS = {"f32": np.float32, "f64": np.float64}
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Settings(BaseSettings):
    GRID_RESOLUTION: int = 128
    SIGMA: float = 2.0
    BOUNDARY_MAGNITUDE: float = 0.5
    EPS_SCALE: float = 1e-8
    N_POINTS: int = 20000
    N_SAMPLES: int = 20000
    RESAMPLE_EVERY: int = 200
    SEED: int = 0
    PRECISION: str = "f64"
    LOG_LEVEL: str = "INFO"
    API_HOST: str = "127.0.0.1"
    API_PORT: int = 8000
    API_MAX_RESOLUTION: int = 128
    API_MAX_POINTS: int = 200000

    @field_validator("PRECISION")
    @classmethod
    def validate_precision(cls, v: Any):
        if v not in PRECISIONS:
            raise ValueError("precision must be f32 or f64")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: Any):
        v = str(v).upper()
        if v not in LOG_LEVELS:
            raise ValueError(f"log level must be one of {', '.join(LOG_LEVELS)}")
        return v

    model_config = SettingsConfigDict(extra="ignore", env_prefix="SAP_", env_file=".env", env_file_encoding="utf-8")


config = Settings()


def _split_list(v: Any):
    if isinstance(v, str):
        return [token for token in v.replace(",", " ").split() if token]
    return v


def _broadcast(values: list | None, default):
    if values is None:
        return default
    return values[0] if len(values) == 1 else values


class RunConfig(BaseModel):
    """
    Everything one ``solve``/``reconstruct``/``eval`` invocation needs.

    Unset schedule lists fall back to the four-stage default of ``preset``.
    """

    input: Path | None = None
    output: Path | None = None
    grid: Path | None = None
    cloud: Path | None = None
    log: Path | None = None
    ground_truth: Path | None = None

    resolution: int = Field(default_factory=lambda: config.GRID_RESOLUTION, ge=4)
    resolutions: list[int] | None = None
    iterations: list[int] | None = None
    sigmas: list[float] | None = None
    sigma: float = Field(default_factory=lambda: config.SIGMA, ge=0)
    lr: float = Field(default=2e-3, ge=0)
    decay: float = Field(default=0.7, gt=0)
    m: float = Field(default_factory=lambda: config.BOUNDARY_MAGNITUDE, gt=0)
    eps_scale: float = Field(default_factory=lambda: config.EPS_SCALE, gt=0)

    n_points: int = Field(default_factory=lambda: config.N_POINTS, ge=1)
    n_samples: int = Field(default_factory=lambda: config.N_SAMPLES, ge=1)
    resample_every: int = Field(default_factory=lambda: config.RESAMPLE_EVERY, gt=0)
    resample: bool = True
    seed: int = Field(default_factory=lambda: config.SEED)
    preset: Literal["clean", "noisy"] = "clean"
    precision: Literal["f32", "f64"] = Field(default_factory=lambda: config.PRECISION)
    metrics_frame: Literal["normalized", "input"] = "normalized"
    tau: float = Field(default=0.01, gt=0)

    model_config = ConfigDict(extra="forbid")

    @field_validator("resolutions", "iterations", "sigmas", mode="before")
    @classmethod
    def split_lists(cls, v: Any):
        return _split_list(v)

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    def solver_params(self, sigma: float | None = None) -> SolverParams:
        return SolverParams(sigma=self.sigma if sigma is None else sigma, m=self.m, eps_scale=self.eps_scale)

    def to_schedule(self) -> Schedule:
        """
        Builds the optimization schedule.

        Custom ``resolutions`` take 1000 iterations and ``sigma`` per stage unless
        ``iterations``/``sigmas`` say otherwise; a one-element list applies to every stage.
        """
        options = dict(
            resample_every=self.resample_every,
            resample=self.resample,
            n_points=self.n_points,
            n_samples=self.n_samples,
            seed=self.seed,
        )
        try:
            if self.resolutions is None:
                if self.iterations is not None or self.sigmas is not None:
                    raise ConfigError("iterations or sigmas given without resolutions")
                return default_schedule(self.preset, lr=self.lr, decay=self.decay, **options)
            iterations = _broadcast(self.iterations, 1000)
            sigmas = _broadcast(self.sigmas, self.sigma)
            return build_schedule(self.resolutions, iterations, sigmas, lr=self.lr, decay=self.decay, **options)
        except ValidationError as err:
            raise ConfigError(f"invalid schedule: {err}") from err


def load_config_file(path) -> dict[str, str]:
    """
    Reads a flat ``key=value`` file; keys are case-insensitive and may use dashes.

    :raises ConfigError: The file does not exist.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    values = dotenv_values(path)
    return {key.strip().lower().replace("-", "_"): value for key, value in values.items() if value is not None}


def load_run_config(config_file=None, **overrides) -> RunConfig:
    """
    Merges defaults, the optional config file and explicit overrides (highest precedence).

    ``None`` overrides are treated as unset.

    :raises ConfigError: Unknown keys or invalid values.
    """
    values: dict[str, Any] = {}
    if config_file is not None:
        values.update(load_config_file(config_file))
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        run_config = RunConfig(**values)
    except ValidationError as err:
        raise ConfigError(f"invalid configuration: {err}") from err
    logger.debug(f"Run configuration: {run_config.model_dump(exclude_none=True)}")
    return run_config
