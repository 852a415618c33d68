import os
import logging
from typing import List, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

ENV_PREFIX = "REFINE_"


class Settings(BaseModel):
    """Every knob of the fit / design / evaluate / heatmap commands."""

    model_config = ConfigDict(extra="forbid")

    environment: str = "development"
    log_level: str = "INFO"

    # Corpora and artifacts
    train_dir: Optional[str] = None
    test_dir: Optional[str] = None
    out_dir: str = "out"
    design_path: Optional[str] = None
    model_path: Optional[str] = None
    working_size: int = Field(256, ge=1)
    downsample: str = "area"

    # Basis and prior
    block_side: int = Field(32, ge=2)
    wavelet_family: str = "db2"
    wavelet_levels: Optional[int] = None
    beta_grid: List[float] = Field(default_factory=lambda: [0.3, 0.4, 0.5, 0.6, 0.68, 0.7, 0.8, 0.9, 1.0])
    histogram_bins: int = Field(101, ge=2)
    verify_samples: int = Field(0, ge=0)

    # Delta targets
    n_components: int = Field(10, ge=1)
    quantile: float = Field(0.95, gt=0.0, le=1.0)
    delta_override: Optional[float] = None

    # Solver
    guarantee: float = Field(0.95, gt=0.0, lt=1.0)
    tau: Optional[float] = None
    tau_factor: float = Field(0.1, gt=0.0)
    step_factor: float = Field(1.9, gt=0.0, le=2.0)
    accelerate: bool = True
    norm_inflation: float = Field(1.05, ge=1.0)
    power_iterations: int = Field(100, ge=50)
    max_iterations: int = Field(5000, ge=1)
    feas_tol: float = Field(1e-6, ge=0.0)
    rel_tol: float = Field(1e-6, ge=0.0)
    log_every: int = Field(250, ge=1)

    # Evaluation
    ranks: List[int] = Field(default_factory=lambda: [20, 40, 60])
    filters: List[int] = Field(default_factory=lambda: [3, 5, 7])
    include_identity: bool = True
    include_pca_baseline: bool = True

    seed: int = Field(0, ge=0, lt=2**64)

    # HTTP service
    cors_origins: List[str] = Field(default_factory=lambda: ["http://localhost:3000"])

    @field_validator("beta_grid", "ranks", "filters", "cors_origins", mode="before")
    @classmethod
    def _split_lists(cls, v):
        if isinstance(v, str):
            return [item.strip() for item in v.split(",") if item.strip()]
        return v

    @field_validator("tau", "wavelet_levels", "delta_override", "design_path", "model_path",
                     "train_dir", "test_dir", mode="before")
    @classmethod
    def _blank_is_none(cls, v):
        if isinstance(v, str) and not v.strip():
            return None
        return v

    @field_validator("beta_grid")
    @classmethod
    def _check_grid(cls, v):
        if not v:
            raise ValueError("beta_grid must not be empty")
        for beta in v:
            if not 0.0 < beta <= 1.0:
                raise ValueError(f"beta {beta} outside (0, 1]")
        return v

    @field_validator("filters")
    @classmethod
    def _check_filters(cls, v):
        for k in v:
            if k < 1 or k % 2 == 0:
                raise ValueError(f"filter side {k} must be a positive odd integer")
        return v

    @property
    def eps(self) -> float:
        return 1.0 - self.guarantee

    @property
    def is_production(self) -> bool:
        return self.environment == "production"

    def resolved_design_path(self) -> str:
        return self.design_path or os.path.join(self.out_dir, "design.bin")

    def resolved_model_path(self) -> str:
        return self.model_path or os.path.join(self.out_dir, "model.bin")


def _env_overrides() -> dict:
    values = {}
    for name in Settings.model_fields:
        raw = os.getenv(ENV_PREFIX + name.upper())
        if raw is not None:
            values[name] = raw
    return values


def load_settings(path: Optional[str] = None, **overrides) -> Settings:
    """
    Build settings from (lowest to highest precedence) defaults, REFINE_*
    environment variables, a KEY=VALUE config file and explicit overrides.
    """
    values = _env_overrides()

    if path:
        if not os.path.isfile(path):
            raise ConfigurationError(f"Config file {path} does not exist")
        for key, value in dotenv_values(path).items():
            values[key.strip().lower()] = value

    values.update({k: v for k, v in overrides.items() if v is not None})

    try:
        settings = Settings(**values)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e

    logger.debug(f"Loaded settings: {settings.model_dump()}")
    return settings


class Config:
    def __init__(self):
        load_dotenv()

        try:
            self.settings = load_settings()
        except ConfigurationError as e:
            logger.error(f"❌ Ignoring invalid REFINE_* environment: {e}")
            self.settings = Settings()
        self.environment = self.settings.environment
        self.is_production = self.settings.is_production
        self.design_path = self.settings.resolved_design_path()
        self.cors_origins = self.settings.cors_origins


config = Config()
