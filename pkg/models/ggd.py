from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _frozen_array(v) -> np.ndarray:
    arr = np.array(v, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


class GgdShape(BaseModel):
    """Shape parameter of a (multivariate) generalized Gaussian, beta in (0, 1]."""

    model_config = ConfigDict(frozen=True)

    beta: float = Field(..., gt=0.0, le=1.0)

    @property
    def a(self) -> float:
        """Gamma shape 1/(2 beta) of the radial variable."""
        return 1.0 / (2.0 * self.beta)


class MggdModel(BaseModel):
    """
    Prior over the detail wavelet coefficients of an f x f block:
    density proportional to exp(-(w^T S^{-1} w)^beta) with S the scatter.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    beta: float = Field(..., gt=0.0, le=1.0)
    scatter: np.ndarray
    # scatter = factor * covariance; the analytic c(dim, beta) unless calibrated
    factor: float = Field(..., gt=0.0)

    @model_validator(mode="before")
    @classmethod
    def _default_factor(cls, data):
        if isinstance(data, dict) and data.get("factor") is None:
            from services.ggd_model import scatter_factor
            from utils.errors import DomainError
            scatter = data.get("scatter")
            try:
                data = {**data, "factor": scatter_factor(int(np.shape(scatter)[0]), float(data["beta"]))}
            except (DomainError, IndexError, KeyError, TypeError, ValueError):
                pass
        return data

    @field_validator("scatter", mode="before")
    @classmethod
    def _as_array(cls, v):
        arr = _frozen_array(v)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise ValueError(f"scatter must be a non-empty square matrix, got shape {arr.shape}")
        return arr

    @model_validator(mode="after")
    def _check_psd(self):
        s = self.scatter
        scale = max(np.abs(s).max(), np.finfo(float).tiny)
        if np.abs(s - s.T).max() > 1e-10 * scale:
            raise ValueError("scatter is not symmetric")
        eigvals = np.linalg.eigvalsh(0.5 * (s + s.T))
        if eigvals.min() < -1e-10 * max(eigvals.max(), 0.0):
            raise ValueError(f"scatter has a negative eigenvalue {eigvals.min():.3e}")
        return self

    @property
    def dim(self) -> int:
        return self.scatter.shape[0]

    @property
    def shape(self) -> GgdShape:
        return GgdShape(beta=self.beta)

    def covariance(self) -> np.ndarray:
        from services.ggd_model import covariance_from_scatter
        return covariance_from_scatter(self.scatter, self.beta, factor=self.factor)


class BetaFitReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta_grid: List[float]
    distances: List[float]
    best: float
    coordinates_used: int = 0

    @model_validator(mode="after")
    def _check_best(self):
        if len(self.beta_grid) != len(self.distances):
            raise ValueError("beta_grid and distances differ in length")
        return self
