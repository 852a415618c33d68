import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.transforms import BlockLayout


class DeltaTargets(BaseModel):
    """Per-location distortion limits of the integral image, with provenance."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    delta: np.ndarray
    corpus_id: str = ""
    n_components: int = Field(0, ge=0)
    quantile: float = Field(0.95, gt=0.0, le=1.0)

    @field_validator("delta", mode="before")
    @classmethod
    def _as_array(cls, v):
        arr = np.array(v, dtype=float, copy=True).ravel()
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("delta entries must be finite and nonnegative")
        arr.setflags(write=False)
        return arr

    @property
    def n(self) -> int:
        return self.delta.size


class Measurements(BaseModel):
    """
    Block measurement vectors y_b = phi x_b. Row b of `per_block` belongs to
    block b in raster order of the block grid.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    per_block: np.ndarray
    layout: BlockLayout
    operator_id: str

    @field_validator("per_block", mode="before")
    @classmethod
    def _as_array(cls, v):
        arr = np.array(v, dtype=float, copy=True)
        if arr.ndim != 2:
            raise ValueError("per_block must be a (blocks x M) matrix")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_blocks(self):
        if self.per_block.shape[0] != self.layout.block_count:
            raise ValueError(
                f"{self.per_block.shape[0]} measurement vectors for {self.layout.block_count} blocks"
            )
        return self

    @property
    def rank(self) -> int:
        return self.per_block.shape[1]

    @property
    def total_scalars(self) -> int:
        return self.per_block.size

    @property
    def measurement_rate(self) -> float:
        return self.rank / self.layout.block_side ** 2
