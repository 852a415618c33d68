from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class Corpus(BaseModel):
    """Grayscale images in [0, 1], all at the working size, with stable ids."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    images: List[np.ndarray]
    ids: List[str]
    split: Literal["train", "test"]
    source_dir: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if len(self.images) != len(self.ids):
            raise ValueError("images and ids must have the same length")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("image ids must be unique")
        return self

    def __len__(self) -> int:
        return len(self.images)


class EvalRecord(BaseModel):
    image_id: str
    method: str
    m_rank: int
    block_side: int
    measurement_rate: float
    rsnr_integral: float
    rsnr_box: Dict[int, float] = Field(default_factory=dict)
    estimate_time_s: float = 0.0


class EvalSummaryRow(BaseModel):
    method: str
    m_rank: int
    block_side: int
    measurement_rate: float
    images: int
    mean_rsnr_integral: float
    mean_rsnr_box: Dict[int, float] = Field(default_factory=dict)
    mean_estimate_time_s: float = 0.0


# HTTP schemas

class DesignInfoResponse(BaseModel):
    block_side: int
    n: int
    rank_p: int
    rank_q: int
    converged: bool
    ones_residual: float
    max_feasibility_margin: float
    singular_values_head: List[float]


class EstimateResponse(BaseModel):
    operator_id: str
    m_rank: int
    block_side: int
    measurement_rate: float
    image_rows: int
    image_cols: int
    rsnr_integral: Optional[float]
    rsnr_box: Dict[str, Optional[float]]
    estimate_time_s: float


class SenseResponse(BaseModel):
    operator_id: str
    m_rank: int
    block_side: int
    image_rows: int
    image_cols: int
    crop_top: int
    crop_left: int
    measurements: List[List[float]]
