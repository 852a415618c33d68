import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.errors import ShapeMismatchError


class WaveletBasis(BaseModel):
    """
    Dense orthogonal analysis matrix U^T of a 2D separable wavelet transform
    on f x f blocks. Row 0 is the DC row (all entries 1/sqrt(n)); rows 1..n-1
    span the detail space.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix_t: np.ndarray
    family: str
    levels: int = Field(..., ge=1)
    block_side: int = Field(..., ge=2)

    @field_validator("matrix_t", mode="before")
    @classmethod
    def _as_array(cls, v):
        arr = np.array(v, dtype=float, copy=True)
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def _check_shape(self):
        n = self.block_side ** 2
        if self.matrix_t.shape != (n, n):
            raise ValueError(f"matrix_t must be {n}x{n}, got {self.matrix_t.shape}")
        return self

    @property
    def n(self) -> int:
        return self.block_side ** 2

    @property
    def detail_rows(self) -> np.ndarray:
        """U_{2:n}^T, the (n-1) x n detail analysis rows."""
        return self.matrix_t[1:]

    def analyze(self, blocks: np.ndarray) -> np.ndarray:
        """Wavelet coefficients of raster blocks stacked along the last axis."""
        return blocks @ self.matrix_t.T

    def synthesize(self, coefficients: np.ndarray) -> np.ndarray:
        return coefficients @ self.matrix_t


class IntegralOperator(BaseModel):
    """
    The cumulative-sum operator H on a rows x cols raster. Never stored
    densely: `cumulate` applies H and `cumulate_adjoint` applies H^T to
    images stacked along the leading axes (last axis is the raster).
    """

    model_config = ConfigDict(frozen=True)

    rows: int = Field(..., ge=1)
    cols: int = Field(..., ge=1)

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def _grid(self, stack: np.ndarray) -> np.ndarray:
        stack = np.asarray(stack)
        if stack.shape[-1] != self.n:
            raise ShapeMismatchError(
                f"expected rasters of length {self.n} ({self.rows}x{self.cols}), got {stack.shape[-1]}"
            )
        return stack.reshape(stack.shape[:-1] + (self.rows, self.cols))

    def cumulate(self, stack: np.ndarray) -> np.ndarray:
        grid = self._grid(stack)
        out = np.cumsum(np.cumsum(grid, axis=-2), axis=-1)
        return out.reshape(np.shape(stack))

    def cumulate_adjoint(self, stack: np.ndarray) -> np.ndarray:
        # H^T sums over the lower-right rectangle starting at each pixel
        grid = self._grid(stack)[..., ::-1, ::-1]
        out = np.cumsum(np.cumsum(grid, axis=-2), axis=-1)[..., ::-1, ::-1]
        return np.ascontiguousarray(out).reshape(np.shape(stack))


class BlockLayout(BaseModel):
    """Bookkeeping between a (center-cropped) image and its f x f blocks."""

    model_config = ConfigDict(frozen=True)

    image_rows: int = Field(..., ge=1)
    image_cols: int = Field(..., ge=1)
    block_side: int = Field(..., ge=1)
    source_rows: int = Field(..., ge=1)
    source_cols: int = Field(..., ge=1)
    crop_top: int = Field(0, ge=0)
    crop_left: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_tiling(self):
        f = self.block_side
        if self.image_rows % f or self.image_cols % f:
            raise ValueError(
                f"layout {self.image_rows}x{self.image_cols} is not tiled by {f}x{f} blocks"
            )
        if self.crop_top + self.image_rows > self.source_rows or self.crop_left + self.image_cols > self.source_cols:
            raise ValueError("crop window exceeds the source image")
        return self

    @property
    def grid_rows(self) -> int:
        return self.image_rows // self.block_side

    @property
    def grid_cols(self) -> int:
        return self.image_cols // self.block_side

    @property
    def block_count(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def integral(self) -> IntegralOperator:
        return IntegralOperator(rows=self.image_rows, cols=self.image_cols)
