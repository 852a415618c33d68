import logging
import math
from typing import Optional

import numpy as np
import pywt

from models.transforms import BlockLayout, IntegralOperator, WaveletBasis
from utils.errors import ConfigurationError, DomainError, ShapeMismatchError

logger = logging.getLogger(__name__)

RSNR_CAP_DB = 300.0


def _is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


def max_wavelet_levels(block_side: int) -> int:
    """Deepest 2D separable decomposition of an f x f block."""
    return int(math.log2(block_side))


def _periodized_filter_matrix(taps: np.ndarray, length: int) -> np.ndarray:
    """(length/2) x length matrix whose row k is `taps` shifted by 2k, wrapped around."""
    rows = length // 2
    mat = np.zeros((rows, length))
    columns = (2 * np.arange(rows)[:, None] + np.arange(taps.size)[None, :]) % length
    row_index = np.repeat(np.arange(rows)[:, None], taps.size, axis=1)
    np.add.at(mat, (row_index, columns), np.broadcast_to(taps, columns.shape))
    return mat


def _load_wavelet(family: str) -> pywt.Wavelet:
    try:
        wavelet = pywt.Wavelet(family)
    except ValueError as e:
        raise ConfigurationError(f"Unknown wavelet family '{family}': {e}")
    if not wavelet.orthogonal:
        raise ConfigurationError(f"Wavelet family '{family}' is not orthogonal")
    return wavelet


def build_wavelet_basis(block_side: int, levels: Optional[int] = None, family: str = "db2") -> WaveletBasis:
    """
    Dense analysis matrix U^T of the periodized 2D separable wavelet
    transform on f x f blocks.

    Coefficient order: the approximation (DC) row first, then the detail
    subbands (LH, HL, HH) from the coarsest level to the finest. When the
    decomposition stops short of full depth, the approximation subspace is
    rotated so that its first row is exactly 1/sqrt(n).
    """
    if not _is_power_of_two(block_side) or block_side < 2:
        raise ConfigurationError(f"block side must be a power of 2 >= 2, got {block_side}")
    depth = max_wavelet_levels(block_side)
    levels = depth if levels is None else int(levels)
    if not 1 <= levels <= depth:
        raise ConfigurationError(
            f"{levels} levels not achievable on {block_side}x{block_side} blocks (max {depth})"
        )

    wavelet = _load_wavelet(family)
    lo_taps = np.asarray(wavelet.rec_lo, dtype=float)
    hi_taps = np.asarray(wavelet.rec_hi, dtype=float)

    n = block_side * block_side
    approx = np.eye(n).reshape(n, block_side, block_side)
    details = []
    size = block_side
    for _ in range(levels):
        lo = _periodized_filter_matrix(lo_taps, size)
        hi = _periodized_filter_matrix(hi_taps, size)
        rows_lo = lo @ approx
        rows_hi = hi @ approx
        details.append([
            (rows_lo @ hi.T).reshape(n, -1),
            (rows_hi @ lo.T).reshape(n, -1),
            (rows_hi @ hi.T).reshape(n, -1),
        ])
        approx = rows_lo @ lo.T
        size //= 2

    approx_rows = approx.reshape(n, -1).T
    u = np.full(n, 1.0 / math.sqrt(n))
    if approx_rows.shape[0] == 1:
        if approx_rows[0] @ u < 0:
            approx_rows = -approx_rows
    else:
        # rotate the approximation subspace so that its first vector is u
        c = approx_rows @ u
        q, _ = np.linalg.qr(np.column_stack([c, np.eye(c.size)]))
        if q[:, 0] @ c < 0:
            q[:, 0] = -q[:, 0]
        approx_rows = q.T @ approx_rows

    blocks = [approx_rows]
    for level in reversed(details):
        blocks.extend(band.T for band in level)
    matrix_t = np.vstack(blocks)

    residual = np.abs(matrix_t[0] - u).max()
    if residual > 1e-10:
        raise ConfigurationError(f"DC row of '{family}' basis deviates from 1/sqrt(n) by {residual:.3e}")
    matrix_t[0] = u

    error = np.linalg.norm(matrix_t @ matrix_t.T - np.eye(n)) / math.sqrt(n)
    if error > 1e-10:
        raise ConfigurationError(f"'{family}' basis at f={block_side} is not orthogonal (error {error:.3e})")

    logger.debug(f"Built {family} basis: f={block_side}, levels={levels}, orthogonality error {error:.2e}")
    return WaveletBasis(matrix_t=matrix_t, family=family, levels=levels, block_side=block_side)


def integral_transform(image: np.ndarray, op: IntegralOperator) -> np.ndarray:
    """Inclusive 2D running sum of a raster image (vector or rows x cols array)."""
    image = np.asarray(image)
    if image.ndim == 2 and image.shape == (op.rows, op.cols):
        return op.cumulate(image.ravel()).reshape(image.shape)
    if image.ndim != 1:
        raise ShapeMismatchError(f"expected a raster vector or a {op.rows}x{op.cols} image, got {image.shape}")
    return op.cumulate(image)


def integral_row(op: IntegralOperator, i: int) -> np.ndarray:
    """h_i: indicator of the upper-left rectangle ending at location i (0-based raster index)."""
    if not 0 <= i < op.n:
        raise DomainError(f"location {i} outside [0, {op.n})")
    r, c = divmod(i, op.cols)
    h = np.zeros((op.rows, op.cols))
    h[: r + 1, : c + 1] = 1.0
    return h.ravel()


def box_filter_from_integral(integral: np.ndarray, k: int, op: Optional[IntegralOperator] = None) -> np.ndarray:
    """
    k x k windowed sums via the four-corner identity. Windows are cropped at
    the image border. Accepts a rows x cols integral image, or a raster
    vector together with its operator.
    """
    integral = np.asarray(integral)
    if integral.ndim == 2:
        grid = integral
    elif op is not None and integral.shape == (op.n,):
        grid = integral.reshape(op.rows, op.cols)
    else:
        raise ShapeMismatchError(f"cannot interpret integral of shape {integral.shape}")
    if k < 1 or k % 2 == 0:
        raise DomainError(f"box filter side must be a positive odd integer, got {k}")
    rows, cols = grid.shape
    if k > min(rows, cols):
        raise DomainError(f"box filter side {k} exceeds image size {rows}x{cols}")

    half = k // 2
    padded = np.zeros((rows + 1, cols + 1), dtype=np.result_type(grid.dtype, np.int64))
    padded[1:, 1:] = grid

    r = np.arange(rows)
    c = np.arange(cols)
    top = np.clip(r - half, 0, rows - 1)
    bottom = np.clip(r + half, 0, rows - 1) + 1
    left = np.clip(c - half, 0, cols - 1)
    right = np.clip(c + half, 0, cols - 1) + 1

    out = (padded[np.ix_(bottom, right)] - padded[np.ix_(top, right)]
           - padded[np.ix_(bottom, left)] + padded[np.ix_(top, left)])
    return out if integral.ndim == 2 else out.ravel()


def rsnr(estimate: np.ndarray, exact: np.ndarray) -> float:
    """20 log10(||estimate|| / ||estimate - exact||) in dB, capped at +300 dB."""
    estimate = np.asarray(estimate, dtype=float)
    exact = np.asarray(exact, dtype=float)
    if estimate.shape != exact.shape:
        raise ShapeMismatchError(f"rsnr inputs differ in shape: {estimate.shape} vs {exact.shape}")
    if not np.any(exact):
        raise DomainError("rsnr is undefined for an all-zero reference")

    signal = np.linalg.norm(estimate)
    error = np.linalg.norm(estimate - exact)
    if error <= 1e-12 * signal:
        return RSNR_CAP_DB
    if signal == 0.0:
        return float("-inf")
    return float(20.0 * np.log10(signal / error))


def make_block_layout(rows: int, cols: int, block_side: int) -> BlockLayout:
    """Center-crop a rows x cols image to the largest multiple of the block side."""
    if block_side < 1:
        raise DomainError(f"block side must be positive, got {block_side}")
    image_rows = rows // block_side * block_side
    image_cols = cols // block_side * block_side
    if image_rows == 0 or image_cols == 0:
        raise DomainError(f"image {rows}x{cols} is smaller than one {block_side}x{block_side} block")
    if (image_rows, image_cols) != (rows, cols):
        logger.debug(f"Cropping {rows}x{cols} to {image_rows}x{image_cols} for f={block_side}")
    return BlockLayout(
        image_rows=image_rows,
        image_cols=image_cols,
        block_side=block_side,
        source_rows=rows,
        source_cols=cols,
        crop_top=(rows - image_rows) // 2,
        crop_left=(cols - image_cols) // 2,
    )


def crop_to_layout(image: np.ndarray, layout: BlockLayout) -> np.ndarray:
    """Bring an image (source size, cropped size, or cropped raster) to the cropped grid."""
    image = np.asarray(image)
    if image.shape == (layout.image_rows, layout.image_cols):
        return image
    if image.shape == (layout.image_rows * layout.image_cols,):
        return image.reshape(layout.image_rows, layout.image_cols)
    if image.shape == (layout.source_rows, layout.source_cols):
        return image[layout.crop_top: layout.crop_top + layout.image_rows,
                     layout.crop_left: layout.crop_left + layout.image_cols]
    raise ShapeMismatchError(
        f"image of shape {image.shape} does not match layout "
        f"{layout.source_rows}x{layout.source_cols} -> {layout.image_rows}x{layout.image_cols}"
    )


def partition_blocks(image: np.ndarray, layout: BlockLayout) -> np.ndarray:
    """(B, f^2) matrix: blocks in raster order of the grid, pixels in raster order within a block."""
    grid = crop_to_layout(image, layout)
    f = layout.block_side
    blocks = grid.reshape(layout.grid_rows, f, layout.grid_cols, f).transpose(0, 2, 1, 3)
    return blocks.reshape(layout.block_count, f * f)


def reassemble_blocks(blocks: np.ndarray, layout: BlockLayout) -> np.ndarray:
    """Inverse of `partition_blocks`; leading axes (frames) are carried through."""
    blocks = np.asarray(blocks)
    f = layout.block_side
    if blocks.shape[-2:] != (layout.block_count, f * f):
        raise ShapeMismatchError(
            f"expected (..., {layout.block_count}, {f * f}) blocks, got {blocks.shape}"
        )
    lead = blocks.shape[:-2]
    grid = blocks.reshape(lead + (layout.grid_rows, layout.grid_cols, f, f))
    grid = np.swapaxes(grid, -3, -2)
    return grid.reshape(lead + (layout.image_rows, layout.image_cols))
