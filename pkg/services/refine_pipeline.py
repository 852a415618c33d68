import logging
from typing import Optional, Sequence

import numpy as np

from models.design import SensingOperatorPair
from models.ggd import MggdModel
from models.pipeline import DeltaTargets, Measurements
from models.transforms import BlockLayout, IntegralOperator, WaveletBasis
from services.ggd_model import sample_mggd
from services.transforms import (
    box_filter_from_integral,
    integral_transform,
    partition_blocks,
    reassemble_blocks,
)
from utils.errors import DomainError, OperatorMismatchError, ShapeMismatchError, ZeroVarianceCorpusError

logger = logging.getLogger(__name__)


def _block_side(n: int) -> int:
    f = int(round(np.sqrt(n)))
    if f * f != n:
        raise ShapeMismatchError(f"block length {n} is not a square")
    return f


def _as_blocks(training_blocks) -> np.ndarray:
    blocks = np.asarray(training_blocks, dtype=float)
    if blocks.ndim == 3:
        blocks = blocks.reshape(blocks.shape[0], -1)
    if blocks.ndim != 2:
        raise ShapeMismatchError(f"expected a stack of blocks, got shape {blocks.shape}")
    return blocks


def pca_operator(training_blocks, n_components: int = 10) -> SensingOperatorPair:
    """
    Orthonormal PCA sensing pair: the DC row 1/sqrt(n) followed by the top
    principal directions of the per-block detail (block mean removed).
    phi_dual = phi, so Q_M is the orthogonal projector onto their span.
    """
    blocks = _as_blocks(training_blocks)
    n = blocks.shape[1]
    f = _block_side(n)
    if n_components < 1:
        raise DomainError(f"n_components must be >= 1, got {n_components}")

    detail = blocks - blocks.mean(axis=1, keepdims=True)
    scale = max(np.abs(blocks).max(initial=0.0), 1.0)
    if np.abs(detail).max(initial=0.0) <= 1e-12 * scale:
        raise ZeroVarianceCorpusError("zero-variance corpus: every training block is constant")

    centered = detail - detail.mean(axis=0)
    if np.abs(centered).max() <= 1e-12 * scale:
        logger.warning("Training blocks are identical; using the uncentered detail for PCA")
        centered = detail

    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    keep = s > 1e-12 * s[0]
    components = vt[keep][: min(n_components, n - 1)]
    # deterministic sign: largest-magnitude entry positive
    signs = np.sign(components[np.arange(components.shape[0]), np.abs(components).argmax(axis=1)])
    components = components * np.where(signs == 0, 1.0, signs)[:, None]
    if components.shape[0] < n_components:
        logger.info(f"PCA kept {components.shape[0]} of {n_components} requested components")

    phi = np.vstack([np.full((1, n), 1.0 / np.sqrt(n)), components])
    return SensingOperatorPair(phi=phi, phi_dual=phi, rank=phi.shape[0], block_side=f)


def compute_delta_targets(training_blocks, n_components: int = 10, quantile: float = 0.95,
                          corpus_id: str = "") -> DeltaTargets:
    """
    delta_i = nearest-rank `quantile` of |d_i^j| over training blocks j,
    where d^j = H (Q - I) x_j and Q is the PCA projector.
    """
    blocks = _as_blocks(training_blocks)
    if blocks.shape[0] < n_components + 1:
        raise DomainError(
            f"need at least {n_components + 1} training blocks, got {blocks.shape[0]}"
        )
    if not 0.0 < quantile <= 1.0:
        raise DomainError(f"quantile must lie in (0, 1], got {quantile}")

    op = pca_operator(blocks, n_components)
    integral = IntegralOperator(rows=op.block_side, cols=op.block_side)
    distortions = integral.cumulate(blocks @ (op.q_m - np.eye(op.n)).T)
    delta = np.quantile(np.abs(distortions), quantile, axis=0, method="inverted_cdf")

    logger.info(f"Delta targets from {blocks.shape[0]} blocks: max={delta.max():.4e}, "
                f"mean={delta.mean():.4e}")
    return DeltaTargets(delta=delta, corpus_id=corpus_id, n_components=n_components, quantile=quantile)


def _check_compatible(op: SensingOperatorPair, layout: BlockLayout):
    if layout.block_side != op.block_side:
        raise OperatorMismatchError(
            f"layout uses {layout.block_side}x{layout.block_side} blocks, operator expects {op.block_side}"
        )


def sense(image: np.ndarray, op: SensingOperatorPair, layout: BlockLayout) -> Measurements:
    """y_b = phi x_b for every block of the (center-cropped) image."""
    _check_compatible(op, layout)
    blocks = partition_blocks(np.asarray(image, dtype=float), layout)
    return Measurements(per_block=blocks @ op.phi.T, layout=layout, operator_id=op.operator_id)


def _blockwise_proxies(per_block: np.ndarray, op: SensingOperatorPair) -> np.ndarray:
    return per_block @ op.phi_dual


def _check_measurements(meas: Measurements, op: SensingOperatorPair, layout: Optional[BlockLayout]) -> BlockLayout:
    layout = meas.layout if layout is None else layout
    _check_compatible(op, layout)
    if meas.operator_id != op.operator_id:
        raise OperatorMismatchError(
            f"measurements come from operator {meas.operator_id[:12]}, not {op.operator_id[:12]}"
        )
    if meas.layout != layout:
        raise OperatorMismatchError("measurements were taken on a different block layout")
    return layout


def estimate_integral(meas: Measurements, op: SensingOperatorPair,
                      layout: Optional[BlockLayout] = None) -> np.ndarray:
    """
    Integral-image estimate: one phi_dual^T multiply per block, block-to-raster
    reassembly, then one cumulative-sum pass over the image.
    """
    layout = _check_measurements(meas, op, layout)
    proxy = reassemble_blocks(_blockwise_proxies(meas.per_block, op), layout)
    return integral_transform(proxy, layout.integral)


def estimate_integral_batch(frames: Sequence[Measurements], op: SensingOperatorPair) -> np.ndarray:
    """Estimates for a sequence of frames sharing one layout; (frames, rows, cols)."""
    if not frames:
        raise DomainError("no frames to estimate")
    layout = frames[0].layout
    for meas in frames:
        _check_measurements(meas, op, layout)

    stacked = np.stack([meas.per_block for meas in frames])
    proxies = reassemble_blocks(_blockwise_proxies(stacked, op), layout)
    rasters = proxies.reshape(len(frames), -1)
    return layout.integral.cumulate(rasters).reshape(proxies.shape)


def estimate_box_filtered(meas: Measurements, op: SensingOperatorPair, layout: Optional[BlockLayout] = None,
                          k: int = 3) -> np.ndarray:
    return box_filter_from_integral(estimate_integral(meas, op, layout), k)


def distortion_vector(image_block: np.ndarray, op: SensingOperatorPair) -> np.ndarray:
    """d = H (Q_M x - x) for a single f x f block in raster order."""
    x = np.asarray(image_block, dtype=float).ravel()
    if x.shape != (op.n,):
        raise ShapeMismatchError(f"expected a block of {op.n} pixels, got {x.size}")
    integral = IntegralOperator(rows=op.block_side, cols=op.block_side)
    return integral.cumulate(op.q_m @ x - x)


def guarantee_frequencies(model: MggdModel, basis: WaveletBasis, op: SensingOperatorPair,
                          delta: np.ndarray, count: int = 10000, seed: int = 0,
                          mean_block: Optional[np.ndarray] = None, atol: float = 1e-9) -> np.ndarray:
    """
    Per-location fraction of blocks with |d_i| <= delta_i, for blocks
    synthesized from the prior (detail coefficients drawn from `model`,
    `mean_block` added back).
    """
    if model.dim != basis.n - 1 or op.n != basis.n:
        raise ShapeMismatchError("model, basis and operator disagree on the block size")
    delta = np.asarray(delta, dtype=float).ravel()
    blocks = sample_mggd(model, count, seed) @ basis.detail_rows
    if mean_block is not None:
        blocks = blocks + np.asarray(mean_block, dtype=float).ravel()

    integral = IntegralOperator(rows=op.block_side, cols=op.block_side)
    distortions = integral.cumulate(blocks @ (op.q_m - np.eye(op.n)).T)
    return np.mean(np.abs(distortions) <= delta + atol, axis=0)
