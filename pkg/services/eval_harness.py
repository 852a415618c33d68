import logging
import os
import time
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import Settings
from models.design import SensingDesign, SensingOperatorPair, SvtResult
from models.evaluation import Corpus, EvalRecord, EvalSummaryRow
from models.ggd import BetaFitReport, MggdModel
from models.transforms import WaveletBasis
from services import serialization
from services.ggd_model import fit_mggd, scatter_from_covariance, verify_scatter_factor
from services.image_io import load_corpus, load_grayscale, downsample, write_heatmap
from services.measurement_design import (
    assemble_q,
    build_design_problem,
    make_sensing_operator,
    svt_solve,
)
from services.refine_pipeline import (
    compute_delta_targets,
    estimate_box_filtered,
    estimate_integral,
    pca_operator,
    sense,
)
from services.transforms import (
    box_filter_from_integral,
    build_wavelet_basis,
    crop_to_layout,
    integral_transform,
    make_block_layout,
    rsnr,
)
from utils.errors import ConfigurationError, DomainError, RankError

logger = logging.getLogger(__name__)


def _out(settings: Settings, name: str) -> str:
    return os.path.join(settings.out_dir, name)


def basis_for(settings: Settings) -> WaveletBasis:
    return build_wavelet_basis(settings.block_side, settings.wavelet_levels, settings.wavelet_family)


def load_training_blocks(settings: Settings) -> Tuple[Corpus, np.ndarray]:
    """Training images downsampled to one f x f block each, as raster rows."""
    if not settings.train_dir:
        raise ConfigurationError("train_dir is not configured")
    corpus = load_corpus(settings.train_dir, "train", settings.block_side, settings.downsample)
    if corpus.split != "train":
        raise ConfigurationError("design inputs must come from the training split")
    blocks = np.stack([image.ravel() for image in corpus.images])
    return corpus, blocks


def load_test_corpus(settings: Settings) -> Corpus:
    if not settings.test_dir:
        raise ConfigurationError("test_dir is not configured")
    if settings.train_dir and os.path.realpath(settings.test_dir) == os.path.realpath(settings.train_dir):
        raise ConfigurationError("test_dir and train_dir point to the same corpus")
    corpus = load_corpus(settings.test_dir, "test", settings.working_size, settings.downsample)
    if corpus.split != "test":
        raise ConfigurationError("evaluation must run on the test split")
    return corpus


def cmd_fit(settings: Settings) -> Tuple[MggdModel, BetaFitReport]:
    """Fit the MGGD prior of detail wavelet coefficients and write model + beta report."""
    basis = basis_for(settings)
    corpus, blocks = load_training_blocks(settings)

    floor = settings.n_components + 1
    if len(corpus) < floor:
        raise DomainError(f"too few training images: {len(corpus)} < {floor}")
    if len(corpus) < basis.n:
        logger.warning(f"Only {len(corpus)} training images for a {basis.n - 1}-dimensional covariance")

    coefficients = basis.analyze(blocks)[:, 1:]
    min_samples = min(100, len(corpus))
    if min_samples < 100:
        logger.warning(f"Fitting beta from {min_samples} samples per coordinate (fewer than 100)")
    model, report, cov = fit_mggd(coefficients, settings.beta_grid, settings.histogram_bins,
                                  min_samples=min_samples)

    if settings.verify_samples:
        analytic, empirical = verify_scatter_factor(model.dim, model.beta, settings.verify_samples, settings.seed)
        if abs(empirical - analytic) > 0.02 * analytic:
            logger.warning(f"Using the calibrated scatter factor {empirical:.6f} instead of {analytic:.6f}")
            model = MggdModel(beta=model.beta, factor=empirical,
                              scatter=scatter_from_covariance(cov, model.beta, factor=empirical))

    serialization.write_model(settings.resolved_model_path(), model)
    serialization.write_beta_report_csv(_out(settings, "beta_fit.csv"), report)
    logger.info(f"✅ Model written to {settings.resolved_model_path()} (beta={model.beta}, dim={model.dim})")
    return model, report


def cmd_design(settings: Settings, model: Optional[MggdModel] = None) -> Tuple[SensingDesign, SvtResult]:
    """Delta targets, conic program, SVT solve and Q* assembly; writes the design and its reports."""
    if model is None:
        model = serialization.read_model(settings.resolved_model_path())
    basis = basis_for(settings)
    corpus, blocks = load_training_blocks(settings)

    if settings.delta_override is not None:
        delta = np.full(basis.n, float(settings.delta_override))
        logger.info(f"Using a constant distortion limit {settings.delta_override}")
    else:
        targets = compute_delta_targets(blocks, settings.n_components, settings.quantile,
                                        corpus_id=corpus.source_dir or "")
        serialization.write_delta_csv(_out(settings, "delta_targets.csv"), targets)
        delta = targets.delta

    problem = build_design_problem(basis, model, delta, settings.eps)
    b_scale = float(np.linalg.norm(problem.b, axis=0).max())
    feas_tol = settings.feas_tol * b_scale if b_scale > 0 else settings.feas_tol

    result = svt_solve(
        problem,
        tau=settings.tau,
        max_iterations=settings.max_iterations,
        feas_tol=feas_tol,
        rel_tol=settings.rel_tol,
        step_factor=settings.step_factor,
        norm_inflation=settings.norm_inflation,
        power_iterations=settings.power_iterations,
        seed=settings.seed,
        log_every=settings.log_every,
        tau_factor=settings.tau_factor,
        accelerate=settings.accelerate,
    )
    design = assemble_q(result.p, problem, converged=result.converged)

    serialization.write_design(settings.resolved_design_path(), design)
    serialization.write_design_summary_csv(_out(settings, "design_summary.csv"), design)
    serialization.write_history_csv(_out(settings, "svt_history.csv"), result.history)
    serialization.write_design_info_csv(_out(settings, "design_info.csv"), {
        "block_side": basis.block_side,
        "n": basis.n,
        "rank_p": design.rank_p,
        "rank_q": design.rank_q,
        "ones_residual": design.ones_residual,
        "converged": design.converged,
        "iterations": result.iterations,
        "max_violation": result.max_violation,
        "tau": result.tau,
        "eta": result.eta,
        "eps": settings.eps,
    })

    print(f"rank(Q*) = {design.rank_q}, rank(P*) + 1 = {design.rank_p + 1}")
    if not design.converged:
        logger.warning("Design written without convergence; see svt_history.csv")
    logger.info(f"✅ Design written to {settings.resolved_design_path()}")
    return design, result


def build_operators(settings: Settings, design: SensingDesign,
                    training_blocks: Optional[np.ndarray] = None) -> List[Tuple[str, SensingOperatorPair]]:
    operators = []
    for m_rank in settings.ranks:
        try:
            operators.append(("refine", make_sensing_operator(design, m_rank)))
        except RankError as e:
            logger.warning(f"Skipping M={m_rank}: {e}")
            continue
        if training_blocks is not None and m_rank >= 2:
            try:
                operators.append(("pca", pca_operator(training_blocks, m_rank - 1)))
            except DomainError as e:
                logger.warning(f"Skipping PCA baseline at M={m_rank}: {e}")
    if settings.include_identity:
        operators.append(("identity", SensingOperatorPair.identity(design.block_side)))
    return operators


def evaluate_image(image: np.ndarray, image_id: str, method: str, op: SensingOperatorPair,
                   filters: List[int]) -> EvalRecord:
    layout = make_block_layout(image.shape[0], image.shape[1], op.block_side)
    exact = integral_transform(crop_to_layout(image, layout), layout.integral)
    meas = sense(image, op, layout)

    start = time.perf_counter()
    estimate = estimate_integral(meas, op, layout)
    elapsed = time.perf_counter() - start

    boxes = {
        k: rsnr(box_filter_from_integral(estimate, k), box_filter_from_integral(exact, k))
        for k in filters
    }
    return EvalRecord(
        image_id=image_id,
        method=method,
        m_rank=op.rank,
        block_side=op.block_side,
        measurement_rate=op.measurement_rate,
        rsnr_integral=rsnr(estimate, exact),
        rsnr_box=boxes,
        estimate_time_s=elapsed,
    )


def summarize(records: List[EvalRecord], filters: List[int]) -> List[EvalSummaryRow]:
    groups: Dict[Tuple[str, int], List[EvalRecord]] = {}
    for record in records:
        groups.setdefault((record.method, record.m_rank), []).append(record)

    summary = []
    for (method, m_rank), group in groups.items():
        summary.append(EvalSummaryRow(
            method=method,
            m_rank=m_rank,
            block_side=group[0].block_side,
            measurement_rate=group[0].measurement_rate,
            images=len(group),
            mean_rsnr_integral=float(np.mean([r.rsnr_integral for r in group])),
            mean_rsnr_box={k: float(np.mean([r.rsnr_box[k] for r in group])) for k in filters},
            mean_estimate_time_s=float(np.mean([r.estimate_time_s for r in group])),
        ))
    return summary


def cmd_evaluate(settings: Settings, design: Optional[SensingDesign] = None) -> Tuple[List[EvalRecord], List[EvalSummaryRow]]:
    """RSNR and estimate time of every operator in the sweep on every test image."""
    if design is None:
        design = serialization.read_design(settings.resolved_design_path())
    if design.block_side != settings.block_side:
        raise ConfigurationError(
            f"design uses f={design.block_side} but block_side={settings.block_side} is configured"
        )
    corpus = load_test_corpus(settings)

    training_blocks = None
    if settings.include_pca_baseline:
        if settings.train_dir:
            _, training_blocks = load_training_blocks(settings)
        else:
            logger.warning("No train_dir configured; PCA baseline skipped")

    filters = list(settings.filters)
    records = []
    for method, op in build_operators(settings, design, training_blocks):
        for image, image_id in zip(corpus.images, corpus.ids):
            try:
                records.append(evaluate_image(image, image_id, method, op, filters))
            except DomainError as e:
                logger.warning(f"Skipping {image_id} for {method} M={op.rank}: {e}")

    summary = summarize(records, filters)
    serialization.write_eval_records_csv(_out(settings, "eval_records.csv"), records, filters)
    serialization.write_summary_csv(_out(settings, "eval_summary.csv"), summary, filters)

    for row in summary:
        boxes = ", ".join(f"k={k}: {row.mean_rsnr_box[k]:.2f} dB" for k in filters)
        logger.info(
            f"{row.method:>8} M={row.m_rank:<5} rate={row.measurement_rate:.4f} "
            f"RSNR={row.mean_rsnr_integral:.2f} dB ({boxes}) time={row.mean_estimate_time_s:.2e} s"
        )
    return records, summary


def cmd_heatmap(settings: Settings, image_path: str, m_rank: Optional[int] = None, k: int = 7,
                identity: bool = False, design: Optional[SensingDesign] = None) -> Dict[str, object]:
    """Exact and estimated k x k box-filter maps as 8-bit images with min/max side files."""
    if identity:
        op = SensingOperatorPair.identity(settings.block_side)
    else:
        if design is None:
            design = serialization.read_design(settings.resolved_design_path())
        if m_rank is None:
            m_rank = max(1, design.rank_q // 2)
        op = make_sensing_operator(design, m_rank)

    image = downsample(load_grayscale(image_path), settings.working_size, settings.downsample)
    layout = make_block_layout(image.shape[0], image.shape[1], op.block_side)
    exact = box_filter_from_integral(integral_transform(crop_to_layout(image, layout), layout.integral), k)
    estimate = estimate_box_filtered(sense(image, op, layout), op, layout, k)

    stem = os.path.splitext(os.path.basename(image_path))[0]
    exact_path = _out(settings, f"{stem}_k{k}_exact.pgm")
    estimate_path = _out(settings, f"{stem}_k{k}_M{op.rank}_estimate.pgm")
    write_heatmap(exact_path, exact)
    write_heatmap(estimate_path, estimate)

    if exact.std() > 0 and estimate.std() > 0:
        correlation = float(np.corrcoef(exact.ravel(), estimate.ravel())[0, 1])
    else:
        correlation = 1.0 if np.allclose(exact, estimate) else 0.0
    logger.info(f"Heatmap correlation (k={k}, M={op.rank}): {correlation:.4f}")
    return {"exact": exact_path, "estimate": estimate_path, "correlation": correlation, "m_rank": op.rank}
