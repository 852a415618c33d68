import os

import numpy as np
import pytest
from PIL import Image

from models.ggd import MggdModel
from services.ggd_model import sample_mggd, scatter_factor
from services.measurement_design import assemble_q, build_design_problem, svt_solve
from services.refine_pipeline import compute_delta_targets
from services.transforms import build_wavelet_basis


def white_model(n: int, beta: float = 1.0) -> MggdModel:
    """Prior whose covariance is the identity on the n-1 detail coefficients."""
    return MggdModel(beta=beta, scatter=scatter_factor(n - 1, beta) * np.eye(n - 1))


def random_spd(dim: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    return a @ a.T / dim + 0.5 * np.eye(dim)


def synthetic_blocks(model: MggdModel, basis, count: int, seed: int, mean: float = 0.5) -> np.ndarray:
    return sample_mggd(model, count, seed) @ basis.detail_rows + mean


def solve_white_design(block_side: int, corpus_size: int, n_components: int, max_iterations: int,
                       seed: int = 11):
    basis = build_wavelet_basis(block_side, None, "db2")
    model = white_model(basis.n)
    blocks = synthetic_blocks(model, basis, corpus_size, seed)
    targets = compute_delta_targets(blocks, n_components=n_components, quantile=0.95)
    problem = build_design_problem(basis, model, targets, eps=0.05)
    scale = float(np.linalg.norm(problem.b, axis=0).max())
    result = svt_solve(problem, max_iterations=max_iterations, feas_tol=1e-6 * scale,
                       rel_tol=1e-6, log_every=max_iterations)
    design = assemble_q(result.p, problem, converged=result.converged)
    return {
        "basis": basis,
        "model": model,
        "blocks": blocks,
        "targets": targets,
        "problem": problem,
        "result": result,
        "design": design,
        "scale": scale,
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def design4():
    """f = 4 design from a 50-block synthetic corpus."""
    return solve_white_design(block_side=4, corpus_size=50, n_components=5, max_iterations=5000)


@pytest.fixture(scope="session")
def design8():
    """f = 8 design from a 500-block synthetic corpus."""
    return solve_white_design(block_side=8, corpus_size=500, n_components=10, max_iterations=30000)


@pytest.fixture(scope="session")
def desk_images():
    """100 smooth 32 x 32 test images."""
    rng = np.random.default_rng(99)
    return [smooth_image(rng, 32) for _ in range(100)]


@pytest.fixture
def heatmap_correlation_floor():
    """Exact/estimated k = 7 map correlation floor at M = rank/2 for design8, set below the pilot run."""
    return 0.5


def write_pgm(path: str, image: np.ndarray):
    Image.fromarray(np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)).save(path, format="PPM")


def smooth_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Low-frequency random field in [0, 1]."""
    y, x = np.mgrid[0:size, 0:size] / size
    field = 0.5 + 0.2 * np.sin(2 * np.pi * (rng.uniform(0.5, 2) * x + rng.uniform(0, 1)))
    field += 0.2 * np.cos(2 * np.pi * (rng.uniform(0.5, 2) * y + rng.uniform(0, 1)))
    field += 0.05 * rng.standard_normal((size, size))
    return np.clip(field, 0.0, 1.0)


@pytest.fixture
def image_corpora(tmp_path):
    """Disjoint train/test PGM directories."""
    rng = np.random.default_rng(7)
    train = tmp_path / "train"
    test = tmp_path / "test"
    train.mkdir()
    test.mkdir()
    for i in range(40):
        write_pgm(os.path.join(train, f"train_{i:03d}.pgm"), smooth_image(rng, 32))
    for i in range(3):
        write_pgm(os.path.join(test, f"test_{i:03d}.pgm"), smooth_image(rng, 16))
    return str(train), str(test)
