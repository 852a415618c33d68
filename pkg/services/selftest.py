"""Oracle checks at f = 4, run by `cli.py selftest`."""
import logging
from typing import Callable, List, Tuple

import numpy as np

from models.ggd import MggdModel
from models.design import DesignProblem
from services.ggd_model import inv_reg_lower_incomplete_gamma, reg_lower_incomplete_gamma, scatter_factor
from services.measurement_design import (
    apply_adjoint,
    apply_forward,
    assemble_q,
    build_design_problem,
    estimate_spectral_norm,
    make_sensing_operator,
    project_soc,
    shrink_singular_values,
    svt_solve,
)
from services.transforms import (
    box_filter_from_integral,
    build_wavelet_basis,
    integral_row,
    integral_transform,
)
from models.transforms import IntegralOperator

logger = logging.getLogger(__name__)

CheckResult = Tuple[str, bool, str]


def brute_force_integral(grid: np.ndarray) -> np.ndarray:
    rows, cols = grid.shape
    out = np.zeros_like(grid)
    for r in range(rows):
        for c in range(cols):
            out[r, c] = grid[: r + 1, : c + 1].sum()
    return out


def brute_force_box(grid: np.ndarray, k: int) -> np.ndarray:
    rows, cols = grid.shape
    half = k // 2
    out = np.zeros_like(grid)
    for r in range(rows):
        for c in range(cols):
            out[r, c] = grid[max(r - half, 0): r + half + 1, max(c - half, 0): c + half + 1].sum()
    return out


def dense_operator(problem: DesignProblem) -> np.ndarray:
    """Explicit n(n-1) x n^2 matrix of P -> A(P) (row-major vec on both sides)."""
    n = problem.n
    columns = []
    for j in range(n * n):
        e = np.zeros(n * n)
        e[j] = 1.0
        columns.append(apply_forward(e.reshape(n, n), problem).ravel())
    return np.column_stack(columns)


def white_problem(block_side: int = 4, delta_scale: float = 0.5, eps: float = 0.05,
                  beta: float = 1.0, family: str = "haar") -> DesignProblem:
    """Design problem with identity covariance and delta = delta_scale * ||b_i|| / sqrt(n)."""
    basis = build_wavelet_basis(block_side, None, family)
    n = basis.n
    model = MggdModel(beta=beta, scatter=scatter_factor(n - 1, beta) * np.eye(n - 1))
    integral = IntegralOperator(rows=block_side, cols=block_side)
    b = integral.cumulate(basis.detail_rows)
    delta = delta_scale * np.linalg.norm(b, axis=0)
    return build_design_problem(basis, model, delta, eps)


def check_integral_oracles(rng: np.random.Generator) -> Tuple[bool, str]:
    for _ in range(20):
        rows, cols = rng.integers(1, 9, size=2)
        grid = rng.integers(0, 256, size=(rows, cols))
        op = IntegralOperator(rows=int(rows), cols=int(cols))
        integral = integral_transform(grid, op)
        if not np.array_equal(integral, brute_force_integral(grid)):
            return False, f"integral mismatch on {rows}x{cols}"
        i = int(rng.integers(0, op.n))
        if integral_row(op, i) @ grid.ravel() != integral.ravel()[i]:
            return False, f"h_i mismatch at {i}"
        for k in (1, 3, 5, 7):
            if k <= min(rows, cols) and not np.array_equal(box_filter_from_integral(integral, k),
                                                           brute_force_box(grid, k)):
                return False, f"box filter k={k} mismatch on {rows}x{cols}"
    return True, "integral, h_i and box filter match brute force"


def check_wavelet_orthogonality(rng: np.random.Generator) -> Tuple[bool, str]:
    for family in ("haar", "db2", "db4"):
        for f in (2, 4, 8):
            basis = build_wavelet_basis(f, None, family)
            error = np.linalg.norm(basis.matrix_t @ basis.matrix_t.T - np.eye(basis.n))
            if error > 1e-10 * np.sqrt(basis.n):
                return False, f"{family} f={f} orthogonality error {error:.2e}"
    return True, "wavelet bases orthogonal"


def check_adjoint(rng: np.random.Generator) -> Tuple[bool, str]:
    problem = white_problem()
    n = problem.n
    for _ in range(20):
        p = rng.standard_normal((n, n))
        y = rng.standard_normal((n - 1, n))
        ap = apply_forward(p, problem)
        gap = abs(np.vdot(ap, y) - np.vdot(p, apply_adjoint(y, problem)))
        if gap > 1e-10 * np.linalg.norm(ap) * np.linalg.norm(y):
            return False, f"adjoint gap {gap:.2e}"
    return True, "adjoint identity holds"


def check_cone_and_prox(rng: np.random.Generator) -> Tuple[bool, str]:
    for _ in range(100):
        x1, t1 = rng.standard_normal(5), rng.standard_normal()
        x2, t2 = rng.standard_normal(5), rng.standard_normal()
        p1, s1 = project_soc(x1, t1)
        p2, s2 = project_soc(x2, t2)
        again, s_again = project_soc(p1, s1)
        if np.abs(again - p1).max() > 1e-10 or abs(s_again - s1) > 1e-10:
            return False, "cone projection not idempotent"
        lhs = np.linalg.norm(np.append(p1 - p2, s1 - s2))
        rhs = np.linalg.norm(np.append(x1 - x2, t1 - t2))
        if lhs > rhs + 1e-10:
            return False, "cone projection expands distances"
    x = rng.standard_normal((6, 6))
    shrunk = shrink_singular_values(x, 0.7)
    gap = np.linalg.svd(x - shrunk, compute_uv=False).max()
    if gap > 0.7 + 1e-10:
        return False, f"prox residual singular value {gap:.3e} > tau"
    return True, "cone projection and singular value shrinkage"


def check_spectral_norm(rng: np.random.Generator) -> Tuple[bool, str]:
    problem = white_problem()
    dense = np.linalg.norm(dense_operator(problem), ord=2)
    estimate = estimate_spectral_norm(problem, iterations=200, seed=int(rng.integers(2**32)))
    if abs(estimate - dense) > 0.01 * dense:
        return False, f"power iteration {estimate:.6f} vs dense {dense:.6f}"
    return True, f"||A|| = {dense:.6f}"


def check_small_design(rng: np.random.Generator) -> Tuple[bool, str]:
    problem = white_problem(delta_scale=0.5)
    scale = float(np.linalg.norm(problem.b, axis=0).max())
    result = svt_solve(problem, max_iterations=5000, feas_tol=1e-6 * scale, rel_tol=1e-6, log_every=5000)
    if not result.converged:
        return False, f"solver stopped at violation {result.max_violation:.3e} after {result.iterations} iterations"
    design = assemble_q(result.p, problem, result.converged)
    if design.rank_q != design.rank_p + 1:
        return False, f"rank(Q)={design.rank_q}, rank(P)={design.rank_p}"
    m = max(1, design.rank_q - 1)
    op = make_sensing_operator(design, m)
    expected = np.sqrt(np.sum(design.singular_values[m:] ** 2))
    error = np.linalg.norm(op.q_m - design.q)
    if abs(error - expected) > 1e-8 * max(1.0, np.linalg.norm(design.q)):
        return False, f"Eckart-Young mismatch {error:.3e} vs {expected:.3e}"
    return True, f"design rank {design.rank_q} after {result.iterations} iterations"


def check_incomplete_gamma(rng: np.random.Generator) -> Tuple[bool, str]:
    for a in (0.5, 0.735, 1.0):
        for x in (0.1, 1.0, 10.0):
            back = inv_reg_lower_incomplete_gamma(a, reg_lower_incomplete_gamma(a, x))
            if abs(back - x) > 1e-8 * max(1.0, x):
                return False, f"roundtrip a={a}, x={x} gave {back}"
    return True, "incomplete gamma roundtrip"


CHECKS: List[Tuple[str, Callable[[np.random.Generator], Tuple[bool, str]]]] = [
    ("incomplete_gamma", check_incomplete_gamma),
    ("integral_oracles", check_integral_oracles),
    ("wavelet_orthogonality", check_wavelet_orthogonality),
    ("adjoint_identity", check_adjoint),
    ("cone_and_prox", check_cone_and_prox),
    ("spectral_norm", check_spectral_norm),
    ("small_design", check_small_design),
]


def run_selftest(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, check in CHECKS:
        try:
            ok, detail = check(rng)
        except Exception as e:
            ok, detail = False, f"{type(e).__name__}: {e}"
        if ok:
            logger.info(f"✅ {name}: {detail}")
        else:
            logger.error(f"❌ {name}: {detail}")
        results.append((name, ok, detail))
    return results
