"""
Design of low-rank sensing matrices for integral-image recovery.

The conic program is

    minimize    tau*||P||_* + 0.5*||P||_F^2
    subject to  ||A_i(P) - b_i|| <= Delta_i,   i = 0..n-1

with A_i(P) = sigma_u P^T h_i and b_i = sigma_u h_i. All constraints are
handled at once in stacked form: A(P) is the (n-1) x n matrix whose column
i is A_i(P), so A(P) = H-cumulate of the rows of sigma_u P^T, and the
adjoint is A*(Y) = (H^T-cumulate of the rows of Y)^T sigma_u.
"""
import logging
from typing import List, Optional, Tuple, Union

import numpy as np

from models.design import (
    DesignProblem,
    SensingDesign,
    SensingOperatorPair,
    SvtHistoryEntry,
    SvtResult,
    SvtState,
)
from models.ggd import MggdModel
from models.pipeline import DeltaTargets
from models.transforms import IntegralOperator, WaveletBasis
from services.ggd_model import delta_bound_from_probability, symmetric_sqrt
from utils.errors import DomainError, NumericalFailureError, RankError, ShapeMismatchError

logger = logging.getLogger(__name__)

RANK_THRESHOLD = 1e-8


def build_design_problem(basis: WaveletBasis, model: MggdModel,
                         delta: Union[np.ndarray, DeltaTargets], eps: float) -> DesignProblem:
    """
    Whiten the detail rows of the basis with the square root of the model
    covariance and turn each distortion limit delta_i into the standard
    deviation bound Delta_i that guarantees P(|d_i| <= delta_i) >= 1 - eps.
    """
    n = basis.n
    if model.dim != n - 1:
        raise ShapeMismatchError(f"model dimension {model.dim} does not match n-1 = {n - 1}")
    if isinstance(delta, DeltaTargets):
        delta = delta.delta
    delta = np.asarray(delta, dtype=float).ravel()
    if delta.shape != (n,):
        raise ShapeMismatchError(f"expected {n} distortion limits, got {delta.size}")
    if np.any(delta < 0):
        raise DomainError("distortion limits must be nonnegative")
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")

    integral = IntegralOperator(rows=basis.block_side, cols=basis.block_side)
    sigma_u = symmetric_sqrt(model.covariance()) @ basis.detail_rows
    b = integral.cumulate(sigma_u)
    delta_bounds = delta_bound_from_probability(delta, eps, model.beta)

    return DesignProblem(
        sigma_u=sigma_u,
        integral=integral,
        b=b,
        delta_bounds=delta_bounds,
        eps=eps,
        beta=model.shape,
        delta=delta,
    )


def apply_forward(p: np.ndarray, problem: DesignProblem) -> np.ndarray:
    """Stacked A(P): column i is sigma_u P^T h_i."""
    n = problem.n
    if np.shape(p) != (n, n):
        raise ShapeMismatchError(f"P must be {n}x{n}, got {np.shape(p)}")
    return problem.integral.cumulate(problem.sigma_u @ p.T)


def apply_adjoint(y: np.ndarray, problem: DesignProblem) -> np.ndarray:
    """A*(Y) = sum_i h_i y_i^T sigma_u for Y with y_i as column i."""
    n = problem.n
    if np.shape(y) != (n - 1, n):
        raise ShapeMismatchError(f"Y must be {n - 1}x{n}, got {np.shape(y)}")
    return problem.integral.cumulate_adjoint(y).T @ problem.sigma_u


def _shrink(x: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    shrunk = np.maximum(s - tau, 0.0)
    keep = shrunk > 0
    return (u[:, keep] * shrunk[keep]) @ vt[keep], shrunk


def shrink_singular_values(x: np.ndarray, tau: float) -> np.ndarray:
    """D_tau(X): soft-threshold the singular values of X by tau."""
    if tau < 0:
        raise DomainError(f"tau must be nonnegative, got {tau}")
    x = np.asarray(x, dtype=float)
    if tau == 0:
        return x.copy()
    return _shrink(x, tau)[0]


def project_soc(x: np.ndarray, t: float) -> Tuple[np.ndarray, float]:
    """Euclidean projection of (x, t) onto the cone {||x|| <= t}."""
    x = np.asarray(x, dtype=float)
    norm = float(np.linalg.norm(x))
    if norm <= t:
        return x.copy(), float(t)
    if norm <= -t:
        return np.zeros_like(x), 0.0
    scale = (norm + t) / (2.0 * norm)
    return scale * x, scale * norm


def project_soc_batch(y: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """`project_soc` applied to every column pair (y[:, i], s[i])."""
    norms = np.linalg.norm(y, axis=0)
    inside = norms <= s
    polar = norms <= -s
    middle = ~(inside | polar)

    scale = np.zeros_like(norms)
    scale[inside] = 1.0
    scale[middle] = (norms[middle] + s[middle]) / (2.0 * norms[middle])

    new_s = np.where(inside, s, scale * norms)
    new_s[polar] = 0.0
    return y * scale, new_s


def estimate_spectral_norm(problem: DesignProblem, iterations: int = 100, seed: int = 0,
                           return_history: bool = False):
    """
    Power iteration on A*A from a seeded random start. The per-step
    Rayleigh quotients are nondecreasing; their square root estimates ||A||.
    """
    if iterations < 50:
        raise DomainError(f"power iteration needs >= 50 steps, got {iterations}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((problem.n, problem.n))
    x /= np.linalg.norm(x)

    history: List[float] = []
    estimate = 0.0
    for _ in range(iterations):
        z = apply_adjoint(apply_forward(x, problem), problem)
        rayleigh = float(np.vdot(x, z))
        estimate = max(estimate, np.sqrt(max(rayleigh, 0.0)))
        history.append(estimate)
        norm = np.linalg.norm(z)
        if norm == 0:
            break
        x = z / norm

    if return_history:
        return estimate, history
    return estimate


def default_tau(problem: DesignProblem, factor: float = 0.1) -> float:
    """factor * ||A*(B)||_2 with B the stacked b_i."""
    norm = float(np.linalg.norm(apply_adjoint(problem.b, problem), ord=2))
    if norm == 0:
        logger.warning("A*(b) vanishes; falling back to tau = factor")
        return factor
    return factor * norm


def nuclear_norm(x: np.ndarray) -> float:
    return float(np.linalg.svd(x, compute_uv=False).sum())


def p2_objective(p: np.ndarray, tau: float) -> float:
    """tau*||P||_* + 0.5*||P||_F^2"""
    return tau * nuclear_norm(p) + 0.5 * float(np.sum(p * p))


def constraint_violations(p: np.ndarray, problem: DesignProblem) -> np.ndarray:
    """Per-location margin ||A_i(P) - b_i|| - Delta_i (<= 0 when satisfied)."""
    residual = apply_forward(p, problem) - problem.b
    return np.linalg.norm(residual, axis=0) - problem.delta_bounds


def svt_solve(problem: DesignProblem,
              tau: Optional[float] = None,
              max_iterations: int = 5000,
              feas_tol: float = 1e-6,
              rel_tol: float = 1e-6,
              step_factor: float = 1.9,
              norm_inflation: float = 1.05,
              power_iterations: int = 100,
              seed: int = 0,
              log_every: int = 250,
              tau_factor: float = 0.1,
              accelerate: bool = True) -> SvtResult:
    """
    Uzawa/SVT iteration for the smoothed nuclear-norm program.

    Each step shrinks A*(Y) to get P, then takes a projected dual ascent
    step on every cone (y_i, s_i) with residual (b_i - A_i(P), -Delta_i).
    Stops once the largest violation is within `feas_tol` (absolute) and
    the relative primal change within `rel_tol`.

    With `accelerate` the dual step is taken from a Nesterov extrapolation
    of the last two dual iterates, with step 1/||A||^2 (step_factor capped
    at 1) and the momentum reset whenever the projected ascent direction
    and the last dual move disagree.
    """
    if tau is None:
        tau = default_tau(problem, tau_factor)
    if not tau > 0:
        raise DomainError(f"tau must be positive, got {tau}")

    operator_norm = estimate_spectral_norm(problem, power_iterations, seed)
    if operator_norm == 0:
        raise NumericalFailureError("operator A vanishes", 0)
    eta_factor = min(step_factor, 1.0) if accelerate else step_factor
    eta = eta_factor / (norm_inflation * operator_norm) ** 2
    state = SvtState.zeros(problem.n, tau, eta, operator_norm)
    logger.info(f"SVT start: n={problem.n}, tau={tau:.4e}, eta={eta:.4e}, ||A||~{operator_norm:.4e}, "
                f"accelerate={accelerate}")

    b = problem.b
    bounds = problem.delta_bounds
    history: List[SvtHistoryEntry] = []
    converged = False
    violation = np.inf

    # dual point the next step is taken from; the iterate itself when not accelerating
    look_y, look_s = state.dual_y, state.dual_s
    momentum = 1.0
    restarts = 0

    for k in range(1, max_iterations + 1):
        try:
            p, shrunk = _shrink(apply_adjoint(look_y, problem), tau)
        except np.linalg.LinAlgError as e:
            raise NumericalFailureError(f"SVD failed: {e}", k)
        ap = apply_forward(p, problem)
        residual = b - ap
        violation = float(np.max(np.linalg.norm(residual, axis=0) - bounds))

        change = float(np.linalg.norm(p - state.p))
        p_norm = float(np.linalg.norm(p))
        rel_change = change / p_norm if p_norm > 0 else (0.0 if change == 0 else np.inf)
        nuclear = float(shrunk.sum())

        if not (np.isfinite(violation) and np.isfinite(nuclear) and np.isfinite(p_norm)):
            raise NumericalFailureError("non-finite iterate in SVT", k)

        history.append(SvtHistoryEntry(iteration=k, violation=violation,
                                       rel_change=rel_change, nuclear_norm=nuclear))
        if k % log_every == 0:
            logger.info(f"SVT iter {k}: violation={violation:.3e}, rel_change={rel_change:.3e}, "
                        f"||P||_*={nuclear:.4e}")

        new_y, new_s = project_soc_batch(look_y + eta * residual, look_s - eta * bounds)
        if accelerate:
            move_y = new_y - state.dual_y
            move_s = new_s - state.dual_s
            agreement = float(np.vdot(new_y - look_y, move_y) + np.dot(new_s - look_s, move_s))
            if agreement < 0:
                momentum = 1.0
                restarts += 1
                look_y, look_s = new_y, new_s
            else:
                next_momentum = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum * momentum))
                weight = (momentum - 1.0) / next_momentum
                look_y = new_y + weight * move_y
                look_s = new_s + weight * move_s
                momentum = next_momentum
        else:
            look_y, look_s = new_y, new_s

        state.dual_y, state.dual_s = new_y, new_s
        state.p = p
        state.iteration = k

        if violation <= feas_tol and rel_change <= rel_tol:
            converged = True
            break

    if converged:
        logger.info(f"✅ SVT converged after {state.iteration} iterations (violation {violation:.3e}, "
                    f"{restarts} momentum restarts)")
    else:
        logger.warning(f"SVT stopped at max_iterations={max_iterations} with violation {violation:.3e}")

    return SvtResult(
        p=state.p,
        history=history,
        converged=converged,
        iterations=state.iteration,
        tau=tau,
        eta=eta,
        operator_norm=operator_norm,
        max_violation=violation,
        accelerated=accelerate,
        restarts=restarts,
    )


def numerical_rank(singular_values: np.ndarray, reference: Optional[float] = None,
                   rel: float = RANK_THRESHOLD) -> int:
    """Number of singular values above rel * reference (default: the largest)."""
    values = np.asarray(singular_values, dtype=float)
    if values.size == 0:
        return 0
    reference = float(values.max()) if reference is None else reference
    if reference <= 0:
        return 0
    return int(np.count_nonzero(values > rel * reference))


def assemble_q(p_star: np.ndarray, problem: Optional[DesignProblem] = None,
               converged: bool = True) -> SensingDesign:
    """Q* = P* + (1/n) O with its full SVD and the rank(Q*) = rank(P*) + 1 check."""
    p_star = np.asarray(p_star, dtype=float)
    n = p_star.shape[0]
    if p_star.shape != (n, n):
        raise ShapeMismatchError(f"P* must be square, got {p_star.shape}")

    q = p_star + 1.0 / n
    try:
        w, lam, vt = np.linalg.svd(q)
        p_values = np.linalg.svd(p_star, compute_uv=False)
    except np.linalg.LinAlgError as e:
        raise NumericalFailureError(f"SVD of Q* failed: {e}")

    rank_q = numerical_rank(lam)
    rank_p = numerical_rank(p_values, reference=lam[0])
    ones_residual = float(np.linalg.norm(p_star @ np.full(n, 1.0 / np.sqrt(n))))

    if rank_q != rank_p + 1:
        logger.warning(f"rank(Q*)={rank_q} but rank(P*)+1={rank_p + 1}")
    else:
        logger.info(f"rank(Q*)={rank_q} = rank(P*)+1, ||P* 1||/sqrt(n)={ones_residual:.3e}")

    margins = constraint_violations(p_star, problem) if problem is not None else np.zeros(n)

    return SensingDesign(
        q=q,
        singular_values=lam,
        left_vectors=w,
        right_vectors=vt.T,
        feasibility_margins=margins,
        rank_p=rank_p,
        rank_q=rank_q,
        ones_residual=ones_residual,
        converged=converged,
    )


def make_sensing_operator(design: SensingDesign, m_rank: int) -> SensingOperatorPair:
    """phi = Lambda_M^{1/2} V_M^T and phi_dual = Lambda_M^{1/2} W_M^T."""
    if m_rank < 1:
        raise DomainError(f"rank must be >= 1, got {m_rank}")
    if m_rank > design.rank_q:
        raise RankError(m_rank, design.rank_q)

    root = np.sqrt(design.singular_values[:m_rank])
    phi = root[:, None] * design.right_vectors[:, :m_rank].T
    phi_dual = root[:, None] * design.left_vectors[:, :m_rank].T
    return SensingOperatorPair(
        phi=phi,
        phi_dual=phi_dual,
        rank=m_rank,
        block_side=design.block_side,
        singular_values=design.singular_values[:m_rank],
    )
