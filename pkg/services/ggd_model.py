"""
Generalized Gaussian machinery: interval probabilities and their inverse
bound, scatter/covariance conversion, the radial MGGD sampler and the
histogram fit of the shape parameter.

Conventions: a univariate GGD is parameterized by its standard deviation
`std`; its scale is alpha = std * sqrt(Gamma(1/2b) / Gamma(3/2b)) and
P(|v| <= d) = P(1/(2b), (d / alpha)^(2b)) with P the regularized lower
incomplete gamma function.
"""
import logging
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from models.ggd import BetaFitReport, GgdShape, MggdModel
from utils.errors import DomainError, ShapeMismatchError, ZeroVarianceCorpusError

logger = logging.getLogger(__name__)

BetaLike = Union[float, GgdShape]

SAMPLE_CHUNK = 65536
# rounding-noise floors, relative to the magnitude of the data
ZERO_STD_REL = 1e-12
ZERO_COV_REL = 1e-24


def _beta(beta: BetaLike) -> float:
    if isinstance(beta, GgdShape):
        return beta.beta
    beta = float(beta)
    if not 0.0 < beta <= 1.0:
        raise DomainError(f"shape beta={beta} outside (0, 1]")
    return beta


def _std_to_scale_ratio(beta: float) -> float:
    """sqrt(Gamma(3/2b) / Gamma(1/2b)), i.e. std / alpha."""
    a = 1.0 / (2.0 * beta)
    return float(np.exp(0.5 * (special.gammaln(3.0 * a) - special.gammaln(a))))


def reg_lower_incomplete_gamma(a: float, x):
    """gamma(a, x) / Gamma(a). Accepts scalar or array `x`."""
    if not a > 0:
        raise DomainError(f"incomplete gamma needs a > 0, got {a}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError("incomplete gamma needs x >= 0")
    result = special.gammainc(a, x)
    return float(result) if result.ndim == 0 else result


def inv_reg_lower_incomplete_gamma(a: float, p: float) -> float:
    if not a > 0:
        raise DomainError(f"inverse incomplete gamma needs a > 0, got {a}")
    if not 0.0 <= p < 1.0:
        raise DomainError(f"inverse incomplete gamma needs 0 <= p < 1, got {p}")
    if p == 0.0:
        return 0.0

    x = float(special.gammaincinv(a, p))
    # one guarded Newton polish on the residual
    if x > 0:
        residual = special.gammainc(a, x) - p
        density = np.exp((a - 1.0) * np.log(x) - x - special.gammaln(a))
        if density > 0:
            candidate = x - residual / density
            if candidate > 0 and abs(special.gammainc(a, candidate) - p) < abs(residual):
                x = float(candidate)
    return x


def ggd_interval_probability(delta, scatter: float, beta: BetaLike):
    """P(|v| <= delta) for a zero-mean univariate GGD of standard deviation `scatter`."""
    beta = _beta(beta)
    if not scatter > 0:
        raise DomainError(f"interval probability needs a positive scale, got {scatter}")
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0):
        raise DomainError("delta must be nonnegative")

    z = (delta / scatter * _std_to_scale_ratio(beta)) ** (2.0 * beta)
    result = special.gammainc(1.0 / (2.0 * beta), z)
    return float(result) if result.ndim == 0 else result


def delta_bound_from_probability(delta_i, eps: float, beta: BetaLike):
    """
    Largest standard deviation Delta with P(|v| <= delta_i) >= 1 - eps.
    Vectorized over `delta_i`.
    """
    beta = _beta(beta)
    if not 0.0 < eps < 1.0:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    delta_i = np.asarray(delta_i, dtype=float)
    if np.any(delta_i < 0):
        raise DomainError("delta_i must be nonnegative")

    a = 1.0 / (2.0 * beta)
    x = inv_reg_lower_incomplete_gamma(a, 1.0 - eps)
    result = delta_i * _std_to_scale_ratio(beta) / x ** (1.0 / (2.0 * beta))
    return float(result) if result.ndim == 0 else result


def scatter_factor(dim: int, beta: BetaLike) -> float:
    """c(p, b) = p * Gamma(p/2b) / Gamma((p+2)/2b); scatter = c * covariance."""
    beta = _beta(beta)
    if dim < 1:
        raise DomainError(f"dimension must be >= 1, got {dim}")
    return float(dim * np.exp(
        special.gammaln(dim / (2.0 * beta)) - special.gammaln((dim + 2.0) / (2.0 * beta))
    ))


def _check_symmetric(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ShapeMismatchError(f"{what} must be square, got {mat.shape}")
    scale = max(np.abs(mat).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(mat - mat.T).max(initial=0.0) > 1e-10 * scale:
        raise DomainError(f"{what} is not symmetric")
    return mat


def scatter_from_covariance(cov: np.ndarray, beta: BetaLike, factor: Optional[float] = None) -> np.ndarray:
    cov = _check_symmetric(cov, "covariance")
    c = scatter_factor(cov.shape[0], beta) if factor is None else factor
    return c * cov


def covariance_from_scatter(scatter: np.ndarray, beta: BetaLike, factor: Optional[float] = None) -> np.ndarray:
    scatter = _check_symmetric(scatter, "scatter")
    c = scatter_factor(scatter.shape[0], beta) if factor is None else factor
    return scatter / c


def symmetric_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root, negative eigenvalues clipped at 0."""
    mat = np.asarray(mat, dtype=float)
    eigvals, eigvecs = np.linalg.eigh(0.5 * (mat + mat.T))
    root = (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T
    return 0.5 * (root + root.T)


def sample_mggd(model: MggdModel, count: int, seed: int) -> np.ndarray:
    """
    Draw `count` vectors r * S^{1/2} u with u uniform on the unit sphere and
    r^(2b) ~ Gamma(dim / 2b, 1). Deterministic for a given seed.
    """
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    dim = model.dim
    beta = model.beta
    root = symmetric_sqrt(model.scatter)
    rng = np.random.default_rng(seed)

    out = np.empty((count, dim))
    for start in range(0, count, SAMPLE_CHUNK):
        stop = min(start + SAMPLE_CHUNK, count)
        size = stop - start
        t = rng.gamma(shape=dim / (2.0 * beta), scale=1.0, size=size)
        r = t ** (1.0 / (2.0 * beta))
        g = rng.standard_normal((size, dim))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        u = np.divide(g, norms, out=np.zeros_like(g), where=norms > 0)
        out[start:stop] = (r[:, None] * u) @ root.T
    return out


def ggd_cdf(v, std: float, beta: BetaLike):
    """CDF of a zero-mean univariate GGD with standard deviation `std`."""
    beta = _beta(beta)
    if not std > 0:
        raise DomainError(f"std must be positive, got {std}")
    v = np.asarray(v, dtype=float)
    alpha = std / _std_to_scale_ratio(beta)
    z = (np.abs(v) / alpha) ** (2.0 * beta)
    return 0.5 + 0.5 * np.sign(v) * special.gammainc(1.0 / (2.0 * beta), z)


def ggd_bin_masses(edges: np.ndarray, std: float, beta: BetaLike) -> np.ndarray:
    return np.diff(ggd_cdf(np.asarray(edges, dtype=float), std, beta))


def _coordinates(samples) -> List[np.ndarray]:
    if isinstance(samples, np.ndarray):
        if samples.ndim == 1:
            return [samples.astype(float)]
        if samples.ndim == 2:
            return [samples[:, j].astype(float) for j in range(samples.shape[1])]
        raise ShapeMismatchError(f"samples must be 1D or 2D, got {samples.ndim}D")
    return [np.asarray(column, dtype=float).ravel() for column in samples]


def chi2_distance(h: np.ndarray, t: np.ndarray) -> float:
    """sum (h - t)^2 / (h + t) over bins where h + t > 0."""
    total = h + t
    mask = total > 0
    return float(np.sum((h[mask] - t[mask]) ** 2 / total[mask]))


def fit_beta(samples: Union[np.ndarray, Iterable[Sequence[float]]],
             beta_grid: Sequence[float],
             bin_count: int = 101,
             min_samples: int = 100) -> BetaFitReport:
    """
    Pick the shape from `beta_grid` whose variance-matched GGD marginals are
    closest (chi^2 histogram distance, summed over coordinates) to the
    standardized per-coordinate histograms on +-6 std.
    """
    grid = [_beta(b) for b in beta_grid]
    if not grid:
        raise DomainError("beta_grid must not be empty")
    if bin_count < 1:
        raise DomainError(f"bin_count must be positive, got {bin_count}")

    columns = _coordinates(samples)
    if not columns or all(c.size == 0 for c in columns):
        raise DomainError("fit_beta needs samples")

    edges = np.linspace(-6.0, 6.0, bin_count + 1)
    histograms = []
    for j, column in enumerate(columns):
        if column.size < min_samples:
            raise DomainError(f"coordinate {j} has {column.size} samples, need >= {min_samples}")
        std = column.std()
        if not std > ZERO_STD_REL * max(abs(column.mean()), 1.0):
            logger.debug(f"Skipping zero-variance coordinate {j}")
            continue
        z = (column - column.mean()) / std
        counts, _ = np.histogram(z, bins=edges)
        histograms.append(counts / column.size)

    if not histograms:
        raise ZeroVarianceCorpusError("every coordinate has zero variance")

    distances = []
    for beta in grid:
        masses = ggd_bin_masses(edges, 1.0, beta)
        distances.append(sum(chi2_distance(h, masses) for h in histograms))

    best_distance = min(distances)
    best = max(b for b, d in zip(grid, distances) if d == best_distance)
    logger.info(f"fit_beta: best beta={best} (chi2={best_distance:.4e}) over {len(histograms)} coordinates")
    return BetaFitReport(beta_grid=grid, distances=distances, best=best,
                         coordinates_used=len(histograms))


def sample_covariance(coefficients: np.ndarray) -> np.ndarray:
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.ndim != 2 or coefficients.shape[0] < 2:
        raise ShapeMismatchError("need a (count >= 2) x dim coefficient matrix")
    cov = np.atleast_2d(np.cov(coefficients, rowvar=False))
    return 0.5 * (cov + cov.T)


def verify_scatter_factor(dim: int, beta: BetaLike, count: int, seed: int,
                          tolerance: float = 0.02) -> Tuple[float, float]:
    """
    Monte Carlo check of `scatter_factor`: sample an MGGD whose covariance
    should be the identity and compare the realized variance. Returns the
    analytic factor and the empirically calibrated one.
    """
    c = scatter_factor(dim, beta)
    model = MggdModel(beta=_beta(beta), scatter=c * np.eye(dim))
    draws = sample_mggd(model, count, seed)
    realized = float(np.mean(np.mean(draws ** 2, axis=0)))
    empirical = c * realized
    discrepancy = abs(empirical - c) / c
    if discrepancy > tolerance:
        logger.warning(
            f"Scatter factor discrepancy {discrepancy:.2%} (analytic {c:.6f}, empirical {empirical:.6f}) "
            f"at dim={dim}, beta={_beta(beta)}"
        )
    else:
        logger.info(f"Scatter factor verified within {discrepancy:.2%} at dim={dim}")
    return c, empirical


def fit_mggd(coefficients: np.ndarray, beta_grid: Sequence[float], bin_count: int = 101,
             factor: Optional[float] = None, min_samples: int = 100) -> Tuple[MggdModel, BetaFitReport, np.ndarray]:
    """Sample covariance, beta fit and scatter of detail coefficient vectors (rows)."""
    cov = sample_covariance(coefficients)
    level = max(float(np.abs(np.mean(coefficients, axis=0)).max()) ** 2, 1.0)
    if not np.abs(cov).max() > ZERO_COV_REL * level:
        raise ZeroVarianceCorpusError(f"zero-variance corpus (max |cov| = {np.abs(cov).max():.3e})")
    report = fit_beta(coefficients, beta_grid, bin_count, min_samples=min_samples)
    scatter = scatter_from_covariance(cov, report.best, factor=factor)
    return MggdModel(beta=report.best, scatter=scatter, factor=factor), report, cov
