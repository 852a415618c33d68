import numpy as np
import pytest

from models.design import DesignProblem
from models.ggd import MggdModel
from models.transforms import IntegralOperator
from services.ggd_model import delta_bound_from_probability, scatter_from_covariance, symmetric_sqrt
from services.measurement_design import (
    apply_adjoint,
    apply_forward,
    assemble_q,
    build_design_problem,
    constraint_violations,
    default_tau,
    estimate_spectral_norm,
    make_sensing_operator,
    numerical_rank,
    p2_objective,
    project_soc,
    project_soc_batch,
    shrink_singular_values,
    svt_solve,
)
from services.selftest import dense_operator, white_problem
from services.transforms import build_wavelet_basis, integral_row
from utils.errors import DomainError, RankError, ShapeMismatchError

from conftest import random_spd, white_model


@pytest.fixture
def colored_problem(rng):
    """f = 4 problem with a correlated covariance and random distortion limits."""
    basis = build_wavelet_basis(4, None, "db2")
    cov = random_spd(15, rng)
    model = MggdModel(beta=0.7, scatter=scatter_from_covariance(cov, 0.7))
    delta = rng.uniform(0.1, 1.0, size=16)
    return build_design_problem(basis, model, delta, eps=0.05), basis, cov


class _IdentityRows(IntegralOperator):
    """Integral operator replaced by the identity."""

    def cumulate(self, stack):
        return np.array(stack, dtype=float, copy=True)

    def cumulate_adjoint(self, stack):
        return np.array(stack, dtype=float, copy=True)


class TestProblem:
    def test_b_matches_dense_oracle(self, colored_problem):
        problem, basis, cov = colored_problem
        op = IntegralOperator(rows=4, cols=4)
        root = symmetric_sqrt(cov)
        for i in range(16):
            expected = root @ basis.detail_rows @ integral_row(op, i)
            np.testing.assert_allclose(problem.b[:, i], expected, atol=1e-12)

    def test_white_b(self):
        basis = build_wavelet_basis(4, None, "db2")
        problem = build_design_problem(basis, white_model(16), np.ones(16), eps=0.05)
        op = IntegralOperator(rows=4, cols=4)
        for i in range(16):
            np.testing.assert_allclose(problem.b[:, i], basis.detail_rows @ integral_row(op, i), atol=1e-12)

    def test_bounds(self, colored_problem):
        problem, _, _ = colored_problem
        np.testing.assert_allclose(problem.delta_bounds,
                                   delta_bound_from_probability(problem.delta, 0.05, 0.7))

    def test_zero_delta(self):
        basis = build_wavelet_basis(4, None, "db2")
        problem = build_design_problem(basis, white_model(16), np.zeros(16), eps=0.05)
        assert np.all(problem.delta_bounds == 0.0)

    def test_dimension_mismatch(self):
        basis = build_wavelet_basis(4, None, "db2")
        with pytest.raises(ShapeMismatchError):
            build_design_problem(basis, white_model(4), np.ones(16), eps=0.05)
        with pytest.raises(ShapeMismatchError):
            build_design_problem(basis, white_model(16), np.ones(15), eps=0.05)

    @pytest.mark.parametrize("eps", [0.0, 1.0])
    def test_eps_domain(self, eps):
        basis = build_wavelet_basis(4, None, "db2")
        with pytest.raises(DomainError):
            build_design_problem(basis, white_model(16), np.ones(16), eps=eps)


class TestOperator:
    def test_forward_zero(self, colored_problem):
        problem, _, _ = colored_problem
        assert np.all(apply_forward(np.zeros((16, 16)), problem) == 0.0)

    def test_forward_dense_oracle(self, colored_problem, rng):
        problem, _, _ = colored_problem
        op = IntegralOperator(rows=4, cols=4)
        p = rng.standard_normal((16, 16))
        stacked = apply_forward(p, problem)
        for i in range(16):
            np.testing.assert_allclose(stacked[:, i], problem.sigma_u @ p.T @ integral_row(op, i), atol=1e-11)

    def test_forward_linear(self, colored_problem, rng):
        problem, _, _ = colored_problem
        p, q = rng.standard_normal((2, 16, 16))
        np.testing.assert_allclose(apply_forward(1.5 * p - q, problem),
                                   1.5 * apply_forward(p, problem) - apply_forward(q, problem), atol=1e-11)

    @pytest.mark.parametrize("block_side", [4, 8])
    def test_adjoint_identity(self, rng, block_side):
        basis = build_wavelet_basis(block_side, None, "db2")
        n = basis.n
        cov = random_spd(n - 1, rng)
        model = MggdModel(beta=0.68, scatter=scatter_from_covariance(cov, 0.68))
        problem = build_design_problem(basis, model, np.ones(n), eps=0.05)
        for _ in range(20):
            p = rng.standard_normal((n, n))
            y = rng.standard_normal((n - 1, n))
            ap = apply_forward(p, problem)
            lhs = np.vdot(ap, y)
            rhs = np.vdot(p, apply_adjoint(y, problem))
            assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(ap) * np.linalg.norm(y)

    def test_adjoint_single_location(self, colored_problem):
        problem, _, _ = colored_problem
        op = IntegralOperator(rows=4, cols=4)
        j = 6
        y = np.zeros((15, 16))
        y[0, j] = 1.0
        expected = np.outer(integral_row(op, j), problem.sigma_u[0])
        np.testing.assert_allclose(apply_adjoint(y, problem), expected, atol=1e-12)

    def test_shape_checks(self, colored_problem):
        problem, _, _ = colored_problem
        with pytest.raises(ShapeMismatchError):
            apply_forward(np.zeros((15, 15)), problem)
        with pytest.raises(ShapeMismatchError):
            apply_adjoint(np.zeros((16, 16)), problem)


class TestShrinkage:
    def test_zero_tau(self, rng):
        x = rng.standard_normal((5, 5))
        np.testing.assert_array_equal(shrink_singular_values(x, 0.0), x)

    def test_large_tau(self, rng):
        x = rng.standard_normal((5, 5))
        top = np.linalg.svd(x, compute_uv=False)[0]
        assert np.all(shrink_singular_values(x, top) == 0.0)

    def test_diagonal(self):
        np.testing.assert_allclose(shrink_singular_values(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]),
                                   atol=1e-12)

    def test_prox_conditions(self, rng):
        x = 3.0 * rng.standard_normal((8, 8))
        tau = 1.3
        d = shrink_singular_values(x, tau)
        residual = x - d
        assert np.linalg.svd(residual, compute_uv=False).max() <= tau + 1e-10
        nuclear = np.linalg.svd(d, compute_uv=False).sum()
        assert np.vdot(residual, d) == pytest.approx(tau * nuclear, rel=1e-9, abs=1e-8)

    def test_negative_tau(self):
        with pytest.raises(DomainError):
            shrink_singular_values(np.eye(2), -1.0)


class TestSecondOrderCone:
    def test_inside(self):
        x, t = project_soc(np.array([3.0, 4.0]), 6.0)
        np.testing.assert_array_equal(x, [3.0, 4.0])
        assert t == 6.0

    def test_boundary(self):
        x, t = project_soc(np.array([3.0, 4.0]), 5.0)
        np.testing.assert_array_equal(x, [3.0, 4.0])
        assert t == 5.0

    def test_polar(self):
        x, t = project_soc(np.array([3.0, 4.0]), -6.0)
        np.testing.assert_array_equal(x, [0.0, 0.0])
        assert t == 0.0

    def test_middle(self):
        x, t = project_soc(np.array([3.0, 4.0]), 1.0)
        np.testing.assert_allclose(x, [1.8, 2.4], atol=1e-12)
        assert t == pytest.approx(3.0, abs=1e-12)

    def test_idempotent_and_nonexpansive(self, rng):
        for _ in range(100):
            x1, x2 = rng.standard_normal((2, 4))
            t1, t2 = rng.standard_normal(2)
            p1, s1 = project_soc(x1, t1)
            p2, s2 = project_soc(x2, t2)
            again, s_again = project_soc(p1, s1)
            np.testing.assert_allclose(again, p1, atol=1e-12)
            assert s_again == pytest.approx(s1, abs=1e-12)
            lhs = np.linalg.norm(np.append(p1 - p2, s1 - s2))
            rhs = np.linalg.norm(np.append(x1 - x2, t1 - t2))
            assert lhs <= rhs + 1e-12

    def test_batch_matches_single(self, rng):
        y = rng.standard_normal((3, 40))
        s = 2.0 * rng.standard_normal(40)
        batch_y, batch_s = project_soc_batch(y, s)
        for i in range(40):
            single_y, single_s = project_soc(y[:, i], s[i])
            np.testing.assert_allclose(batch_y[:, i], single_y, atol=1e-12)
            assert batch_s[i] == pytest.approx(single_s, abs=1e-12)


class TestSpectralNorm:
    def test_identity_rows(self):
        basis = build_wavelet_basis(2, None, "haar")
        problem = DesignProblem(
            sigma_u=np.eye(3, 4),
            integral=_IdentityRows(rows=2, cols=2),
            b=np.zeros((3, 4)),
            delta_bounds=np.ones(4),
            eps=0.05,
            beta=white_model(basis.n).shape,
            delta=np.ones(4),
        )
        assert estimate_spectral_norm(problem, 100, seed=1) == pytest.approx(1.0, rel=0.01)

    def test_matches_dense(self):
        problem = white_problem(4)
        dense = np.linalg.norm(dense_operator(problem), ord=2)
        assert estimate_spectral_norm(problem, 200, seed=3) == pytest.approx(dense, rel=0.01)

    def test_history_nondecreasing(self):
        _, history = estimate_spectral_norm(white_problem(4), 60, seed=0, return_history=True)
        assert len(history) == 60
        assert np.all(np.diff(history) >= 0)

    def test_minimum_iterations(self):
        with pytest.raises(DomainError):
            estimate_spectral_norm(white_problem(4), 10)


class TestSvt:
    def test_feasible_origin(self):
        problem = white_problem(4, delta_scale=10.0)
        result = svt_solve(problem, max_iterations=100)
        assert result.converged
        assert result.iterations == 1
        assert np.all(result.p == 0.0)

    def test_white_design_converges(self, design4):
        result = design4["result"]
        assert result.converged
        assert result.iterations <= 5000
        assert result.max_violation <= 1e-6 * design4["scale"]
        margins = constraint_violations(result.p, design4["problem"])
        assert margins.max() <= 1e-6 * design4["scale"]

    @pytest.mark.slow
    def test_f8_design_converges(self, design8):
        result = design8["result"]
        assert result.converged
        assert result.max_violation <= 1e-6 * design8["scale"]
        assert design8["design"].rank_q == design8["design"].rank_p + 1

    @pytest.mark.slow
    def test_acceleration_beats_plain_ascent(self, design4):
        problem = design4["problem"]
        scale = design4["scale"]
        plain = svt_solve(problem, max_iterations=design4["result"].iterations, feas_tol=1e-6 * scale,
                          rel_tol=1e-6, accelerate=False, log_every=10**6)
        assert not plain.accelerated
        assert plain.eta == pytest.approx(1.9 / (1.05 * plain.operator_norm) ** 2)
        assert plain.max_violation > design4["result"].max_violation

    def test_accelerated_step(self, design4):
        result = design4["result"]
        assert result.accelerated
        assert result.eta == pytest.approx(1.0 / (1.05 * result.operator_norm) ** 2)

    def test_history_recorded(self, design4):
        result = design4["result"]
        assert len(result.history) == result.iterations
        assert result.history[-1].violation == pytest.approx(result.max_violation)

    def test_step_size(self, design4):
        result = design4["result"]
        assert result.eta <= 2.0 / result.operator_norm ** 2

    def test_default_tau_positive(self):
        assert default_tau(white_problem(4)) > 0

    def test_invalid_tau(self):
        with pytest.raises(DomainError):
            svt_solve(white_problem(4), tau=-1.0)

    @pytest.mark.slow
    def test_objective_matches_conic_solver(self, design4):
        cp = pytest.importorskip("cvxpy")
        problem = design4["problem"]
        result = design4["result"]
        n = problem.n
        op = IntegralOperator(rows=problem.block_side, cols=problem.block_side)
        h = np.stack([integral_row(op, i) for i in range(n)])

        p = cp.Variable((n, n))
        stacked = problem.sigma_u @ p.T @ h.T
        constraints = [cp.norm(stacked[:, i] - problem.b[:, i], 2) <= problem.delta_bounds[i] for i in range(n)]
        objective = cp.Minimize(result.tau * cp.normNuc(p) + 0.5 * cp.sum_squares(p))
        oracle = cp.Problem(objective, constraints)
        oracle.solve()

        ours = p2_objective(result.p, result.tau)
        assert ours == pytest.approx(oracle.value, rel=0.01)


class TestAssembly:
    def test_zero_p(self):
        design = assemble_q(np.zeros((9, 9)))
        assert design.rank_q == 1
        assert design.rank_p == 0
        assert design.singular_values[0] == pytest.approx(1.0, abs=1e-12)
        assert np.all(design.singular_values[1:] < 1e-12)
        np.testing.assert_allclose(np.abs(design.right_vectors[:, 0]), np.full(9, 1.0 / 3.0), atol=1e-12)

    def test_rank_identity(self, design4):
        design = design4["design"]
        assert design.rank_q == design.rank_p + 1

    def test_ones_orthogonal(self, design4):
        assert design4["design"].ones_residual <= 1e-8

    def test_singular_values_sorted(self, design4):
        assert np.all(np.diff(design4["design"].singular_values) <= 0)

    def test_numerical_rank(self):
        assert numerical_rank(np.array([1.0, 1e-3, 1e-9, 0.0])) == 2
        assert numerical_rank(np.zeros(3)) == 0
        assert numerical_rank(np.array([])) == 0


class TestSensingOperator:
    def test_full_rank_reproduces_q(self, design4):
        design = design4["design"]
        op = make_sensing_operator(design, design.rank_q)
        assert np.linalg.norm(op.q_m - design.q) <= 1e-8 * np.linalg.norm(design.q)

    def test_eckart_young(self, design4):
        design = design4["design"]
        lam = design.singular_values
        for m in sorted({1, max(1, design.rank_q // 2), design.rank_q}):
            op = make_sensing_operator(design, m)
            error = np.linalg.norm(op.q_m - design.q)
            assert error == pytest.approx(np.sqrt(np.sum(lam[m:] ** 2)), abs=1e-8 * np.linalg.norm(design.q))

    def test_phi_spectrum(self, design4):
        design = design4["design"]
        op = make_sensing_operator(design, design.rank_q)
        np.testing.assert_allclose(np.linalg.svd(op.phi, compute_uv=False) ** 2,
                                   design.singular_values[: design.rank_q], rtol=1e-10)

    def test_measurement_rate(self, design4):
        op = make_sensing_operator(design4["design"], 1)
        assert op.measurement_rate == pytest.approx(1.0 / 16.0)

    def test_rank_too_large(self, design4):
        design = design4["design"]
        with pytest.raises(RankError) as info:
            make_sensing_operator(design, design.rank_q + 1)
        assert str(design.rank_q) in str(info.value)
        assert info.value.available == design.rank_q

    def test_rank_zero(self, design4):
        with pytest.raises(DomainError):
            make_sensing_operator(design4["design"], 0)
