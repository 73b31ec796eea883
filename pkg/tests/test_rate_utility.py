"""Self-consistent rate-utility system, curve tracing, and paths."""

import math

import numpy as np
import pytest

from infopolicy.kernel import (
    JointDistribution,
    NonConvergenceError,
    StochasticKernel,
    UtilityMatrix,
    mutual_information,
    mutual_information_gradient,
    push_forward,
    semidirect_product,
)
from infopolicy.rate_utility import (
    RateUtilityProblem,
    bregman_divergence_of_I,
    contraction_path,
    deterministic_argmax_kernel,
    expansion_path,
    max_rate_point,
    optimal_constant_prior,
    optimal_generic_prior,
    rate_utility_curve,
    slope_check,
    solve_at_rate,
    solve_self_consistent,
    tangency_residual,
    zero_rate_point,
)
from infopolicy.simplex import Distribution, kl_divergence

LN2 = math.log(2.0)

SYMMETRIC = RateUtilityProblem(
    Distribution([0.5, 0.5]), UtilityMatrix([[1.0, 0.0], [0.0, 1.0]])
)
GENERIC_2X2 = RateUtilityProblem(
    Distribution([0.6, 0.4]), UtilityMatrix([[1.0, 0.0], [0.2, 0.8]])
)


def random_problem(rng, m=3, n=3):
    return RateUtilityProblem(
        Distribution(rng.dirichlet(np.ones(m) * 5)),
        UtilityMatrix(rng.uniform(0.0, 2.0, size=(m, n))),
    )


class TestProblemValidation:
    def test_interior_source_required(self):
        with pytest.raises(ValueError, match="full support"):
            RateUtilityProblem(Distribution([1.0, 0.0]), UtilityMatrix(np.ones((2, 2))))

    def test_mask_shape_and_rows(self):
        with pytest.raises(ValueError, match="shape"):
            RateUtilityProblem(
                Distribution([0.5, 0.5]),
                UtilityMatrix(np.ones((2, 2))),
                np.ones((2, 3), dtype=bool),
            )
        mask = np.array([[True, False], [False, False]])
        with pytest.raises(ValueError, match="admits no action"):
            RateUtilityProblem(Distribution([0.5, 0.5]), UtilityMatrix(np.ones((2, 2))), mask)


class TestOptimalPriors:
    def test_generic_prior_is_the_kernel_itself(self):
        K = StochasticKernel([[0.8, 0.2], [0.4, 0.6]])
        out = optimal_generic_prior(Distribution([0.5, 0.5]), K)
        np.testing.assert_array_equal(out.rows, K.rows)

    def test_generic_prior_grid_oracle(self):
        # scanning prior kernels on a grid, the divergence objective bottoms
        # out at the kernel itself (within grid resolution)
        P = Distribution([0.6, 0.4])
        K = StochasticKernel([[0.7, 0.3], [0.2, 0.8]])
        pi = semidirect_product(P, K).table
        ticks = np.linspace(1e-4, 1.0 - 1e-4, 1001)
        a, b = np.meshgrid(ticks, ticks, indexing="ij")
        # objective: sum pi * ln(pi / (p * kappa)) over the kernel grid
        val = (
            pi[0, 0] * (np.log(pi[0, 0] / P.weights[0]) - np.log(a))
            + pi[0, 1] * (np.log(pi[0, 1] / P.weights[0]) - np.log(1 - a))
            + pi[1, 0] * (np.log(pi[1, 0] / P.weights[1]) - np.log(b))
            + pi[1, 1] * (np.log(pi[1, 1] / P.weights[1]) - np.log(1 - b))
        )
        i, j = np.unravel_index(np.argmin(val), val.shape)
        assert abs(ticks[i] - K.rows[0, 0]) < 1e-3
        assert abs(ticks[j] - K.rows[1, 0]) < 1e-3

    def test_constant_prior_is_the_push_forward(self):
        P = Distribution([0.5, 0.5])
        K = StochasticKernel([[0.8, 0.2], [0.4, 0.6]])
        np.testing.assert_allclose(optimal_constant_prior(P, K).weights, [0.6, 0.4])

    def test_constant_prior_grid_oracle(self):
        P = Distribution([0.6, 0.4])
        K = StochasticKernel([[0.7, 0.3], [0.2, 0.8]])
        pi = semidirect_product(P, K).table
        ticks = np.linspace(1e-4, 1.0 - 1e-4, 1001)
        val = -(pi[:, 0].sum() * np.log(ticks) + pi[:, 1].sum() * np.log(1 - ticks))
        best = ticks[np.argmin(val)]
        assert abs(best - push_forward(K, P).weights[0]) < 1e-3

    def test_unconstrained_inner_optimum_is_argmax_kernel(self):
        K = deterministic_argmax_kernel(GENERIC_2X2)
        np.testing.assert_array_equal(K.rows, [[1.0, 0.0], [0.0, 1.0]])


class TestSolveSelfConsistent:
    def test_zero_beta_fixed_point(self):
        point = solve_self_consistent(SYMMETRIC, 0.0)
        assert point.rate == 0.0
        assert point.iterations == 1
        # constant kernel; marginal reproduces itself under the rows
        np.testing.assert_allclose(point.kernel.rows[0], point.kernel.rows[1], atol=1e-15)
        np.testing.assert_allclose(
            push_forward(point.kernel, SYMMETRIC.source).weights,
            point.marginal.weights,
            atol=1e-15,
        )

    def test_symmetric_analytic_value(self):
        point = solve_self_consistent(SYMMETRIC, 2.0, tol=1e-12)
        expected = math.exp(2.0) / (1.0 + math.exp(2.0))
        assert point.kernel.rows[0, 0] == pytest.approx(expected, abs=1e-9)
        assert point.rate == pytest.approx(0.32781332547273767, abs=1e-9)
        np.testing.assert_allclose(point.marginal.weights, [0.5, 0.5], atol=1e-12)

    def test_rows_are_gibbs_in_the_marginal(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            problem = random_problem(rng)
            point = solve_self_consistent(problem, float(rng.uniform(0.5, 5.0)))
            q = point.marginal.weights
            with np.errstate(divide="ignore"):
                logits = np.log(q)[None, :] + point.beta * problem.utilities.entries
            logits -= logits.max(axis=1, keepdims=True)
            gibbs_rows = np.exp(logits)
            gibbs_rows /= gibbs_rows.sum(axis=1, keepdims=True)
            np.testing.assert_allclose(point.kernel.rows, gibbs_rows, atol=1e-10)

    def test_rate_matches_mutual_information(self):
        rng = np.random.default_rng(32)
        for _ in range(10):
            problem = random_problem(rng)
            point = solve_self_consistent(problem, float(rng.uniform(0.5, 8.0)))
            joint = semidirect_product(problem.source, point.kernel)
            assert point.rate == pytest.approx(mutual_information(joint), abs=1e-8)

    def test_random_3x3_instances_converge(self):
        # betas from 0.5 up to the stressed top of the range; far below that
        # the boundary drain is geometric at rate ~ beta * column-gap and the
        # iteration count is unbounded as beta -> 0
        rng = np.random.default_rng(33)
        for _ in range(10):
            problem = random_problem(rng)
            for beta in (0.5, 1.0, 10.0, 50.0):
                point = solve_self_consistent(problem, beta, tol=1e-12, max_iter=10_000)
                assert point.converged
                assert point.residual < 1e-12
                np.testing.assert_allclose(
                    point.marginal.weights,
                    push_forward(point.kernel, problem.source).weights,
                    atol=1e-10,
                )

    def test_large_beta_approaches_argmax_kernel(self):
        rng = np.random.default_rng(34)
        problem = random_problem(rng)
        point = solve_self_consistent(problem, 2000.0)
        np.testing.assert_allclose(
            point.kernel.rows, deterministic_argmax_kernel(problem).rows, atol=1e-6
        )
        best = float(problem.source.weights @ problem.utilities.entries.max(axis=1))
        assert point.utility == pytest.approx(best, abs=1e-6)

    def test_support_mask_respected_exactly(self):
        mask = np.array([[True, True, False], [False, True, True]])
        problem = RateUtilityProblem(
            Distribution([0.5, 0.5]),
            UtilityMatrix(np.array([[1.0, 0.5, 2.0], [0.3, 0.8, 0.1]])),
            mask,
        )
        for beta in (0.0, 1.0, 20.0):
            point = solve_self_consistent(problem, beta)
            assert np.all(point.kernel.rows[~mask] == 0.0)
            assert np.all(point.kernel.rows[mask] >= 0.0)

    def test_strict_nonconvergence_raises_and_flag_mode_reports(self):
        with pytest.raises(NonConvergenceError):
            solve_self_consistent(GENERIC_2X2, 3.0, tol=1e-15, max_iter=2)
        point = solve_self_consistent(GENERIC_2X2, 3.0, tol=1e-15, max_iter=2, strict=False)
        assert not point.converged
        assert point.residual >= 1e-15

    def test_input_validation(self):
        with pytest.raises(ValueError, match="beta"):
            solve_self_consistent(SYMMETRIC, -1.0)
        with pytest.raises(ValueError, match="tol"):
            solve_self_consistent(SYMMETRIC, 1.0, tol=0.0)


class TestEndpoints:
    def test_zero_rate_point_best_constant_column(self):
        point = zero_rate_point(GENERIC_2X2)
        # column averages: 0.6*1+0.4*0.2 = 0.68 vs 0.6*0+0.4*0.8 = 0.32
        assert point.utility == pytest.approx(0.68, abs=1e-15)
        assert point.rate == 0.0
        np.testing.assert_array_equal(point.marginal.weights, [1.0, 0.0])

    def test_zero_rate_tie_breaks_low_index(self):
        point = zero_rate_point(SYMMETRIC)
        assert point.utility == pytest.approx(0.5, abs=1e-15)
        np.testing.assert_array_equal(point.marginal.weights, [1.0, 0.0])

    def test_max_rate_point_symmetric(self):
        point = max_rate_point(SYMMETRIC)
        assert point.utility == pytest.approx(1.0, abs=1e-15)
        assert point.rate == pytest.approx(LN2, abs=1e-15)
        np.testing.assert_array_equal(point.kernel.rows, np.eye(2))

    def test_masked_zero_rate_needs_common_column(self):
        mask = np.array([[True, False], [False, True]])
        problem = RateUtilityProblem(
            Distribution([0.5, 0.5]), UtilityMatrix(np.ones((2, 2))), mask
        )
        with pytest.raises(ValueError, match="admissible in every state"):
            zero_rate_point(problem)


class TestCurve:
    def test_monotone_and_concave(self):
        # sample evenly in achieved rate; below the critical multiplier the
        # rate pins to zero and slopes there are 0/0 noise by construction
        r_max = max_rate_point(GENERIC_2X2).rate
        targets = np.linspace(0.02, 0.95, 30) * r_max
        points = rate_utility_curve(GENERIC_2X2, rate_grid=targets)
        rates = np.array([p.rate for p in points])
        utils = np.array([p.utility for p in points])
        assert np.all(np.diff(rates) > 0.0)
        assert np.all(np.diff(utils) > -1e-12)
        slopes = np.diff(utils) / np.diff(rates)
        assert np.all(np.diff(slopes) <= 1e-8)

    def test_slopes_track_inverse_beta(self):
        # supercritical multipliers: all columns alive and the rate growing
        grid = np.logspace(math.log10(1.5), math.log10(5.0), 80)
        points = rate_utility_curve(GENERIC_2X2, beta_grid=grid)
        for a, b in zip(points, points[1:]):
            slope = slope_check(a, b)
            midpoint = 2.0 / (1.0 / a.beta + 1.0 / b.beta)  # harmonic midpoint
            assert slope == pytest.approx(1.0 / midpoint, rel=0.02)

    def test_beta_zero_entry_is_the_zero_rate_endpoint(self):
        points = rate_utility_curve(GENERIC_2X2, beta_grid=[0.0, 1.0])
        assert points[0].rate == 0.0
        assert points[0].utility == pytest.approx(0.68, abs=1e-15)

    def test_rate_grid_queries(self):
        r_max = max_rate_point(GENERIC_2X2).rate
        targets = [0.0, 0.25 * r_max, 0.5 * r_max, r_max]
        points = rate_utility_curve(GENERIC_2X2, rate_grid=targets)
        assert points[0].utility == pytest.approx(0.68, abs=1e-12)
        for target, point in zip(targets[1:3], points[1:3]):
            assert point.rate == pytest.approx(target, abs=1e-8)
        assert points[-1].utility == pytest.approx(max_rate_point(GENERIC_2X2).utility, abs=1e-9)

    def test_grid_validation(self):
        with pytest.raises(ValueError, match="exactly one"):
            rate_utility_curve(GENERIC_2X2)
        with pytest.raises(ValueError, match="exactly one"):
            rate_utility_curve(GENERIC_2X2, beta_grid=[1.0], rate_grid=[0.1])
        with pytest.raises(ValueError, match="sorted"):
            rate_utility_curve(GENERIC_2X2, beta_grid=[2.0, 1.0])

    def test_slope_check_rejects_flat_pairs(self):
        point = zero_rate_point(GENERIC_2X2)
        with pytest.raises(ValueError, match="equal rates"):
            slope_check(point, point)


class TestSolveAtRate:
    def test_hits_the_target_rate(self):
        target = 0.2
        point = solve_at_rate(SYMMETRIC, target)
        assert point.rate == pytest.approx(target, abs=1e-8)
        # the achieved point still solves the fixed-point system
        q = point.marginal.weights
        logits = np.log(q)[None, :] + point.beta * SYMMETRIC.utilities.entries
        logits -= logits.max(axis=1, keepdims=True)
        rows = np.exp(logits)
        rows /= rows.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(point.kernel.rows, rows, atol=1e-9)

    def test_unreachable_rate_returns_max_endpoint(self):
        point = solve_at_rate(SYMMETRIC, 10.0)
        assert point.beta == math.inf
        assert point.utility == pytest.approx(1.0, abs=1e-15)

    def test_negative_rate_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            solve_at_rate(SYMMETRIC, -0.1)


class TestPaths:
    def test_constant_column_utility_gives_constant_product_path(self):
        problem = RateUtilityProblem(
            Distribution([0.3, 0.7]), UtilityMatrix([[1.0, 0.0], [1.0, 0.0]])
        )
        path = expansion_path(problem, [0.5, 1.0, 2.0, 4.0])
        for joint in path:
            assert mutual_information(joint) == pytest.approx(0.0, abs=1e-9)
            np.testing.assert_allclose(
                joint.y_marginal.weights, [1.0, 0.0], atol=1e-9
            )

    def test_symmetric_path_runs_from_product_toward_diagonal(self):
        path = expansion_path(SYMMETRIC, [0.25, 1.0, 4.0, 16.0])
        rates = [mutual_information(j) for j in path]
        assert all(np.diff(rates) > 0)
        np.testing.assert_allclose(path[0].table, 0.25, atol=0.05)
        np.testing.assert_allclose(
            path[-1].table, [[0.5, 0.0], [0.0, 0.5]], atol=1e-5
        )

    def test_tangency_along_generic_path(self):
        # supercritical multipliers so the path is off the zero-rate vertex;
        # the alignment is checked on the active face of each point
        problems = [
            RateUtilityProblem(
                Distribution([0.5, 0.5]),
                UtilityMatrix([[1.0, 0.55, 0.1], [0.2, 0.5, 0.9]]),
            ),
            RateUtilityProblem(
                Distribution([0.4, 0.6]),
                UtilityMatrix([[1.2, 0.6, 0.0], [0.0, 0.5, 1.1]]),
            ),
        ]
        for problem in problems:
            for joint in expansion_path(problem, [1.0, 2.0, 4.0]):
                assert tangency_residual(problem.utilities, joint, orientation=1) < 1e-4
            for joint in contraction_path(problem, [1.0, 2.0, 4.0]):
                assert tangency_residual(problem.utilities, joint, orientation=-1) < 1e-4

    def test_contraction_is_expansion_of_negated_utilities(self):
        grid = [0.5, 2.0]
        lhs = contraction_path(GENERIC_2X2, grid)
        rhs = expansion_path(GENERIC_2X2.negated(), grid)
        for a, b in zip(lhs, rhs):
            np.testing.assert_array_equal(a.table, b.table)

    def test_contraction_limit_is_the_antidiagonal(self):
        path = contraction_path(SYMMETRIC, [50.0])
        np.testing.assert_allclose(
            path[0].table, [[0.0, 0.5], [0.5, 0.0]], atol=1e-9
        )
        minimum = float(
            SYMMETRIC.source.weights @ SYMMETRIC.utilities.entries.min(axis=1)
        )
        assert minimum == 0.0

    def test_paths_disjoint_away_from_zero_for_generic_utilities(self):
        grid = [1.0, 3.0]
        up = expansion_path(GENERIC_2X2, grid)
        down = contraction_path(GENERIC_2X2, grid)
        for a, b in zip(up, down):
            assert np.abs(a.y_marginal.weights - b.y_marginal.weights).max() > 1e-3

    def test_requires_positive_grid(self):
        with pytest.raises(ValueError, match="positive"):
            expansion_path(SYMMETRIC, [0.0, 1.0])


class TestBregmanDivergenceOfI:
    def interior_joint(self, rng, m=2, n=2):
        return JointDistribution(rng.dirichlet(np.ones(m * n) * 8).reshape(m, n))

    def test_zero_at_equal_arguments(self):
        rng = np.random.default_rng(36)
        pi = self.interior_joint(rng)
        assert bregman_divergence_of_I(pi, pi) == pytest.approx(0.0, abs=1e-14)

    def test_nonnegative_on_random_pairs(self):
        rng = np.random.default_rng(37)
        for _ in range(50):
            a = self.interior_joint(rng)
            b = self.interior_joint(rng)
            assert bregman_divergence_of_I(a, b) >= -1e-12

    def test_second_order_scaling(self):
        # D_I(pi0 + eps*delta, pi0) shrinks like eps^2
        rng = np.random.default_rng(38)
        pi0 = self.interior_joint(rng, 2, 2)
        delta = rng.normal(size=(2, 2))
        delta -= delta.mean()
        delta /= np.abs(delta).max() * 50
        values = []
        for eps in (1.0, 0.5, 0.25, 0.125):
            shifted = JointDistribution(pi0.table + eps * delta)
            values.append(bregman_divergence_of_I(shifted, pi0))
        ratios = [values[i] / values[i + 1] for i in range(3)]
        for ratio in ratios:
            assert ratio == pytest.approx(4.0, rel=0.2)

    def test_boundary_rejected(self):
        rng = np.random.default_rng(39)
        pi0 = self.interior_joint(rng)
        corner = JointDistribution([[0.5, 0.0], [0.0, 0.5]])
        with pytest.raises(ValueError, match="interior"):
            bregman_divergence_of_I(corner, pi0)
        with pytest.raises(ValueError, match="interior"):
            bregman_divergence_of_I(pi0, corner)

    def test_consistent_with_gradient_first_order(self):
        # strict positivity away from the tangent hyperplane
        pi0 = JointDistribution([[0.3, 0.2], [0.2, 0.3]])
        pi1 = JointDistribution([[0.4, 0.1], [0.1, 0.4]])
        direct = (
            mutual_information(pi1)
            - mutual_information(pi0)
            - float(np.sum(mutual_information_gradient(pi0) * (pi1.table - pi0.table)))
        )
        assert bregman_divergence_of_I(pi1, pi0) == pytest.approx(direct, abs=1e-14)
        assert direct > 0.0
