import logging

import numpy as np
import pytest

from errors import DivergenceError, InstanceTooLargeError, StepSizeError, UnsupportedDistributionError
from propagator import (closed_form_check, f_terms, printed_form_discrepancy, propagate_diagonal,
                        propagate_full_oracle, propagate_states, risk_trajectory)
from runner import Series
from spectrum import FeatureDistribution, SpectrumProblem, build_power_law, make_distribution


def unit_canonical():
    problem = SpectrumProblem([1.0], [1.0], 0.5, 0.0)
    return problem, make_distribution(problem, 'canonical')


class TestPropagateDiagonal:
    def test_closed_form_d1(self):
        problem, dist = unit_canonical()
        curve = propagate_diagonal(problem, dist, 0.5, 4, [1, 2, 3, 4], allow_large_gamma=True)
        assert curve.series is Series.EXACT
        assert curve.values.tolist() == pytest.approx([0.5 * 0.25 ** t for t in range(1, 5)], rel=1e-15)
        assert curve.stderrs is None

    def test_zero_step_size_is_constant(self):
        problem = build_power_law(10, 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        curve = propagate_diagonal(problem, dist, 0.0, 100)
        assert curve.values == pytest.approx(np.full(curve.values.size, problem.initial_risk), rel=1e-14)

    def test_optimum_is_a_fixed_point(self):
        problem = SpectrumProblem([1.0, 0.5], [0.0, 0.0], 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        curve = propagate_diagonal(problem, dist, 0.1, 50)
        assert np.all(curve.values == 0.0)

    def test_large_step_needs_override(self, caplog):
        problem = build_power_law(5, 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        gamma = 1.0 / (2.0 * problem.trace)
        with pytest.raises(StepSizeError):
            propagate_diagonal(problem, dist, 0.3, 10)
        with caplog.at_level(logging.WARNING):
            curve = propagate_diagonal(problem, dist, max(gamma, 0.26), 10, allow_large_gamma=True)
        assert curve.values[-1] >= 0
        assert 'exceeds' in caplog.text

    def test_divergence_step_is_reported(self):
        problem = SpectrumProblem([1.0], [1.0], 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        with pytest.raises(DivergenceError) as excinfo:
            propagate_diagonal(problem, dist, 10.0, 10000, allow_large_gamma=True)
        assert 1 < excinfo.value.step <= 10000

    def test_risk_decreases_under_small_step(self):
        problem = build_power_law(50, 0.5, 0.0)
        dist = make_distribution(problem, 'canonical')
        curve = propagate_diagonal(problem, dist, 1.0 / (4.0 * problem.lambda_max), 1000)
        assert curve.values[-1] < curve.values[0] < problem.initial_risk

    def test_unsupported_law(self):
        class Uniform(FeatureDistribution):
            pass

        problem = SpectrumProblem([1.0], [1.0], 0.5, 0.0)
        with pytest.raises(UnsupportedDistributionError):
            propagate_diagonal(problem, Uniform(problem), 0.1, 10)


class TestTrajectory:
    def test_risk_trajectory_starts_at_initial_risk(self):
        problem = build_power_law(10, 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        f = risk_trajectory(problem, dist, 0.2, 30)
        assert f.shape == (31,)
        assert f[0] == pytest.approx(problem.initial_risk)

    def test_states_follow_recursion(self):
        problem = build_power_law(4, 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        gamma = 0.2
        states = list(propagate_states(problem, dist, gamma, 3))
        lam = problem.lambdas
        for prev, nxt in zip(states, states[1:]):
            m = prev.m.astype(float)
            expected = m - 2 * gamma * lam * m + gamma ** 2 * f_terms(dist, m)
            assert nxt.m.astype(float) == pytest.approx(expected, rel=1e-13)

    @pytest.mark.parametrize("kind", ['gaussian', 'canonical'])
    def test_curve_samples_the_trajectory(self, kind):
        problem = build_power_law(12, 0.5, 0.0)
        dist = make_distribution(problem, kind)
        gamma = 0.2
        ck = np.array([1, 2, 5, 17, 40])
        curve = propagate_diagonal(problem, dist, gamma, 60, ck)
        f = risk_trajectory(problem, dist, gamma, 40)
        assert curve.values.tolist() == f[ck].tolist()
        assert np.all(curve.values > 0)


class TestOracle:
    @pytest.mark.parametrize("kind", ['gaussian', 'canonical'])
    def test_diagonal_matches_full_matrix(self, kind):
        rng = np.random.default_rng(3)
        lambdas = np.sort(rng.uniform(0.1, 1.0, 4))[::-1]
        problem = SpectrumProblem(lambdas, rng.standard_normal(4), 0.5, 0.0)
        dist = make_distribution(problem, kind)
        gamma = 1.0 / (4.0 * problem.lambda_max)
        full = propagate_full_oracle(problem, dist, gamma, 60)
        assert full.shape == (61, 4, 4)
        for state in propagate_states(problem, dist, gamma, 60):
            assert np.diagonal(full[state.t]) == pytest.approx(state.m.astype(float), rel=1e-10)

    def test_size_limits(self):
        big = build_power_law(9, 0.5, 0.0)
        with pytest.raises(InstanceTooLargeError):
            propagate_full_oracle(big, make_distribution(big, 'gaussian'), 0.1, 10)
        small = build_power_law(3, 0.5, 0.0)
        with pytest.raises(InstanceTooLargeError):
            propagate_full_oracle(small, make_distribution(small, 'gaussian'), 0.1, 501)


class TestClosedForm:
    def test_unrolled_sum_matches_iteration(self):
        problem = build_power_law(6, 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        assert closed_form_check(problem, dist, 1.0 / (4.0 * problem.lambda_max), 100) <= 1e-12

    def test_printed_variant_differs(self, caplog):
        problem = SpectrumProblem([0.5, 0.25], [1.0, 1.0], 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        assert printed_form_discrepancy(problem, dist, 0.2, 20) > 1e-6
        with caplog.at_level(logging.WARNING):
            closed_form_check(problem, dist, 0.2, 20)
        assert 'Printed unrolled form' in caplog.text

    def test_size_limit(self):
        problem = build_power_law(3, 0.5, 0.0)
        with pytest.raises(InstanceTooLargeError):
            closed_form_check(problem, make_distribution(problem, 'gaussian'), 0.1, 1001)


class TestWorkedExamples:
    def test_gaussian_mixing_term(self):
        problem = SpectrumProblem([1.0], [1.0], 0.5, 0.0)
        f = f_terms(make_distribution(problem, 'gaussian'), np.array([1.0]))
        assert f.tolist() == pytest.approx([3.0])

    def test_canonical_mixing_term(self):
        problem = SpectrumProblem([1.0, 0.25], [1.0, 1.0], 0.5, 0.0)
        dist = make_distribution(problem, 'canonical', prob_exponent=1.0)
        assert dist.probs.tolist() == pytest.approx([0.8, 0.2])
        assert f_terms(dist, np.array([1.0, 1.0])).tolist() == pytest.approx([1.25, 0.3125])

    @pytest.mark.parametrize("kind", ['gaussian', 'canonical'])
    def test_zero_moments_stay_zero(self, kind):
        problem = build_power_law(5, 0.5, 0.0)
        f = f_terms(make_distribution(problem, kind), np.zeros(5))
        assert np.all(f == 0.0)

    def test_gaussian_single_step(self):
        problem = SpectrumProblem([1.0], [1.0], 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        states = list(propagate_states(problem, dist, 0.1, 1))
        assert float(states[1].m[0]) == pytest.approx(0.83, rel=1e-15)
        assert states[1].risk == pytest.approx(0.415, rel=1e-15)
        curve = propagate_diagonal(problem, dist, 0.1, 1, [1])
        assert curve.values.tolist() == pytest.approx([0.415], rel=1e-15)

    def test_canonical_second_step(self):
        problem, dist = unit_canonical()
        curve = propagate_diagonal(problem, dist, 0.5, 2, [2], allow_large_gamma=True)
        assert curve.value_at(2) == 0.03125
