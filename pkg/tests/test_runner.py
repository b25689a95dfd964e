import numpy as np
import pytest

from errors import DimensionMismatchError, DivergenceError, ProblemError
from runner import (RiskCurve, Series, block_size_for, initial_state, log_checkpoints, mix_seed,
                    reference_path, risk, run_paths, sgd_step, sgd_update)
from sgdlab import random_rotation
from spectrum import SpectrumProblem, build_power_law, make_distribution


def unit_canonical():
    problem = SpectrumProblem([1.0], [1.0], 0.5, 0.0)
    return problem, make_distribution(problem, 'canonical')


class TestSeedsAndCheckpoints:
    def test_mix_seed_is_splitmix64(self):
        assert mix_seed(0, 0) == 0xE220A8397B1DCDAF

    def test_mix_seed_streams_differ(self):
        seeds = {mix_seed(42, i) for i in range(1000)}
        assert len(seeds) == 1000
        assert all(0 <= s < 2 ** 64 for s in seeds)

    def test_log_checkpoints(self):
        ck = log_checkpoints(1000)
        assert ck[0] == 1 and ck[-1] == 1000
        assert np.all(np.diff(ck) > 0)
        assert ck.size <= 64

    def test_single_step_horizon(self):
        assert log_checkpoints(1).tolist() == [1]

    def test_block_size_depends_on_dimension(self):
        assert block_size_for(1) == 64
        assert block_size_for(2000) == 1


class TestRiskCurve:
    def test_rejects_negative_values(self):
        with pytest.raises(ProblemError):
            RiskCurve([1, 2], [1.0, -1.0], Series.EXACT)

    def test_rejects_unsorted_checkpoints(self):
        with pytest.raises(ProblemError):
            RiskCurve([2, 1], [1.0, 1.0], Series.EXACT)

    def test_value_at(self):
        curve = RiskCurve([1, 10, 100], [3.0, 2.0, 1.0], 'last')
        assert curve.value_at(10) == 2.0
        with pytest.raises(KeyError):
            curve.value_at(5)


class TestSgdStep:
    def test_risk(self):
        problem = SpectrumProblem([1.0, 0.5], [1.0, 2.0], 0.5, 0.0)
        assert risk(problem, np.array([1.0, 0.0])) == pytest.approx(0.5 * 0.5 * 4)
        with pytest.raises(DimensionMismatchError):
            risk(problem, np.zeros(3))

    def test_single_update(self):
        problem = SpectrumProblem([1.0, 0.5], [1.0, 2.0], 0.5, 0.0)
        state = initial_state(problem)
        x = np.array([1.0, 1.0])
        y = float(np.dot(problem.theta_star, x))
        new = sgd_step(state, x, y, 0.1, problem)
        assert new.theta == pytest.approx([0.3, 0.3])
        assert new.theta_avg == pytest.approx([0.3, 0.3])
        assert new.t == 1
        assert new.min_risk_so_far <= problem.initial_risk

    def test_zero_step_is_fixed(self):
        problem = SpectrumProblem([1.0], [1.0], 0.5, 0.0)
        new = sgd_step(initial_state(problem), np.array([2.0]), 2.0, 0.0, problem)
        assert new.theta.tolist() == [0.0]

    def test_update_is_row_wise(self):
        theta = np.array([[1.0, 0.0], [0.0, 2.0]])
        x = np.array([[1.0, 1.0], [2.0, 0.0]])
        rows = sgd_update(theta, x, 0.0, 0.5)
        for row, th, xi in zip(rows, theta, x):
            assert row == pytest.approx(sgd_update(th, xi, 0.0, 0.5))
        assert rows[0] == pytest.approx([0.5, -0.5])


class TestRunPaths:
    def test_closed_form_d1(self):
        problem, dist = unit_canonical()
        ck = np.arange(1, 1001)
        last, averaged = run_paths(problem, dist, 0.5, 1000, 1, base_seed=7, checkpoints=ck,
                                   track=(Series.LAST, Series.AVERAGED))
        # float64 underflows past t ~ 537, where both sides are zero
        expected = 0.5 * 0.25 ** ck.astype(float)
        assert last.values == pytest.approx(expected, rel=1e-12, abs=1e-300)
        assert np.all(last.values[:500] > 0)
        assert averaged.values[-1] > 0

    def test_zero_step_size_keeps_initial_risk(self):
        problem = build_power_law(5, 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        curves = run_paths(problem, dist, 0.0, 100, 4, 0, track=(Series.LAST, Series.AVERAGED))
        for curve in curves:
            assert curve.values == pytest.approx(np.full(curve.values.size, problem.initial_risk), rel=1e-14)
            assert np.all(curve.stderrs == 0.0)

    def test_series_shapes_and_running_min(self):
        problem = build_power_law(8, 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        gamma = 1.0 / (2.0 * problem.trace)
        last, averaged, running_min = run_paths(
            problem, dist, gamma, 300, 6, 3, track=(Series.LAST, Series.AVERAGED, Series.RUNNING_MIN))
        assert last.series is Series.LAST and averaged.series is Series.AVERAGED
        assert last.replicates == 6
        assert np.all(np.diff(running_min.values) <= 0)
        assert np.all(running_min.values <= last.values + 1e-15)

    def test_thread_count_does_not_change_results(self):
        problem = build_power_law(2000, 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        gamma = 1.0 / (4.0 * problem.lambda_max)
        (one,) = run_paths(problem, dist, gamma, 40, 3, 11, threads=1)
        (three,) = run_paths(problem, dist, gamma, 40, 3, 11, threads=3)
        assert np.array_equal(one.values, three.values)
        assert np.array_equal(one.stderrs, three.stderrs)

    def test_identity_rotation_matches_eigenbasis(self):
        problem = build_power_law(4, 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        (plain,) = run_paths(problem, dist, 0.2, 100, 2, 5)
        (rotated,) = run_paths(problem, dist, 0.2, 100, 2, 5, rotation=np.eye(4))
        assert rotated.values == pytest.approx(plain.values, rel=1e-12)
        assert rotated.provenance['rotated'] is True

    @pytest.mark.parametrize('kind', ['gaussian', 'canonical'])
    def test_haar_rotation_keeps_risk(self, kind):
        problem = build_power_law(6, 0.5, 0.0)
        dist = make_distribution(problem, kind)
        rotation = random_rotation(6, 9)
        assert rotation @ rotation.T == pytest.approx(np.eye(6), abs=1e-12)
        (plain,) = run_paths(problem, dist, 0.2, 300, 20, 4)
        (rotated,) = run_paths(problem, dist, 0.2, 300, 20, 4, rotation=rotation)
        if kind == 'canonical':
            assert rotated.values == pytest.approx(plain.values, rel=1e-10)
        spread = 4.0 * np.hypot(plain.stderrs, rotated.stderrs)
        assert np.all(np.abs(rotated.values - plain.values) <= spread + 1e-12 * plain.values)

    def test_matches_step_by_step_replay(self):
        problem = build_power_law(5, 0.5, 0.5)
        dist = make_distribution(problem, 'gaussian')
        gamma = 1.0 / (2.0 * problem.trace)
        ck = log_checkpoints(150, 10)
        curves = run_paths(problem, dist, gamma, 150, 1, 21, checkpoints=ck,
                           track=(Series.LAST, Series.AVERAGED, Series.RUNNING_MIN))
        states = reference_path(problem, dist, gamma, 150, 21)
        assert len(states) == 151
        for t in ck:
            state = states[int(t)]
            expected = {
                Series.LAST: risk(problem, state.theta),
                Series.AVERAGED: risk(problem, state.theta_avg),
                Series.RUNNING_MIN: state.min_risk_so_far,
            }
            for curve in curves:
                assert curve.value_at(int(t)) == pytest.approx(expected[curve.series], rel=1e-8)

    def test_rejects_non_orthogonal_rotation(self):
        problem = build_power_law(2, 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        with pytest.raises(ProblemError):
            run_paths(problem, dist, 0.1, 10, 1, 0, rotation=np.array([[1.0, 1.0], [0.0, 1.0]]))

    def test_divergence_reports_step(self):
        problem = SpectrumProblem([1.0], [1.0], 0.5, 0.0)
        dist = make_distribution(problem, 'gaussian')
        with pytest.raises(DivergenceError) as excinfo:
            run_paths(problem, dist, 10.0, 5000, 1, 0)
        assert 1 <= excinfo.value.step <= 5000
        assert excinfo.value.replicate == 0

    def test_rejects_exact_series(self):
        problem, dist = unit_canonical()
        with pytest.raises(ProblemError):
            run_paths(problem, dist, 0.5, 10, 1, 0, track=(Series.EXACT,))
