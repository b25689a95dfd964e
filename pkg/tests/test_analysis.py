import numpy as np
import pytest

from analysis import dominance_report, fit_loglog_slope, linear_regime_transition, local_slopes
from errors import AnalysisError
from runner import RiskCurve, Series, log_checkpoints


def power_curve(p, horizon=10 ** 5, c=3.0, series=Series.EXACT):
    ck = log_checkpoints(horizon)
    return RiskCurve(ck, c * ck.astype(float) ** (-p), series)


class TestSlopeFit:
    @pytest.mark.parametrize("p", [1.0, 1.75])
    def test_exact_power_law(self, p):
        fit = fit_loglog_slope(power_curve(p))
        assert fit.slope == pytest.approx(-p, abs=1e-9)
        assert fit.stderr <= 1e-9
        assert fit.window == (10, float('inf'))

    def test_window_bounds(self):
        ck = log_checkpoints(10 ** 5)
        fit = fit_loglog_slope(power_curve(1.0), 100, 1000)
        assert fit.window == (100, 1000)
        assert fit.n_points == np.count_nonzero((ck >= 100) & (ck <= 1000))

    def test_insufficient_points(self):
        with pytest.raises(AnalysisError):
            fit_loglog_slope(power_curve(1.0), 10 ** 4, 1.1 * 10 ** 4)

    def test_nonpositive_values(self):
        curve = RiskCurve([10, 20, 40, 80], [1.0, 0.5, 0.0, 0.125], Series.LAST)
        with pytest.raises(AnalysisError):
            fit_loglog_slope(curve)
        fit = fit_loglog_slope(curve, skip_nonpositive=True)
        assert fit.n_points == 3

    def test_empty_window(self):
        with pytest.raises(AnalysisError):
            fit_loglog_slope(power_curve(1.0), 100, 100)


class TestDominance:
    def test_equal_curves(self):
        curve = power_curve(1.0)
        report = dominance_report(curve, curve, True, 'thm3', 0.1)
        assert report.min_margin == 0.0
        assert report.violating_t is None and report.holds

    def test_first_violation(self):
        ck = [1, 10, 100, 1000]
        risk = RiskCurve(ck, [1.0, 0.5, 0.3, 0.1], Series.EXACT)
        bound = RiskCurve(ck, [2.0, 0.4, 0.2, 0.2], Series.BOUND_THM3, provenance={'theorem': 'thm3'})
        report = dominance_report(risk, bound, certified=False)
        assert report.violating_t == 10
        assert report.min_margin == pytest.approx(-0.1)
        assert report.theorem == 'thm3'
        assert not report.certified

    def test_swapping_curves(self):
        a = power_curve(1.0, c=2.0)
        b = power_curve(1.2, c=5.0)
        forward = dominance_report(a, b)
        backward = dominance_report(b, a)
        assert forward.min_margin == pytest.approx(-np.max(a.values - b.values))
        assert backward.min_margin == pytest.approx(-np.max(b.values - a.values))

    def test_grid_mismatch(self):
        with pytest.raises(AnalysisError):
            dominance_report(power_curve(1.0, 1000), power_curve(1.0, 10 ** 4))


class TestLinearRegime:
    def test_predicted_scale(self):
        tau, _ = linear_regime_transition(power_curve(1.0), 0.1, 0.01)
        assert tau == pytest.approx(1000)

    def test_scale_invariance(self):
        curve = power_curve(1.0)
        assert linear_regime_transition(curve, 0.3, 0.01)[0] == pytest.approx(
            linear_regime_transition(curve, 0.6, 0.005)[0])

    def test_pure_power_law_has_no_transition(self):
        _, detected = linear_regime_transition(power_curve(1.0), 0.1, 0.01)
        assert detected is None

    def test_short_curve_skips_detection(self):
        _, detected = linear_regime_transition(power_curve(1.0, horizon=2000), 0.1, 0.01)
        assert detected is None

    def test_exponential_tail_detected(self):
        ck = log_checkpoints(10 ** 5)
        t = ck.astype(float)
        curve = RiskCurve(ck, np.exp(-t / 1000.0) / t, Series.EXACT)
        tau, detected = linear_regime_transition(curve, 0.1, 0.01)
        assert detected is not None
        assert tau / 10 <= detected <= tau * 10

    def test_local_slopes_of_power_law(self):
        slopes = local_slopes(power_curve(1.5))
        assert slopes
        assert all(s.slope == pytest.approx(-1.5, abs=1e-9) for s in slopes)
        assert all(s.t_hi == 2 * s.t_lo for s in slopes)
