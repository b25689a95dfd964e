"""
Curve analysis for SGD Lab
Log-log rate slopes, bound dominance reports and detection of the switch to
linear convergence
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.stats import linregress

from errors import AnalysisError
from runner import RiskCurve

DEFAULT_T_LO = 10
REFERENCE_WINDOW = (10, 1000)
TRANSITION_DROP = 1.0
DETECTION_REACH = 5.0


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    window: Tuple[float, float]
    n_points: int


@dataclass(frozen=True)
class BoundReport:
    theorem: str
    gamma: float
    certified: bool
    min_margin: float
    violating_t: Optional[int] = None

    @property
    def holds(self) -> bool:
        return self.violating_t is None


@dataclass(frozen=True)
class LocalSlope:
    t_lo: int
    t_hi: int
    slope: float

    @property
    def centre(self) -> float:
        return math.sqrt(self.t_lo * self.t_hi)


def fit_loglog_slope(curve: RiskCurve, t_lo: float = DEFAULT_T_LO, t_hi: float = math.inf,
                     skip_nonpositive: bool = False) -> SlopeFit:
    """OLS of ln(value) on ln(t) over checkpoints in [t_lo, t_hi]"""
    if not t_lo < t_hi:
        raise AnalysisError(f"Empty slope window [{t_lo}, {t_hi}]")
    inside = (curve.checkpoints >= t_lo) & (curve.checkpoints <= t_hi)
    positive = curve.values > 0
    if not skip_nonpositive and np.any(inside & ~positive):
        bad = int(curve.checkpoints[inside & ~positive][0])
        raise AnalysisError(f"{curve.series.value}: nonpositive value at t={bad} inside the slope window")
    mask = inside & positive
    n_points = int(np.count_nonzero(mask))
    if n_points < 3:
        raise AnalysisError(
            f"{curve.series.value}: {n_points} usable checkpoints in [{t_lo}, {t_hi}], need at least 3")

    fit = linregress(np.log(curve.checkpoints[mask]), np.log(curve.values[mask]))
    return SlopeFit(float(fit.slope), float(fit.intercept), float(fit.stderr), (t_lo, t_hi), n_points)


def dominance_report(exact_curve: RiskCurve, bound_curve: RiskCurve, certified: bool = True,
                     theorem: Optional[str] = None, gamma: Optional[float] = None) -> BoundReport:
    """Smallest bound - risk gap over the shared checkpoint grid"""
    if not np.array_equal(exact_curve.checkpoints, bound_curve.checkpoints):
        raise AnalysisError(
            f"Checkpoint grids differ ({exact_curve.checkpoints.size} vs {bound_curve.checkpoints.size} points)")
    theorem = bound_curve.provenance.get('theorem', bound_curve.series.value) if theorem is None else theorem
    gamma = exact_curve.provenance.get('gamma', math.nan) if gamma is None else gamma

    margins = bound_curve.values - exact_curve.values
    violating = np.flatnonzero(margins < 0)
    violating_t = int(exact_curve.checkpoints[violating[0]]) if violating.size else None
    report = BoundReport(str(theorem), float(gamma), bool(certified), float(np.min(margins)), violating_t)

    if violating_t is not None:
        level = logging.error if certified else logging.warning
        level(f"{theorem}: bound violated first at t={violating_t} (min margin {report.min_margin:.3g}, "
              f"certified={certified})")
    return report


def local_slopes(curve: RiskCurve, t_lo: float = DEFAULT_T_LO) -> List[LocalSlope]:
    """Log-log slopes over dyadic windows [2^k, 2^(k+1)] starting at t_lo"""
    positive = curve.values > 0
    ts = curve.checkpoints[positive]
    vs = curve.values[positive]
    if ts.size == 0:
        return []

    slopes = []
    k = max(0, int(math.ceil(math.log2(t_lo))))
    while 2 ** k < ts[-1]:
        lo, hi = 2 ** k, 2 ** (k + 1)
        window = (ts >= lo) & (ts <= hi)
        if np.count_nonzero(window) >= 2:
            fit = linregress(np.log(ts[window]), np.log(vs[window]))
            slopes.append(LocalSlope(lo, hi, float(fit.slope)))
        k += 1
    return slopes


def linear_regime_transition(curve: RiskCurve, gamma: float,
                             lambda_min: float) -> Tuple[float, Optional[float]]:
    """Predicted 1/(gamma lambda_min) and the first dyadic window where decay steepens past polynomial"""
    tau_predicted = 1.0 / (gamma * lambda_min)
    if curve.checkpoints[-1] < DETECTION_REACH * tau_predicted:
        logging.info(f"Curve ends at t={curve.checkpoints[-1]}, before {DETECTION_REACH:g} x tau={tau_predicted:.4g}; "
                     f"no transition detection")
        return tau_predicted, None

    reference = fit_loglog_slope(curve, *REFERENCE_WINDOW, skip_nonpositive=True)
    threshold = reference.slope - TRANSITION_DROP
    for window in local_slopes(curve):
        if window.slope < threshold:
            logging.info(f"Linear regime detected near t={window.centre:.4g} "
                         f"(local slope {window.slope:.3f} < {threshold:.3f}, tau={tau_predicted:.4g})")
            return tau_predicted, window.centre
    return tau_predicted, None
