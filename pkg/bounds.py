"""
Rate bounds for SGD Lab
Right-hand sides of the three last-iterate rate theorems with their prescribed
step sizes, and exact evaluators for the technical inequalities behind them
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Union

import numpy as np

from errors import InstanceTooLargeError, ProblemError, StepSizeError
from propagator import risk_trajectory
from runner import RiskCurve, Series, validate_checkpoints
from spectrum import FeatureDistribution, ProblemConstants, SpectrumProblem

XI_TOLERANCE = 1e-10
XI_CHUNK = 1 << 20
LEMMA5_MAX_T = 10 ** 6
PRESCRIBED_RTOL = 1e-12

LEMMA3_XS = [2.0 ** (-k) for k in range(2, 41)]
LEMMA3_NS = [1, 2, 5, 10, 100, 1000, 10 ** 4, 10 ** 5]
LEMMA4_SAMPLES = 10 ** 4
LEMMA5_ALPHAS = [round(0.1 * k, 1) for k in range(1, 10)]
LEMMA5_BETAS = [-0.5, 0.0, 0.5, 1.0, 2.0]
LEMMA5_TS = [2, 10, 100, 1000]


class Theorem(Enum):
    THM1 = "thm1"
    THM2 = "thm2"
    THM3 = "thm3"

    @property
    def series(self) -> Series:
        return Series(f"bound_{self.value}")

    @property
    def min_horizon(self) -> int:
        return 2 if self is Theorem.THM1 else 3


@dataclass(frozen=True)
class BoundSpec:
    theorem: Theorem
    constants: ProblemConstants
    gamma: float
    horizon: int
    alpha: Optional[float] = None
    beta: Optional[float] = None
    xi_alpha: Optional[float] = None
    certified: bool = True


@lru_cache(maxsize=64)
def xi_alpha(alpha: float) -> float:
    """sum_{n>=1} n^-(1+alpha) to 1e-10 relative, tail taken as the midpoint of its integral bracket"""
    if not alpha > 0 or not math.isfinite(alpha):
        raise ProblemError(f"xi_alpha needs alpha > 0, got {alpha}")

    # xi >= max(1, 1/alpha); bracket width is at most N^-(1+alpha)
    floor = max(1.0, 1.0 / alpha)
    n_terms = int(math.ceil((1.0 / (2.0 * XI_TOLERANCE * floor)) ** (1.0 / (1.0 + alpha))))

    chunks = []
    stop = n_terms + 1
    # smallest terms first
    while stop > 1:
        start = max(1, stop - XI_CHUNK)
        n = np.arange(start, stop, dtype=float)
        chunks.append(float(np.sum(n ** (-(1.0 + alpha)))))
        stop = start
    partial = math.fsum(chunks)

    upper = n_terms ** (-alpha) / alpha
    lower = (n_terms + 1) ** (-alpha) / alpha
    value = partial + 0.5 * (upper + lower)
    logging.debug(f"xi_{alpha} = {value:.12g} ({n_terms} terms, tail half-width {(upper - lower) / 2:.3g})")
    return value


def _require_alpha(theorem: Theorem, alpha: float):
    if not 0.0 < alpha < 1.0:
        raise StepSizeError(f"{theorem.value} needs alpha in (0, 1), got {alpha}")


def step_size_for(theorem: Union[str, Theorem], constants: ProblemConstants,
                  alpha: Optional[float] = None, T: Optional[int] = None) -> float:
    """Step size prescribed by the theorem for horizon T"""
    theorem = Theorem(theorem)
    if T is None or T < theorem.min_horizon:
        raise StepSizeError(f"{theorem.value} needs T >= {theorem.min_horizon}, got {T}")

    if theorem is Theorem.THM1:
        return 1.0 / (4.0 * constants.R * math.log(T))
    if theorem is Theorem.THM2:
        return 1.0 / (14.0 * constants.R_ln)

    alpha = constants.alpha if alpha is None else alpha
    _require_alpha(theorem, alpha)
    if alpha != constants.alpha:
        raise ProblemError(f"Constants were computed for alpha={constants.alpha}, not {alpha}")
    xi = xi_alpha(alpha)
    capacity_step = (32.0 * xi * constants.R_alpha) ** (-1.0 / (1.0 - alpha))
    return min(capacity_step, 1.0 / (4.0 * constants.lambda_max))


def bound_value(theorem: Union[str, Theorem], constants: ProblemConstants, gamma: float, T: float) -> float:
    theorem = Theorem(theorem)
    if theorem is Theorem.THM1:
        return 3.0 * constants.R * constants.norm_theta_sq * math.log(T) / T
    if theorem is Theorem.THM2:
        return 10.0 * constants.R_ln * constants.C_ln / T
    beta = constants.beta
    rate = 1.0 + min(constants.alpha, beta)
    return 2.0 * constants.C_beta * ((1.0 + beta) / gamma) ** (1.0 + beta) / T ** rate


def gamma_condition_holds(theorem: Theorem, constants: ProblemConstants, gamma: float, T: int) -> bool:
    """Whether a user step size meets the theorem's step-size clause"""
    if gamma <= 0 or not math.isfinite(gamma):
        return False
    if theorem is Theorem.THM3:
        _require_alpha(theorem, constants.alpha)
        xi = xi_alpha(constants.alpha)
        cap = 1.0 / (4.0 * constants.lambda_max)
        return (gamma ** (1.0 - constants.alpha) * 32.0 * xi * constants.R_alpha <= 1.0 + PRESCRIBED_RTOL
                and gamma <= cap * (1.0 + PRESCRIBED_RTOL))
    # thm1 and thm2 fix the step size exactly
    prescribed = step_size_for(theorem, constants, T=T)
    return abs(gamma - prescribed) <= PRESCRIBED_RTOL * prescribed


def make_bound_spec(theorem: Union[str, Theorem], constants: ProblemConstants, T: int,
                    gamma: Optional[float] = None, force: bool = False) -> BoundSpec:
    """Bound setup with the prescribed step size, or a checked user step size"""
    theorem = Theorem(theorem)
    if T < theorem.min_horizon:
        raise StepSizeError(f"{theorem.value} needs T >= {theorem.min_horizon}, got {T}")

    certified = True
    if gamma is None:
        gamma = step_size_for(theorem, constants, T=T)
    elif not gamma_condition_holds(theorem, constants, gamma, T):
        if not force:
            raise StepSizeError(f"gamma={gamma:.6g} violates the {theorem.value} step-size condition")
        logging.warning(f"gamma={gamma:.6g} violates the {theorem.value} step-size condition; "
                        f"bound is reported as non-certified")
        certified = False

    xi = None
    if theorem is Theorem.THM3:
        xi = xi_alpha(constants.alpha)
    logging.info(f"{theorem.value}: gamma={gamma:.6g} certified={certified}")
    return BoundSpec(theorem, constants, gamma, T, constants.alpha, constants.beta, xi, certified)


def bound_curve(spec: BoundSpec, checkpoints: Iterable[int], horizon: Optional[int] = None,
                run_id: str = "run") -> RiskCurve:
    """Bound values at the checkpoints the theorem covers"""
    horizon = spec.horizon if horizon is None else horizon
    ck = validate_checkpoints(checkpoints, horizon)
    ck = ck[ck >= spec.theorem.min_horizon]
    if ck.size == 0:
        raise ProblemError(f"No checkpoint reaches the {spec.theorem.value} minimum horizon")

    c = spec.constants
    if spec.theorem is Theorem.THM1:
        # gamma depends on the horizon, so ln T stays fixed along the curve
        values = 3.0 * c.R * c.norm_theta_sq * math.log(horizon) / ck
    else:
        values = np.array([bound_value(spec.theorem, c, spec.gamma, int(t)) for t in ck])

    provenance = {'theorem': spec.theorem.value, 'gamma': spec.gamma, 'certified': spec.certified}
    return RiskCurve(ck, values, spec.theorem.series, 1, None, run_id, provenance)


def s_n_exact(x: float, n: int) -> float:
    """S_n(x) = sum_{k=0}^{n-1} (1-x)^k / (n-k)"""
    if n < 1:
        raise ProblemError(f"S_n needs n >= 1, got {n}")
    k = np.arange(n, dtype=float)
    return float(np.sum((1.0 - x) ** k / (n - k)))


def lemma3_check(x: float, n: int) -> float:
    if not 0.0 < x <= 0.25:
        raise ProblemError(f"x must lie in (0, 1/4], got {x}")
    return 7.0 * math.log(1.0 / x) / n - x * s_n_exact(x, n)


def lemma4_check(x: float, t: int, r: float) -> float:
    if not 0.0 < x < 1.0 or t < 1 or r <= 0:
        raise ProblemError(f"Need x in (0,1), t >= 1, r > 0 (got x={x}, t={t}, r={r})")
    return r ** r / t ** r - x ** r * (1.0 - x) ** t


def s_t_exact(alpha: float, beta: float, T: int) -> float:
    """S_T(alpha, beta) = sum_{t=1}^{T-1} 1 / (t^(1+beta) (T-t)^(1+alpha))"""
    if T < 2:
        raise ProblemError(f"S_T needs T >= 2, got {T}")
    if T > LEMMA5_MAX_T:
        raise InstanceTooLargeError(f"S_T is evaluated exactly only for T <= {LEMMA5_MAX_T}")
    t = np.arange(1, T, dtype=float)
    return float(np.sum(1.0 / (t ** (1.0 + beta) * (T - t) ** (1.0 + alpha))))


def lemma5_exact_and_check(alpha: float, beta: float, T: int):
    """(S_T, 2^(2+a^b) xi_(avb) / T^(1+a^b) - S_T)"""
    if not 0.0 < alpha < 1.0:
        raise ProblemError(f"alpha must lie in (0, 1), got {alpha}")
    if beta <= -1.0:
        raise ProblemError(f"beta must be > -1, got {beta}")
    value = s_t_exact(alpha, beta, T)
    low = min(alpha, beta)
    bound = 2.0 ** (2.0 + low) * xi_alpha(max(alpha, beta)) / T ** (1.0 + low)
    return value, bound - value


def lemma2_margins(problem: SpectrumProblem, dist: FeatureDistribution,
                   constants: ProblemConstants, gamma: float, T: int) -> np.ndarray:
    """tr(M_0)/(4 gamma t) + gamma R sum_{k<t} f_k/(t-k) - f_t for t = 1..T"""
    if gamma <= 0 or gamma > 1.0 / (4.0 * problem.lambda_max):
        raise StepSizeError(f"The function-value recursion needs 0 < gamma <= 1/(4 lambda_max), got {gamma}")
    f = risk_trajectory(problem, dist, gamma, T)
    t = np.arange(1, T + 1, dtype=float)
    weights = 1.0 / t
    memory = np.convolve(f[:T], weights)[:T]
    bias = float(np.sum(problem.theta_star ** 2)) / (4.0 * gamma * t)
    return bias + gamma * constants.R * memory - f[1:]


def _record(lemma: str, value: float, margin: float, **params) -> Dict[str, Optional[float]]:
    record = {'lemma': lemma, 'x': None, 'n': None, 't': None, 'r': None,
              'alpha': None, 'beta': None, 'T': None}
    record.update(params)
    record['value'] = value
    record['margin'] = margin
    return record


def lemma3_grid(xs: Iterable[float] = LEMMA3_XS, ns: Iterable[int] = LEMMA3_NS) -> List[Dict]:
    records = []
    for n in ns:
        for x in xs:
            value = s_n_exact(x, n)
            records.append(_record('lemma3', value, lemma3_check(x, n), x=x, n=n))
    return records


def lemma4_grid(seed: int = 0, samples: int = LEMMA4_SAMPLES) -> List[Dict]:
    rng = np.random.default_rng(seed)
    xs = rng.uniform(np.finfo(float).tiny, 1.0, samples)
    ts = rng.integers(1, 10 ** 6, size=samples, endpoint=True)
    rs = 5.0 * (1.0 - rng.random(samples))
    records = []
    for x, t, r in zip(xs, ts, rs):
        x, t, r = float(x), int(t), float(r)
        value = x ** r * (1.0 - x) ** t
        records.append(_record('lemma4', value, lemma4_check(x, t, r), x=x, t=t, r=r))
    return records


def lemma5_grid(alphas: Iterable[float] = LEMMA5_ALPHAS, betas: Iterable[float] = LEMMA5_BETAS,
                Ts: Iterable[int] = LEMMA5_TS) -> List[Dict]:
    records = []
    for alpha in alphas:
        for beta in betas:
            for T in Ts:
                value, margin = lemma5_exact_and_check(alpha, beta, T)
                records.append(_record('lemma5', value, margin, alpha=alpha, beta=beta, T=T))
    return records
