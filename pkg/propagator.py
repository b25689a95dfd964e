"""
Exact risk propagation for SGD Lab
Iterates the diagonal second-moment recursion of the SGD deviation in the
covariance eigenbasis, plus a full-matrix oracle for small instances
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional

import numpy as np

from errors import (DivergenceError, InstanceTooLargeError, ProblemError,
                    StepSizeError, UnsupportedDistributionError)
from runner import RiskCurve, Series, log_checkpoints, validate_checkpoints
from spectrum import CanonicalAtoms, FeatureDistribution, GaussianFeatures, SpectrumProblem

ACCUMULATOR = np.longdouble
ORACLE_MAX_D = 8
ORACLE_MAX_T = 500
CLOSED_FORM_MAX_T = 1000
CLOSED_FORM_MAX_D = 50


@dataclass(frozen=True)
class PropagatorState:
    m: np.ndarray
    t: int
    gamma: float
    risk: float


def f_terms(dist: FeatureDistribution, m: np.ndarray) -> np.ndarray:
    """Mixing terms f_i = E[<v_i, x>^2 x^T M x] for a diagonal M"""
    lam = dist.problem.lambdas.astype(np.asarray(m).dtype)
    if isinstance(dist, GaussianFeatures):
        return lam * np.dot(lam, m) + 2 * lam * lam * m
    if isinstance(dist, CanonicalAtoms):
        return lam * lam / dist.probs.astype(lam.dtype) * m
    raise UnsupportedDistributionError(
        f"Diagonal recursion is only closed for Gaussian and canonical laws, not {type(dist).__name__}")


def check_step_size(problem: SpectrumProblem, gamma: float, allow_large_gamma: bool):
    if gamma < 0 or not math.isfinite(gamma):
        raise ProblemError(f"Step size must be finite and nonnegative, got {gamma}")
    cap = 1.0 / (4.0 * problem.lambda_max)
    if gamma > cap:
        if not allow_large_gamma:
            raise StepSizeError(f"gamma={gamma:.6g} exceeds 1/(4 lambda_max)={cap:.6g}; "
                                f"pass the override to study larger steps")
        logging.warning(f"gamma={gamma:.6g} exceeds 1/(4 lambda_max)={cap:.6g}; "
                        f"second moments may turn negative or diverge")


class DiagonalRecursion:
    """m_{t+1} = c * m + b * <lambda, m>, the linear form of the diagonal recursion"""

    def __init__(self, dist: FeatureDistribution, gamma: float):
        lam = dist.problem.lambdas.astype(ACCUMULATOR)
        g = ACCUMULATOR(gamma)
        self.lam = lam
        if isinstance(dist, GaussianFeatures):
            self.c = 1 - 2 * g * lam + 2 * g * g * lam * lam
            self.b = g * g * lam
        elif isinstance(dist, CanonicalAtoms):
            self.c = 1 - 2 * g * lam + g * g * lam * lam / dist.probs.astype(ACCUMULATOR)
            self.b = None
        else:
            raise UnsupportedDistributionError(
                f"Diagonal recursion is only closed for Gaussian and canonical laws, not {type(dist).__name__}")

    def step(self, m: np.ndarray, trace: ACCUMULATOR) -> np.ndarray:
        if self.b is None:
            return self.c * m
        return self.c * m + self.b * trace


def propagate_states(problem: SpectrumProblem, dist: FeatureDistribution, gamma: float,
                     horizon: int, allow_large_gamma: bool = False) -> Iterator[PropagatorState]:
    """Yield the exact diagonal state for t = 0..horizon"""
    check_step_size(problem, gamma, allow_large_gamma)
    recursion = DiagonalRecursion(dist, gamma)
    m = problem.theta_star.astype(ACCUMULATOR) ** 2
    # shared trace recomputed every step, no incremental update
    trace = np.dot(recursion.lam, m)
    yield PropagatorState(m, 0, gamma, float(trace / 2))
    with np.errstate(over='ignore', invalid='ignore', under='ignore'):
        for t in range(1, horizon + 1):
            m = recursion.step(m, trace)
            trace = np.dot(recursion.lam, m)
            if not np.isfinite(trace):
                logging.error(f"Exact propagation diverged at step {t} (gamma={gamma:.6g})")
                raise DivergenceError(t, what="second moment")
            yield PropagatorState(m, t, gamma, float(trace / 2))


def risk_trajectory(problem: SpectrumProblem, dist: FeatureDistribution, gamma: float,
                    horizon: int, allow_large_gamma: bool = False) -> np.ndarray:
    """Expected risks f_0..f_horizon as float64"""
    out = np.empty(horizon + 1)
    for state in propagate_states(problem, dist, gamma, horizon, allow_large_gamma):
        out[state.t] = state.risk
    return out


def propagate_diagonal(problem: SpectrumProblem, dist: FeatureDistribution, gamma: float,
                       horizon: int, checkpoints: Optional[Iterable[int]] = None,
                       allow_large_gamma: bool = False, run_id: str = "run") -> RiskCurve:
    """Exact expected last-iterate risk at the checkpoints"""
    if horizon < 1:
        raise ProblemError(f"Horizon must be >= 1, got {horizon}")
    ck = log_checkpoints(horizon) if checkpoints is None else validate_checkpoints(checkpoints, horizon)
    last = int(ck[-1])
    values = np.empty(ck.size)
    ck_pos = 0

    logging.info(f"Propagating exact risk for {last} steps (d={problem.d}, law={dist.kind.value}, gamma={gamma:.6g})")
    for state in propagate_states(problem, dist, gamma, last, allow_large_gamma):
        if state.t == ck[ck_pos]:
            values[ck_pos] = state.risk
            ck_pos += 1

    provenance = {'law': dist.kind.value, 'gamma': gamma, 'd': problem.d,
                  'alpha': problem.alpha, 'beta': problem.beta}
    return RiskCurve(ck, values, Series.EXACT, 1, None, run_id, provenance)


def _check_closed_form_size(problem: SpectrumProblem, horizon: int):
    if horizon > CLOSED_FORM_MAX_T or problem.d > CLOSED_FORM_MAX_D:
        raise InstanceTooLargeError(
            f"Closed-form check is O(T^2); limited to T <= {CLOSED_FORM_MAX_T}, d <= {CLOSED_FORM_MAX_D}")


def _unrolled_history(problem: SpectrumProblem, dist: FeatureDistribution, gamma: float, horizon: int):
    """Iterated m^t and the f^t history, t = 0..horizon"""
    ms = np.empty((horizon + 1, problem.d), dtype=ACCUMULATOR)
    fs = np.empty((horizon + 1, problem.d), dtype=ACCUMULATOR)
    lam = problem.lambdas.astype(ACCUMULATOR)
    g = ACCUMULATOR(gamma)
    m = problem.theta_star.astype(ACCUMULATOR) ** 2
    for t in range(horizon + 1):
        ms[t] = m
        fs[t] = f_terms(dist, m)
        m = m - 2 * g * lam * m + g * g * fs[t]
    return ms, fs


def _relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(np.abs(b), np.finfo(float).tiny)
    return float(np.max(np.abs(a - b) / scale))


def closed_form_check(problem: SpectrumProblem, dist: FeatureDistribution, gamma: float,
                      horizon: int) -> float:
    """Max relative gap between the unrolled sum and the iterated recursion"""
    _check_closed_form_size(problem, horizon)
    ms, fs = _unrolled_history(problem, dist, gamma, horizon)
    lam = problem.lambdas.astype(ACCUMULATOR)
    rho = 1 - 2 * ACCUMULATOR(gamma) * lam
    g2 = ACCUMULATOR(gamma) ** 2

    worst = 0.0
    for t in range(1, horizon + 1):
        powers = rho[None, :] ** np.arange(t - 1, -1, -1)[:, None]
        unrolled = rho ** t * ms[0] + g2 * np.sum(powers * fs[:t], axis=0)
        worst = max(worst, _relative_gap(unrolled, ms[t]))

    printed = printed_form_discrepancy(problem, dist, gamma, horizon, ms, fs)
    if printed > 1e-10:
        logging.warning(f"Printed unrolled form differs from the iterated recursion "
                        f"(max relative gap {printed:.3g}); the iterated form is authoritative")
    return worst


def printed_form_discrepancy(problem: SpectrumProblem, dist: FeatureDistribution, gamma: float,
                             horizon: int, ms: Optional[np.ndarray] = None,
                             fs: Optional[np.ndarray] = None) -> float:
    """Gap of the extra-lambda variant m^t = rho^t m^0 + g^2 sum_k lambda_i rho^(t-1-k) f^k"""
    _check_closed_form_size(problem, horizon)
    if ms is None or fs is None:
        ms, fs = _unrolled_history(problem, dist, gamma, horizon)
    lam = problem.lambdas.astype(ACCUMULATOR)
    rho = 1 - 2 * ACCUMULATOR(gamma) * lam
    g2 = ACCUMULATOR(gamma) ** 2

    worst = 0.0
    for t in range(1, horizon + 1):
        powers = rho[None, :] ** np.arange(t - 1, -1, -1)[:, None]
        printed = rho ** t * ms[0] + g2 * lam * np.sum(powers * fs[:t], axis=0)
        worst = max(worst, _relative_gap(printed, ms[t]))
    return worst


def expected_fourth_moment(dist: FeatureDistribution, M: np.ndarray) -> np.ndarray:
    """E[x^T M x x x^T] for a full symmetric M"""
    lam = dist.problem.lambdas
    if isinstance(dist, GaussianFeatures):
        H = np.diag(lam)
        return H * float(np.trace(M @ H)) + 2.0 * H @ M @ H
    if isinstance(dist, CanonicalAtoms):
        return np.diag(dist.probs * dist.scales ** 4 * np.diag(M))
    raise UnsupportedDistributionError(f"No closed-form fourth moment for {type(dist).__name__}")


def propagate_full_oracle(problem: SpectrumProblem, dist: FeatureDistribution, gamma: float,
                          horizon: int) -> np.ndarray:
    """Full covariance M_t of the deviation, t = 0..horizon, shape (T+1, d, d)"""
    if problem.d > ORACLE_MAX_D or horizon > ORACLE_MAX_T:
        raise InstanceTooLargeError(
            f"Full oracle limited to d <= {ORACLE_MAX_D} and T <= {ORACLE_MAX_T} "
            f"(got d={problem.d}, T={horizon})")
    H = np.diag(problem.lambdas)
    A = np.eye(problem.d) - gamma * H
    M = np.outer(problem.theta_star, problem.theta_star)
    out = np.empty((horizon + 1, problem.d, problem.d))
    out[0] = M
    for t in range(1, horizon + 1):
        # E[(H - xx^T) M (H - xx^T)] = E[x^T M x xx^T] - HMH
        noise = expected_fourth_moment(dist, M) - H @ M @ H
        M = A @ M @ A + gamma ** 2 * noise
        M = 0.5 * (M + M.T)
        out[t] = M
    return out
