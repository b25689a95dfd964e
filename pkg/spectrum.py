"""
Spectrum problems for SGD Lab
Builds synthetic noiseless least-squares problems in the covariance eigenbasis,
their feature laws and the assumption constants the rate theorems consume
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from errors import (IterationCapError, NumericalOverflowError, ProblemError,
                    UnsupportedDistributionError)

DEFAULT_TIGHT_EPS = 0.01
LAMBDA_O_MAX_DOUBLINGS = 200


class OptimumMode(Enum):
    FIG1 = "fig1"
    TIGHT = "tight"


class DistributionKind(Enum):
    GAUSSIAN = "gaussian"
    CANONICAL = "canonical"


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpectrumProblem:
    """Eigenvalues of H and eigen-coordinates of the optimum"""
    lambdas: np.ndarray
    theta_star: np.ndarray
    alpha: float
    beta: float
    optimum_mode: OptimumMode = OptimumMode.TIGHT
    eps: float = DEFAULT_TIGHT_EPS

    def __post_init__(self):
        lambdas = _frozen(self.lambdas)
        theta_star = _frozen(self.theta_star)
        if lambdas.ndim != 1 or lambdas.size < 1:
            raise ProblemError("A problem needs at least one eigenvalue")
        if theta_star.shape != lambdas.shape:
            raise ProblemError(
                f"theta_star has {theta_star.size} coordinates for {lambdas.size} eigenvalues")
        if not np.all(np.isfinite(lambdas)) or np.any(lambdas <= 0):
            raise ProblemError("Eigenvalues must be finite and strictly positive")
        if np.any(np.diff(lambdas) > 0):
            raise ProblemError("Eigenvalues must be sorted in non-increasing order")
        if not np.all(np.isfinite(theta_star)):
            raise ProblemError("theta_star must be finite")
        object.__setattr__(self, 'lambdas', lambdas)
        object.__setattr__(self, 'theta_star', theta_star)
        object.__setattr__(self, 'optimum_mode', OptimumMode(self.optimum_mode))

    @property
    def d(self) -> int:
        return int(self.lambdas.size)

    @property
    def lambda_max(self) -> float:
        return float(self.lambdas[0])

    @property
    def lambda_min(self) -> float:
        return float(self.lambdas[-1])

    @property
    def trace(self) -> float:
        return float(np.sum(self.lambdas))

    @property
    def initial_risk(self) -> float:
        """Risk of theta_0 = 0"""
        return 0.5 * float(np.sum(self.lambdas * self.theta_star ** 2))


def _check_exponents(alpha: float, beta: float):
    if not 0.0 <= alpha < 1.0:
        raise ProblemError(f"Capacity exponent alpha must lie in [0, 1), got {alpha}")
    if beta <= -1.0:
        raise ProblemError(f"Source exponent beta must be > -1, got {beta}")


def build_power_law(d: int, alpha: float, beta: float,
                    optimum_mode: Union[str, OptimumMode] = OptimumMode.TIGHT,
                    eps: float = DEFAULT_TIGHT_EPS) -> SpectrumProblem:
    """Power-law spectrum lambda_i = i^(-1/(1-alpha)) with a matching optimum"""
    if d < 1:
        raise ProblemError(f"Dimension must be >= 1, got {d}")
    _check_exponents(alpha, beta)
    mode = OptimumMode(optimum_mode)

    i = np.arange(1, d + 1, dtype=float)
    lambdas = i ** (-1.0 / (1.0 - alpha))
    if mode is OptimumMode.FIG1:
        # verbatim exponent; C_beta diverges with d when beta > 0
        theta_star = i ** (-(1.0 - beta / (1.0 - alpha)) / 2.0)
    else:
        if eps <= 0:
            raise ProblemError(f"tight optimum needs eps > 0, got {eps}")
        theta_star = i ** (-(1.0 + beta / (1.0 - alpha) + eps) / 2.0)

    logging.debug(f"Built power-law problem d={d} alpha={alpha} beta={beta} mode={mode.value}")
    return SpectrumProblem(lambdas, theta_star, alpha, beta, mode, eps)


class FeatureDistribution:
    """Sampling law of x in eigen-coordinates with E[xx^T] = H"""
    kind: DistributionKind

    def __init__(self, problem: SpectrumProblem):
        self.problem = problem

    @property
    def d(self) -> int:
        return self.problem.d

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raise NotImplementedError

    def fourth_moment_diagonal(self, a: np.ndarray) -> np.ndarray:
        """Diagonal of E[<x, A x> x x^T] for a diagonal A given by its entries"""
        raise NotImplementedError


class GaussianFeatures(FeatureDistribution):
    kind = DistributionKind.GAUSSIAN

    def __init__(self, problem: SpectrumProblem):
        super().__init__(problem)
        self.std = _frozen(np.sqrt(problem.lambdas))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.d)) * self.std

    def fourth_moment_diagonal(self, a: np.ndarray) -> np.ndarray:
        # E[<x,Ax> xx^T] = H tr(AH) + 2 HAH
        lam = self.problem.lambdas
        return lam * float(np.dot(a, lam)) + 2.0 * lam ** 2 * a


class CanonicalAtoms(FeatureDistribution):
    kind = DistributionKind.CANONICAL

    def __init__(self, problem: SpectrumProblem, probs: np.ndarray, scales: np.ndarray):
        super().__init__(problem)
        probs = _frozen(probs)
        scales = _frozen(scales)
        if probs.shape != problem.lambdas.shape or scales.shape != probs.shape:
            raise ProblemError("Canonical atoms need one probability and one scale per eigenvalue")
        if np.any(probs <= 0) or abs(float(np.sum(probs)) - 1.0) > 1e-12:
            raise ProblemError("Canonical probabilities must be positive and sum to 1")
        if np.any(scales <= 0):
            raise ProblemError("Canonical scales must be positive")
        self.probs = probs
        self.scales = scales

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(self.d, size=n, p=self.probs)
        x = np.zeros((n, self.d))
        x[np.arange(n), idx] = self.scales[idx]
        return x

    def fourth_moment_diagonal(self, a: np.ndarray) -> np.ndarray:
        # only the atom in direction i contributes: p_i s_i^4 a_i
        return self.probs * self.scales ** 4 * a


def make_distribution(problem: SpectrumProblem, kind: Union[str, DistributionKind],
                      prob_exponent: Optional[float] = None) -> FeatureDistribution:
    """Attach a Gaussian or canonical-atom feature law to a problem"""
    try:
        kind = DistributionKind(kind)
    except ValueError:
        raise ProblemError(f"Unknown distribution kind: {kind}")

    if kind is DistributionKind.GAUSSIAN:
        return GaussianFeatures(problem)

    q = 1.0 - problem.alpha if prob_exponent is None else prob_exponent
    with np.errstate(over='ignore', divide='ignore', invalid='ignore'):
        weights = problem.lambdas ** q
        total = float(np.sum(weights))
    if not np.all(np.isfinite(weights)) or not math.isfinite(total) or total <= 0:
        raise ProblemError(f"lambda_i^{q} is not finite for this spectrum")
    probs = weights / total
    probs = probs / probs.sum()
    scales = np.sqrt(problem.lambdas / probs)
    return CanonicalAtoms(problem, probs, scales)


@dataclass(frozen=True)
class ProblemConstants:
    """Assumption constants of a (problem, distribution) pair"""
    trace_H: float
    lambda_max: float
    lambda_min: float
    norm_theta_sq: float
    R: float
    lambda_o: float
    R_ln: float
    R_alpha: float
    C_ln: float
    C_beta: float
    distribution_kind: DistributionKind
    alpha: float
    beta: float
    trace_H_1ma: float = field(default=0.0)

    def as_dict(self) -> Dict[str, float]:
        out = {k: v for k, v in self.__dict__.items() if k != 'distribution_kind'}
        out['distribution_kind'] = self.distribution_kind.value
        return out


def _moment_constant(dist: FeatureDistribution, a: np.ndarray) -> float:
    """Smallest R with E[<x,Ax> xx^T] <= R H for diagonal A"""
    if not isinstance(dist, (GaussianFeatures, CanonicalAtoms)):
        raise UnsupportedDistributionError(f"No closed-form moments for {type(dist).__name__}")
    with np.errstate(over='ignore', invalid='ignore'):
        ratio = dist.fourth_moment_diagonal(a) / dist.problem.lambdas
    return float(np.max(ratio))


def log_moment_constant(problem: SpectrumProblem, dist: FeatureDistribution,
                        lambda_o: float) -> float:
    """R_ln at reference scale lambda_o"""
    return _moment_constant(dist, np.log(lambda_o / problem.lambdas))


def select_lambda_o(problem: SpectrumProblem, dist: FeatureDistribution) -> float:
    """First doubling of e * lambda_max with 7 R_ln(lambda_o) <= lambda_o"""
    base = math.e * problem.lambda_max
    for k in range(LAMBDA_O_MAX_DOUBLINGS + 1):
        lambda_o = base * 2.0 ** k
        r_ln = log_moment_constant(problem, dist, lambda_o)
        if 7.0 * r_ln <= lambda_o:
            logging.debug(f"Selected lambda_o = e*lambda_max*2^{k} = {lambda_o:.6g} (R_ln = {r_ln:.6g})")
            return lambda_o
    raise IterationCapError(
        f"No lambda_o found after {LAMBDA_O_MAX_DOUBLINGS} doublings; problem looks mis-specified")


def compute_constants(problem: SpectrumProblem, dist: FeatureDistribution,
                      alpha: Optional[float] = None, beta: Optional[float] = None) -> ProblemConstants:
    """Smallest valid constants of Assumptions 1-6 for the given law"""
    alpha = problem.alpha if alpha is None else alpha
    beta = problem.beta if beta is None else beta
    _check_exponents(alpha, beta)

    lam = problem.lambdas
    theta_sq = problem.theta_star ** 2
    lambda_o = select_lambda_o(problem, dist)

    with np.errstate(over='ignore', invalid='ignore', divide='ignore'):
        constants = {
            'trace_H': float(np.sum(lam)),
            'lambda_max': problem.lambda_max,
            'lambda_min': problem.lambda_min,
            'norm_theta_sq': float(np.sum(theta_sq)),
            'R': _moment_constant(dist, np.ones_like(lam)),
            'lambda_o': lambda_o,
            'R_ln': log_moment_constant(problem, dist, lambda_o),
            'R_alpha': _moment_constant(dist, lam ** (-alpha)),
            'C_ln': float(np.sum(theta_sq * np.log(lambda_o / lam))),
            # lam ** -0.0 is exactly 1, so C_0 == norm_theta_sq bitwise
            'C_beta': float(np.sum(lam ** (-beta) * theta_sq)),
            'trace_H_1ma': float(np.sum(lam ** (1.0 - alpha))),
        }

    for name, value in constants.items():
        if not math.isfinite(value) or value < 0:
            raise NumericalOverflowError(name, value)

    return ProblemConstants(distribution_kind=dist.kind, alpha=alpha, beta=beta, **constants)


def eigenvalue_decay_margin(problem: SpectrumProblem, alpha: Optional[float] = None) -> float:
    """min_i tr(H^(1-alpha)) - i * lambda_i^(1-alpha); nonnegative for sorted spectra"""
    alpha = problem.alpha if alpha is None else alpha
    powered = problem.lambdas ** (1.0 - alpha)
    i = np.arange(1, problem.d + 1)
    return float(np.min(np.sum(powered) - i * powered))


def problem_to_dict(problem: SpectrumProblem) -> dict:
    return {
        "d": problem.d,
        "alpha": problem.alpha,
        "beta": problem.beta,
        "lambdas": problem.lambdas.tolist(),
        "theta_star": problem.theta_star.tolist(),
        "optimum_mode": problem.optimum_mode.value,
        "eps": problem.eps,
    }


def problem_from_dict(data: dict) -> SpectrumProblem:
    expected = {"d", "alpha", "beta", "lambdas", "theta_star", "optimum_mode", "eps"}
    unknown = set(data) - expected
    missing = expected - set(data)
    if unknown or missing:
        raise ProblemError(f"Problem document keys mismatch (unknown={sorted(unknown)}, missing={sorted(missing)})")
    _check_exponents(data["alpha"], data["beta"])
    try:
        mode = OptimumMode(data["optimum_mode"])
    except ValueError:
        raise ProblemError(f"Unknown optimum mode: {data['optimum_mode']}")
    problem = SpectrumProblem(data["lambdas"], data["theta_star"], data["alpha"],
                              data["beta"], mode, data["eps"])
    if problem.d != data["d"]:
        raise ProblemError(f"Document says d={data['d']} but stores {problem.d} eigenvalues")
    return problem


def save_problem(problem: SpectrumProblem, path: Union[str, Path]):
    """Save a problem to a JSON document"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(problem_to_dict(problem), f, indent=4)
    logging.info(f"Saved problem (d={problem.d}) to {path}")


def load_problem(path: Union[str, Path]) -> SpectrumProblem:
    """Load a problem from a JSON document"""
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ProblemError(f"Cannot read problem document {path}: {e}")
    return problem_from_dict(data)
