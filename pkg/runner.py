"""
SGD path runner for SGD Lab
Simulates constant step-size SGD on a stream of noiseless samples and turns
replicate paths into risk curves (last iterate, Polyak average, running minimum)
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from errors import DimensionMismatchError, DivergenceError, ProblemError
from replicate_pool import ReplicatePool
from spectrum import FeatureDistribution, SpectrumProblem

MASK64 = (1 << 64) - 1
SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
CHUNK_STEPS = 1024
MAX_BLOCK_REPLICATES = 64
BLOCK_BUDGET = 1 << 21  # floats per sample chunk
DEFAULT_CHECKPOINT_COUNT = 64


class Series(Enum):
    LAST = "last"
    AVERAGED = "averaged"
    RUNNING_MIN = "running_min"
    EXACT = "exact"
    BOUND_THM1 = "bound_thm1"
    BOUND_THM2 = "bound_thm2"
    BOUND_THM3 = "bound_thm3"


MONTE_CARLO_SERIES = (Series.LAST, Series.AVERAGED, Series.RUNNING_MIN)


@dataclass
class RiskCurve:
    """Risk (or bound) values at checkpoints"""
    checkpoints: np.ndarray
    values: np.ndarray
    series: Series
    replicates: int = 1
    stderrs: Optional[np.ndarray] = None
    run_id: str = "run"
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.checkpoints = np.asarray(self.checkpoints, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        self.series = Series(self.series)
        if self.values.shape != self.checkpoints.shape:
            raise ProblemError(
                f"{self.series.value}: {self.values.size} values for {self.checkpoints.size} checkpoints")
        if np.any(np.diff(self.checkpoints) <= 0):
            raise ProblemError(f"{self.series.value}: checkpoints must be strictly increasing")
        if np.any(self.values < 0):
            raise ProblemError(f"{self.series.value}: risk values must be nonnegative")
        if self.stderrs is not None:
            self.stderrs = np.asarray(self.stderrs, dtype=float)
            if self.stderrs.shape != self.values.shape:
                raise ProblemError(f"{self.series.value}: stderrs do not match values")

    def value_at(self, t: int) -> float:
        idx = np.searchsorted(self.checkpoints, t)
        if idx >= self.checkpoints.size or self.checkpoints[idx] != t:
            raise KeyError(t)
        return float(self.values[idx])


@dataclass(frozen=True)
class SgdState:
    theta: np.ndarray
    theta_avg: np.ndarray
    t: int
    min_risk_so_far: float


def risk(problem: SpectrumProblem, theta: np.ndarray) -> float:
    """Population risk 1/2 sum_i lambda_i (theta_i - theta*_i)^2"""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (problem.d,):
        raise DimensionMismatchError(problem.d, theta.size)
    dev = theta - problem.theta_star
    return 0.5 * float(np.sum(problem.lambdas * dev * dev))


def initial_state(problem: SpectrumProblem) -> SgdState:
    zeros = np.zeros(problem.d)
    return SgdState(zeros, zeros.copy(), 0, problem.initial_risk)


def sgd_update(theta: np.ndarray, x: np.ndarray, y, gamma: float) -> np.ndarray:
    """theta - gamma (<theta, x> - y) x, row-wise when theta stacks several iterates"""
    residual = np.sum(theta * x, axis=-1) - y
    return theta - gamma * np.expand_dims(residual, -1) * x


def sgd_step(state: SgdState, x: np.ndarray, y: float, gamma: float,
             problem: SpectrumProblem) -> SgdState:
    """One SGD update on the sample (x, y)"""
    x = np.asarray(x, dtype=float)
    if x.shape != state.theta.shape:
        raise DimensionMismatchError(state.theta.size, x.size)
    if gamma < 0:
        raise ProblemError(f"Step size must be nonnegative, got {gamma}")

    with np.errstate(over='ignore', invalid='ignore'):
        theta = sgd_update(state.theta, x, y, gamma)
        t = state.t + 1
        theta_avg = state.theta_avg + (theta - state.theta_avg) / t
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(t)

    current = risk(problem, theta)
    return SgdState(theta, theta_avg, t, min(state.min_risk_so_far, current))


def mix_seed(base_seed: int, index: int) -> int:
    """SplitMix64 finalizer of base_seed + (index + 1) * golden gamma"""
    z = (int(base_seed) + (int(index) + 1) * SPLITMIX_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def log_checkpoints(horizon: int, count: int = DEFAULT_CHECKPOINT_COUNT) -> np.ndarray:
    """Log-spaced integer checkpoints including 1 and the horizon"""
    if horizon < 1:
        raise ProblemError(f"Horizon must be >= 1, got {horizon}")
    if count < 2:
        raise ProblemError(f"Need at least 2 checkpoints, got {count}")
    grid = np.rint(np.logspace(0.0, math.log10(horizon), count)).astype(np.int64)
    grid = np.clip(grid, 1, horizon)
    grid[0], grid[-1] = 1, horizon
    return np.unique(grid)


def validate_checkpoints(checkpoints: Iterable[int], horizon: int) -> np.ndarray:
    ck = np.unique(np.asarray(list(checkpoints), dtype=np.int64))
    if ck.size == 0:
        raise ProblemError("At least one checkpoint is required")
    if ck[0] < 1 or ck[-1] > horizon:
        raise ProblemError(f"Checkpoints must lie in [1, {horizon}]")
    return ck


def block_size_for(d: int) -> int:
    """Replicates per block; depends on d only so thread count never changes results"""
    return max(1, min(MAX_BLOCK_REPLICATES, BLOCK_BUDGET // (CHUNK_STEPS * d)))


class PathSimulator:
    """Shared read-only state of one run_paths call"""

    def __init__(self, problem: SpectrumProblem, dist: FeatureDistribution, gamma: float,
                 horizon: int, base_seed: int, checkpoints: np.ndarray,
                 track: Sequence[Series], rotation: Optional[np.ndarray] = None):
        self.problem = problem
        self.dist = dist
        self.gamma = gamma
        self.horizon = horizon
        self.base_seed = base_seed
        self.checkpoints = checkpoints
        self.track = list(track)
        self.rotation = rotation
        self.star = problem.theta_star if rotation is None else rotation @ problem.theta_star

    def _risks(self, dev: np.ndarray) -> np.ndarray:
        if self.rotation is not None:
            # back to the eigenbasis: Q^T dev, row-wise
            dev = dev @ self.rotation
        return 0.5 * np.sum(self.problem.lambdas * dev * dev, axis=1)

    def simulate_block(self, replicates: range) -> Dict[Series, np.ndarray]:
        """Run a block of replicates; returns per-series (block, checkpoints) risks"""
        n_rep = len(replicates)
        rngs = [np.random.default_rng(mix_seed(self.base_seed, r)) for r in replicates]
        # rows hold theta - theta*; noiseless labels are zero in these coordinates
        dev = np.tile(-self.star, (n_rep, 1))
        dev_avg = np.zeros_like(dev)
        running_min = self._risks(dev)
        out = {s: np.empty((n_rep, self.checkpoints.size)) for s in self.track}
        gamma = self.gamma

        ck_pos = 0
        t = 0
        with np.errstate(over='ignore', invalid='ignore'):
            while t < self.horizon:
                steps = min(CHUNK_STEPS, self.horizon - t)
                xs = np.stack([self.dist.sample(rng, steps) for rng in rngs], axis=1)
                if self.rotation is not None:
                    xs = xs @ self.rotation.T

                for k in range(steps):
                    dev = sgd_update(dev, xs[k], 0.0, gamma)
                    t += 1

                    last = self._risks(dev)
                    finite = np.isfinite(last)
                    if not finite.all():
                        bad = replicates[int(np.argmin(finite))]
                        logging.error(f"SGD diverged at step {t} (replicate {bad}, gamma={gamma})")
                        raise DivergenceError(t, replicate=bad)
                    np.minimum(running_min, last, out=running_min)
                    if Series.AVERAGED in out:
                        dev_avg += (dev - dev_avg) / t

                    if t == self.checkpoints[ck_pos]:
                        if Series.LAST in out:
                            out[Series.LAST][:, ck_pos] = last
                        if Series.AVERAGED in out:
                            out[Series.AVERAGED][:, ck_pos] = self._risks(dev_avg)
                        if Series.RUNNING_MIN in out:
                            out[Series.RUNNING_MIN][:, ck_pos] = running_min
                        ck_pos += 1
                        if ck_pos == self.checkpoints.size:
                            return out
        return out


def reference_path(problem: SpectrumProblem, dist: FeatureDistribution, gamma: float,
                   horizon: int, base_seed: int, replicate: int = 0) -> List[SgdState]:
    """Replay one replicate stream with sgd_step; states for t = 0..horizon"""
    rng = np.random.default_rng(mix_seed(base_seed, replicate))
    state = initial_state(problem)
    states = [state]
    t = 0
    while t < horizon:
        steps = min(CHUNK_STEPS, horizon - t)
        for x in dist.sample(rng, steps):
            state = sgd_step(state, x, float(np.dot(problem.theta_star, x)), gamma, problem)
            states.append(state)
        t += steps
    return states


def run_paths(problem: SpectrumProblem, dist: FeatureDistribution, gamma: float,
              horizon: int, replicates: int, base_seed: int,
              checkpoints: Optional[Iterable[int]] = None,
              track: Sequence[Series] = (Series.LAST,),
              rotation: Optional[np.ndarray] = None,
              threads: Optional[int] = None,
              run_id: str = "run") -> List[RiskCurve]:
    """Monte Carlo risk curves averaged over independent replicate streams"""
    if horizon < 1:
        raise ProblemError(f"Horizon must be >= 1, got {horizon}")
    if replicates < 1:
        raise ProblemError(f"Replicates must be >= 1, got {replicates}")
    if gamma < 0 or not math.isfinite(gamma):
        raise ProblemError(f"Step size must be finite and nonnegative, got {gamma}")
    track = [Series(s) for s in track]
    for s in track:
        if s not in MONTE_CARLO_SERIES:
            raise ProblemError(f"Series {s.value} is not produced by the Monte Carlo runner")
    if rotation is not None:
        rotation = np.asarray(rotation, dtype=float)
        if rotation.shape != (problem.d, problem.d):
            raise DimensionMismatchError(problem.d, rotation.shape[0])
        if not np.allclose(rotation @ rotation.T, np.eye(problem.d), atol=1e-10):
            raise ProblemError("Rotation matrix is not orthogonal")

    ck = log_checkpoints(horizon) if checkpoints is None else validate_checkpoints(checkpoints, horizon)
    simulator = PathSimulator(problem, dist, gamma, horizon, base_seed, ck, track, rotation)

    size = block_size_for(problem.d)
    blocks = [range(start, min(start + size, replicates)) for start in range(0, replicates, size)]
    pool = ReplicatePool(threads)
    logging.info(f"Simulating {replicates} replicates x {horizon} steps (d={problem.d}, "
                 f"gamma={gamma:.6g}, {len(blocks)} blocks on {pool.threads} threads)")
    results = pool.map(simulator.simulate_block, blocks)

    provenance = {
        'law': dist.kind.value, 'gamma': gamma, 'base_seed': base_seed,
        'd': problem.d, 'alpha': problem.alpha, 'beta': problem.beta,
        'rotated': rotation is not None,
    }
    curves = []
    for s in track:
        stacked = np.concatenate([block[s] for block in results], axis=0)
        mean = stacked.mean(axis=0)
        if replicates > 1:
            stderr = stacked.std(axis=0, ddof=1) / math.sqrt(replicates)
        else:
            stderr = np.zeros_like(mean)
        curves.append(RiskCurve(ck, mean, s, replicates, stderr, run_id, dict(provenance)))
    return curves
