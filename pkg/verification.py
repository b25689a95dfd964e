"""
Self-verification suite for SGD Lab
Runs the acceptance checks (oracle agreement, Monte Carlo consistency, rates,
bound dominance, inequality suites, linear regime, determinism) at a quick or
a full size level
"""

import json
import logging
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from analysis import dominance_report, fit_loglog_slope, linear_regime_transition, local_slopes
from bounds import (Theorem, bound_curve, lemma2_margins, lemma3_grid, lemma4_grid, lemma5_grid,
                    make_bound_spec, s_t_exact, xi_alpha)
from errors import ProblemError, SgdLabError
from propagator import (closed_form_check, printed_form_discrepancy, propagate_diagonal,
                        propagate_full_oracle, propagate_states)
from runner import Series, log_checkpoints, reference_path, risk, run_paths
from spectrum import (DistributionKind, OptimumMode, SpectrumProblem, build_power_law,
                      compute_constants, eigenvalue_decay_margin, make_distribution)

LEVELS = ('quick', 'full')
LAWS = (DistributionKind.GAUSSIAN, DistributionKind.CANONICAL)

# sizes per level
SIZES = {
    'quick': {
        'oracle_problems': 5, 'oracle_T': 50,
        'mc_T': 200, 'mc_replicates': 400,
        'closed_form_T': 200,
        'rate_left': (2000, 10 ** 5, (1e3, 1e5)),
        'rate_right': (300, 10 ** 5, (1e3, 1e5)),
        'dominance_d': 50, 'dominance_T': 10 ** 3,
        'lemma2_d': 20, 'lemma2_T': 200,
        'regime_T': 10 ** 5, 'regime_mc_T': 2 * 10 ** 4, 'regime_mc_replicates': 5,
        'determinism_T': 500, 'determinism_replicates': 4,
    },
    'full': {
        'oracle_problems': 20, 'oracle_T': 200,
        'mc_T': 10 ** 3, 'mc_replicates': 2000,
        'closed_form_T': 10 ** 3,
        'rate_left': (2000, 10 ** 5, (1e3, 1e5)),
        'rate_right': (300, 10 ** 6, (1e3, 1e6)),
        'dominance_d': 200, 'dominance_T': 10 ** 4,
        'lemma2_d': 50, 'lemma2_T': 10 ** 3,
        'regime_T': 10 ** 6, 'regime_mc_T': 10 ** 5, 'regime_mc_replicates': 20,
        'determinism_T': 2000, 'determinism_replicates': 8,
    },
}

DOMINANCE_ALPHAS = (0.25, 0.5, 0.75)
DOMINANCE_BETAS = (0.0, 0.5, 1.0)
# the averaged slope settles near -2 late in the run, about 1 below its early reference,
# which the last-iterate detector (drop 1.0) would flag; the averaged curve never turns linear
AVERAGED_SLACK = 1.5
UNDERFLOW_FLOOR = 1e-300
REFERENCE_STEPS = 200
MONTE_CARLO_TRACK = (Series.LAST, Series.AVERAGED, Series.RUNNING_MIN)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def as_record(self) -> Dict:
        return {'check': self.name, 'passed': self.passed, 'detail': self.detail,
                'seconds': round(self.seconds, 3)}


def half_inv_trace(problem: SpectrumProblem) -> float:
    return 1.0 / (2.0 * problem.trace)


def _max_relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    scale = np.maximum(np.abs(b), UNDERFLOW_FLOOR)
    return float(np.max(np.abs(a - b) / scale))


def check_oracle_equivalence(sizes: Dict, seed: int = 0, threads: Optional[int] = None) -> CheckResult:
    """Diagonal recursion against the full-matrix covariance oracle and the unrolled sum"""
    rng = np.random.default_rng(seed)
    worst = 0.0
    unrolled = 0.0
    printed = 0.0
    for kind in LAWS:
        for index in range(sizes['oracle_problems']):
            d = int(rng.integers(1, 7))
            T = int(rng.integers(1, sizes['oracle_T'] + 1))
            lambdas = np.sort(rng.uniform(0.05, 1.0, d))[::-1]
            problem = SpectrumProblem(lambdas, rng.standard_normal(d), 0.5, 0.0)
            dist = make_distribution(problem, kind)
            gamma = 1.0 / (4.0 * problem.lambda_max)
            full = propagate_full_oracle(problem, dist, gamma, T)
            for state in propagate_states(problem, dist, gamma, T):
                gap = _max_relative_gap(np.diagonal(full[state.t]), state.m.astype(float))
                worst = max(worst, gap)
            if index == 0:
                unrolled = max(unrolled, closed_form_check(problem, dist, gamma, T))
                printed = max(printed, printed_form_discrepancy(problem, dist, gamma, T))
    return CheckResult('oracle_equivalence', worst <= 1e-10 and unrolled <= 1e-10,
                       f"max relative gap {worst:.3g}; unrolled sum gap {unrolled:.3g} "
                       f"(extra-lambda variant {printed:.3g})")


def _reference_gap(problem, dist, gamma: float, seed: int, threads: Optional[int]) -> float:
    """Vectorised runner against a step-by-step replay of replicate 0"""
    T = REFERENCE_STEPS
    ck = log_checkpoints(T, 8)
    curves = run_paths(problem, dist, gamma, T, 1, seed, ck, MONTE_CARLO_TRACK, threads=threads)
    states = reference_path(problem, dist, gamma, T, seed)
    replay = {
        Series.LAST: lambda s: risk(problem, s.theta),
        Series.AVERAGED: lambda s: risk(problem, s.theta_avg),
        Series.RUNNING_MIN: lambda s: s.min_risk_so_far,
    }
    gap = 0.0
    for curve in curves:
        for t in ck:
            expected = replay[curve.series](states[t])
            gap = max(gap, abs(curve.value_at(int(t)) - expected) / max(expected, UNDERFLOW_FLOOR))
    return gap


def check_monte_carlo_consistency(sizes: Dict, seed: int = 0, threads: Optional[int] = None) -> CheckResult:
    """Mean simulated last-iterate risk within 4 standard errors of the exact risk"""
    problem = build_power_law(10, 0.5, 0.0)
    gamma = half_inv_trace(problem)
    T = sizes['mc_T']
    details = []
    passed = True
    for kind in LAWS:
        dist = make_distribution(problem, kind)
        ck = log_checkpoints(T)
        exact = propagate_diagonal(problem, dist, gamma, T, ck, allow_large_gamma=True)
        (last,) = run_paths(problem, dist, gamma, T, sizes['mc_replicates'], seed, ck, threads=threads)
        diff = np.abs(last.values - exact.values)
        within_se = diff <= 4.0 * last.stderrs + 1e-12 * exact.values
        precise = last.stderrs <= 0.01 * last.values
        within_rel = diff[precise] <= 0.05 * exact.values[precise]
        replay_gap = _reference_gap(problem, dist, gamma, seed, threads)
        ok = bool(np.all(within_se) and np.all(within_rel)) and replay_gap <= 1e-8
        passed &= ok
        z = float(np.max(diff / np.maximum(last.stderrs, 1e-300)))
        details.append(f"{kind.value}: max |z| {z:.2f}, replay gap {replay_gap:.2g}")
    return CheckResult('monte_carlo_consistency', passed, '; '.join(details))


def check_closed_form_d1(sizes: Dict, seed: int = 0, threads: Optional[int] = None) -> CheckResult:
    """Canonical law in one dimension decays as (1 - gamma)^(2t) / 2"""
    problem = SpectrumProblem([1.0], [1.0], 0.5, 0.0)
    dist = make_distribution(problem, DistributionKind.CANONICAL)
    gamma = 0.5
    T = sizes['closed_form_T']
    ck = np.arange(1, T + 1)
    # float64 underflows below the floor from t ~ 500 on; both sides are compared absolutely there
    expected = 0.5 * (1.0 - gamma) ** (2.0 * ck)
    exact = propagate_diagonal(problem, dist, gamma, T, ck, allow_large_gamma=True)
    (last,) = run_paths(problem, dist, gamma, T, 1, seed, ck, threads=threads)
    ok = (np.allclose(exact.values, expected, rtol=1e-12, atol=UNDERFLOW_FLOOR)
          and np.allclose(last.values, expected, rtol=1e-12, atol=UNDERFLOW_FLOOR))
    return CheckResult('closed_form_d1', ok,
                       f"propagated gap {_max_relative_gap(exact.values, expected):.3g}, "
                       f"simulated gap {_max_relative_gap(last.values, expected):.3g}")


def _rate_check(name: str, alpha: float, beta: float, size, lo: float, hi: float) -> CheckResult:
    d, T, window = size
    problem = build_power_law(d, alpha, beta, OptimumMode.TIGHT)
    dist = make_distribution(problem, DistributionKind.GAUSSIAN)
    curve = propagate_diagonal(problem, dist, half_inv_trace(problem), T, allow_large_gamma=True)
    fit = fit_loglog_slope(curve, *window)
    return CheckResult(name, lo <= fit.slope <= hi,
                       f"slope {fit.slope:.4f} over [{window[0]:g}, {window[1]:g}] (d={d}, T={T})")


def check_rate_left(sizes: Dict, seed: int = 0, threads: Optional[int] = None) -> CheckResult:
    return _rate_check('rate_alpha0.5_beta0', 0.5, 0.0, sizes['rate_left'], -1.1, -0.9)


def check_rate_right(sizes: Dict, seed: int = 0, threads: Optional[int] = None) -> CheckResult:
    return _rate_check('rate_alpha0.75_beta1', 0.75, 1.0, sizes['rate_right'], -1.95, -1.55)


def _dominance_margin(problem, dist, constants, theorem: Theorem, T: int) -> float:
    spec = make_bound_spec(theorem, constants, T)
    ck = log_checkpoints(T)
    ck = ck[ck >= theorem.min_horizon]
    bound = bound_curve(spec, ck, T)
    exact = propagate_diagonal(problem, dist, spec.gamma, T, ck, allow_large_gamma=True)
    return dominance_report(exact, bound, spec.certified).min_margin


def check_bound_dominance(sizes: Dict, seed: int = 0, threads: Optional[int] = None) -> CheckResult:
    """Exact risk stays under each theorem's bound with its prescribed step size"""
    d, T = sizes['dominance_d'], sizes['dominance_T']
    worst = math.inf
    failures = []
    decay = math.inf
    for alpha in DOMINANCE_ALPHAS:
        for beta in DOMINANCE_BETAS:
            problem = build_power_law(d, alpha, beta, OptimumMode.TIGHT)
            decay = min(decay, eigenvalue_decay_margin(problem))
            dist = make_distribution(problem, DistributionKind.CANONICAL)
            constants = compute_constants(problem, dist)
            theorems = [Theorem.THM3]
            if beta == 0.0:
                theorems += [Theorem.THM1, Theorem.THM2]
            for theorem in theorems:
                margin = _dominance_margin(problem, dist, constants, theorem, T)
                worst = min(worst, margin)
                if margin < 0:
                    failures.append(f"{theorem.value}(alpha={alpha}, beta={beta})")
    if decay < 0:
        failures.append("eigenvalue decay")
    detail = (f"min margin {worst:.3g}, min decay margin {decay:.3g}"
              + (f"; violated: {', '.join(failures)}" if failures else ""))
    return CheckResult('bound_dominance', not failures, detail)


def check_lemma2(sizes: Dict, seed: int = 0, threads: Optional[int] = None) -> CheckResult:
    """Function-value recursion holds along the exact trajectory"""
    problem = build_power_law(sizes['lemma2_d'], 0.5, 0.0)
    worst = math.inf
    for kind in LAWS:
        dist = make_distribution(problem, kind)
        constants = compute_constants(problem, dist)
        for gamma in (1.0 / (4.0 * problem.lambda_max), 1.0 / (8.0 * problem.lambda_max)):
            margins = lemma2_margins(problem, dist, constants, gamma, sizes['lemma2_T'])
            worst = min(worst, float(np.min(margins)))
    return CheckResult('lemma2_recursion', worst >= -1e-12, f"min margin {worst:.3g}")


def check_lemma_suites(sizes: Dict, seed: int = 0, threads: Optional[int] = None) -> CheckResult:
    """Technical inequalities over their grids plus the zeta closed forms"""
    records = lemma3_grid() + lemma4_grid(seed) + lemma5_grid()
    negative = [r for r in records if r['margin'] < 0]
    asymmetry = 0.0
    for r in records:
        if r['lemma'] == 'lemma5':
            swapped = s_t_exact(r['beta'], r['alpha'], r['T'])
            asymmetry = max(asymmetry, abs(swapped - r['value']) / r['value'])
    xi_gap = max(abs(xi_alpha(1.0) - math.pi ** 2 / 6) / (math.pi ** 2 / 6),
                 abs(xi_alpha(3.0) - math.pi ** 4 / 90) / (math.pi ** 4 / 90))
    ok = not negative and asymmetry <= 1e-12 and xi_gap <= 1e-10
    detail = (f"{len(records)} margins, {len(negative)} negative; "
              f"S_T asymmetry {asymmetry:.3g}; xi gap {xi_gap:.3g}")
    return CheckResult('lemma_suites', ok, detail)


def check_linear_regime(sizes: Dict, seed: int = 0, threads: Optional[int] = None) -> CheckResult:
    """Last iterate turns linear near 1/(gamma lambda_min); the averaged iterate does not"""
    problem = build_power_law(30, 0.5, 0.0)
    dist = make_distribution(problem, DistributionKind.GAUSSIAN)
    gamma = half_inv_trace(problem)
    exact = propagate_diagonal(problem, dist, gamma, sizes['regime_T'], allow_large_gamma=True)
    tau, detected = linear_regime_transition(exact, gamma, problem.lambda_min)
    last_ok = detected is not None and tau / 10.0 <= detected <= 10.0 * tau

    T_mc = sizes['regime_mc_T']
    curves = run_paths(problem, dist, gamma, T_mc, sizes['regime_mc_replicates'], seed,
                       track=(Series.AVERAGED,), threads=threads)
    averaged = curves[0]
    reference = fit_loglog_slope(averaged, 10, 1000, skip_nonpositive=True)
    window_slopes = [w.slope for w in local_slopes(averaged)]
    steepest = min(window_slopes) if window_slopes else reference.slope
    averaged_ok = steepest >= reference.slope - AVERAGED_SLACK

    detected_text = f"{detected:.4g}" if detected is not None else "none"
    detail = (f"tau predicted {tau:.4g}, detected {detected_text}; averaged reference slope "
              f"{reference.slope:.3f}, steepest window {steepest:.3f}")
    return CheckResult('linear_regime', last_ok and averaged_ok, detail)


def check_determinism(sizes: Dict, seed: int = 0, threads: Optional[int] = None,
                      run_command: Optional[Callable] = None) -> CheckResult:
    """Identical configs give byte-identical CSV files, whatever the thread count"""
    if run_command is None:
        return CheckResult('determinism', False, "no command runner supplied")
    config = {
        'problem': {'d': 20, 'alpha': 0.5, 'beta': 0.0},
        'horizon': sizes['determinism_T'],
        'replicates': sizes['determinism_replicates'],
        'base_seed': seed,
        'series': ['last', 'averaged', 'running_min'],
    }
    mismatched = []
    with tempfile.TemporaryDirectory(prefix='sgdlab_verify_') as tmp:
        tmp = Path(tmp)
        config_path = tmp / 'determinism.json'
        config_path.write_text(json.dumps(config), encoding='utf-8')
        for command in ('propagate', 'simulate'):
            outputs = []
            for run, run_threads in enumerate((1, 2)):
                out_dir = tmp / f"{command}_{run}"
                csv_path = run_command(command, config_path, out_dir, run_threads)
                outputs.append(Path(csv_path).read_bytes())
            if outputs[0] != outputs[1]:
                mismatched.append(command)
    detail = "byte-identical" if not mismatched else f"differs: {', '.join(mismatched)}"
    return CheckResult('determinism', not mismatched, detail)


CHECKS = [
    check_oracle_equivalence,
    check_monte_carlo_consistency,
    check_closed_form_d1,
    check_rate_left,
    check_rate_right,
    check_bound_dominance,
    check_lemma2,
    check_lemma_suites,
    check_linear_regime,
    check_determinism,
]


def run_verification(level: str = 'quick', seed: int = 0, threads: Optional[int] = None,
                     run_command: Optional[Callable] = None) -> List[CheckResult]:
    """Run every check; a check that raises counts as failed"""
    if level not in LEVELS:
        raise ProblemError(f"Unknown verification level {level!r}; use one of {', '.join(LEVELS)}")
    sizes = SIZES[level]
    results = []
    for check in CHECKS:
        started = time.perf_counter()
        try:
            if check is check_determinism:
                result = check(sizes, seed, threads, run_command=run_command)
            else:
                result = check(sizes, seed, threads)
        except SgdLabError as e:
            result = CheckResult(check.__name__.replace('check_', ''), False, str(e))
        result.seconds = time.perf_counter() - started
        log = logging.info if result.passed else logging.error
        log(f"[{'PASS' if result.passed else 'FAIL'}] {result.name}: {result.detail} ({result.seconds:.1f}s)")
        results.append(result)
    return results
