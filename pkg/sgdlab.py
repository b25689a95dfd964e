#!/usr/bin/env python3

"""
SGD Lab
Command-line laboratory for the last iterate of constant step-size SGD on
noiseless least squares with power-law spectra

Commands: propagate, simulate, bounds, fig1, lemmas, verify
"""

import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import ortho_group

from analysis import dominance_report, linear_regime_transition
from bounds import Theorem, bound_curve, lemma3_grid, lemma4_grid, lemma5_grid, make_bound_spec, step_size_for
from curve_store import read_curves, write_curves, write_records
from errors import ConfigError, SgdLabError, StepSizeError, VerificationError
from propagator import propagate_diagonal
from runner import RiskCurve, Series, log_checkpoints, mix_seed, run_paths
from settings import ExperimentConfig, GammaMode, Settings
from spectrum import (FeatureDistribution, ProblemConstants, SpectrumProblem, build_power_law,
                      compute_constants, eigenvalue_decay_margin, load_problem, make_distribution,
                      save_problem)
from svg_chart import chart_for
from verification import LEVELS, run_verification

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3

COMMANDS = ('propagate', 'simulate', 'bounds', 'fig1', 'lemmas', 'verify')
ROTATION_STREAM = 1 << 32

FIG1_PANELS = {
    'left': {
        'problem': {'d': 300, 'alpha': 0.5, 'beta': 0.0},
        'distribution': {'kind': 'gaussian'},
        'gamma': {'mode': 'half_inv_trace'},
        'horizon': 10 ** 6,
        'replicates': 10,
        'series': ['last', 'averaged', 'exact'],
    },
    'right': {
        'problem': {'d': 300, 'alpha': 0.75, 'beta': 1.0},
        'distribution': {'kind': 'gaussian'},
        'gamma': {'mode': 'half_inv_trace'},
        'horizon': 10 ** 6,
        'replicates': 10,
        'series': ['last', 'averaged', 'exact'],
    },
}

DOMINANCE_COLUMNS = ['run_id', 'theorem', 'gamma', 'certified', 'min_margin', 'violating_t']
LEMMA_COLUMNS = ['lemma', 'x', 'n', 't', 'r', 'alpha', 'beta', 'T', 'value', 'margin']
VERIFY_COLUMNS = ['check', 'passed', 'detail', 'seconds']


def setup_logging(out_dir: Path, verbose: bool = False) -> Path:
    """Log to the console and to <out>/logs/sgdlab_<timestamp>.log"""
    log_dir = out_dir / 'logs'
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / f'sgdlab_{datetime.now().strftime("%Y%m%d_%H%M%S")}.log'

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stderr)
        ],
        force=True
    )
    return log_file


def build_problem(exp: ExperimentConfig,
                  problem_path: Optional[Path] = None) -> Tuple[SpectrumProblem, FeatureDistribution]:
    """Power-law problem from the config, or a saved problem document"""
    if problem_path is not None:
        problem = load_problem(problem_path)
        logging.info(f"Loaded problem d={problem.d} alpha={problem.alpha} beta={problem.beta} from {problem_path}")
    else:
        p = exp.problem
        problem = build_power_law(p.d, p.alpha, p.beta, p.optimum_mode, p.eps)
    dist = make_distribution(problem, exp.distribution.kind, exp.distribution.prob_exponent)
    return problem, dist


def resolve_gamma(exp: ExperimentConfig, problem: SpectrumProblem, dist: FeatureDistribution,
                  constants: Optional[ProblemConstants] = None) -> float:
    """Step size from the configured mode"""
    mode = exp.gamma.mode
    if mode is GammaMode.EXPLICIT:
        gamma = exp.gamma.value
    elif mode is GammaMode.HALF_INV_TRACE:
        gamma = 1.0 / (2.0 * problem.trace)
    else:
        constants = constants or compute_constants(problem, dist)
        gamma = step_size_for(Theorem(mode.value), constants, T=exp.horizon)

    cap = 1.0 / (4.0 * problem.lambda_max)
    if gamma > cap:
        logging.warning(f"Step size {gamma:.6g} ({mode.value}) exceeds 1/(4 lambda_max) = {cap:.6g}")
    else:
        logging.info(f"Step size {gamma:.6g} ({mode.value})")
    return gamma


def random_rotation(d: int, base_seed: int) -> np.ndarray:
    """Haar-random eigenvector basis, seeded apart from the replicate streams"""
    if d == 1:
        return np.ones((1, 1))
    rng = np.random.default_rng(mix_seed(base_seed, ROTATION_STREAM))
    return ortho_group.rvs(dim=d, random_state=rng)


def _output(out_dir: Path, configured: Optional[str], default_name: str) -> Path:
    return out_dir / (configured or default_name)


def _run_id(exp: ExperimentConfig, command: str) -> str:
    return exp.run_id or command


def _problem_for(exp: ExperimentConfig, out_dir: Path, command: str,
                 args: argparse.Namespace) -> Tuple[SpectrumProblem, FeatureDistribution]:
    problem, dist = build_problem(exp, getattr(args, 'problem', None))
    save_problem(problem, out_dir / f"{command}_problem.json")
    return problem, dist


def _write_outputs(curves: List[RiskCurve], exp: ExperimentConfig, out_dir: Path, command: str,
                   title: str, tau: Optional[float] = None, reference: Optional[Dict] = None) -> Path:
    csv_path = write_curves(curves, _output(out_dir, exp.outputs.csv_path, f"{command}.csv"))
    svg_name = exp.outputs.svg_path
    if svg_name is not None or command == 'fig1':
        chart = chart_for(read_curves(csv_path), title, tau, reference)
        chart.save(_output(out_dir, svg_name, f"{command}.svg"))
    return csv_path


def cmd_propagate(settings: Settings, out_dir: Path, args: argparse.Namespace) -> Path:
    """Exact expected risk curve"""
    exp = settings.experiment
    problem, dist = _problem_for(exp, out_dir, 'propagate', args)
    gamma = resolve_gamma(exp, problem, dist)
    ck = log_checkpoints(exp.horizon, exp.checkpoints.count)
    curve = propagate_diagonal(problem, dist, gamma, exp.horizon, ck,
                               allow_large_gamma=True, run_id=_run_id(exp, 'propagate'))
    return _write_outputs([curve], exp, out_dir, 'propagate',
                          f"exact risk (d={problem.d}, alpha={problem.alpha}, beta={problem.beta})")


def cmd_simulate(settings: Settings, out_dir: Path, args: argparse.Namespace) -> Path:
    """Monte Carlo risk curves for the requested series"""
    exp = settings.experiment
    track = exp.monte_carlo_series
    if not track:
        raise ConfigError("simulate needs at least one of last, averaged, running_min in series")
    problem, dist = _problem_for(exp, out_dir, 'simulate', args)
    gamma = resolve_gamma(exp, problem, dist)
    ck = log_checkpoints(exp.horizon, exp.checkpoints.count)
    rotation = random_rotation(problem.d, exp.base_seed) if getattr(args, 'rotate', False) else None
    run_id = _run_id(exp, 'simulate')

    curves = run_paths(problem, dist, gamma, exp.horizon, exp.replicates, exp.base_seed, ck,
                       track, rotation, getattr(args, 'threads', None), run_id)
    if Series.EXACT in exp.series:
        curves.append(propagate_diagonal(problem, dist, gamma, exp.horizon, ck,
                                         allow_large_gamma=True, run_id=run_id))
    return _write_outputs(curves, exp, out_dir, 'simulate',
                          f"SGD risk (d={problem.d}, {exp.replicates} replicates)")


def _requested_theorems(exp: ExperimentConfig, alpha: float) -> List[Theorem]:
    requested = [Theorem(s.value.replace('bound_', '')) for s in exp.series if s.value.startswith('bound_')]
    if requested:
        return requested
    theorems = [Theorem.THM1, Theorem.THM2]
    if alpha > 0:
        theorems.append(Theorem.THM3)
    return theorems


def cmd_bounds(settings: Settings, out_dir: Path, args: argparse.Namespace) -> Path:
    """Theorem bounds against the exact risk, with a dominance report per theorem"""
    exp = settings.experiment
    problem, dist = _problem_for(exp, out_dir, 'bounds', args)
    constants = compute_constants(problem, dist)
    logging.info(f"Constants: R={constants.R:.6g} R_ln={constants.R_ln:.6g} R_alpha={constants.R_alpha:.6g} "
                 f"C_ln={constants.C_ln:.6g} C_beta={constants.C_beta:.6g} lambda_o={constants.lambda_o:.6g}")
    decay = eigenvalue_decay_margin(problem)
    if decay < 0:
        logging.warning(f"Spectrum breaks the capacity decay i * lambda_i^(1-alpha) <= tr H^(1-alpha) "
                        f"(margin {decay:.3g}); thm3 constants do not apply")
    force = getattr(args, 'force_gamma', False)
    user_gamma = exp.gamma.value if exp.gamma.mode is GammaMode.EXPLICIT else None
    base_id = _run_id(exp, 'bounds')

    curves = []
    reports = []
    for theorem in _requested_theorems(exp, problem.alpha):
        if theorem is Theorem.THM3 and constants.alpha <= 0:
            logging.warning("thm3 needs alpha > 0; skipped")
            continue
        spec = make_bound_spec(theorem, constants, exp.horizon, user_gamma, force)
        run_id = f"{base_id}-{theorem.value}"
        ck = log_checkpoints(exp.horizon, exp.checkpoints.count)
        bound = bound_curve(spec, ck, exp.horizon, run_id)
        exact = propagate_diagonal(problem, dist, spec.gamma, exp.horizon, bound.checkpoints,
                                   allow_large_gamma=True, run_id=run_id)
        report = dominance_report(exact, bound, spec.certified, theorem.value, spec.gamma)
        curves += [exact, bound]
        reports.append({'run_id': run_id, 'theorem': report.theorem, 'gamma': report.gamma,
                        'certified': report.certified, 'min_margin': report.min_margin,
                        'violating_t': report.violating_t})

    if not reports:
        raise StepSizeError("No theorem applies to this configuration")
    csv_path = _write_outputs(curves, exp, out_dir, 'bounds', f"bounds vs exact risk (d={problem.d})")
    write_records(reports, DOMINANCE_COLUMNS, out_dir / 'dominance.csv')
    return csv_path


def cmd_fig1(settings: Settings, out_dir: Path, args: argparse.Namespace) -> Path:
    """Last vs averaged iterate on one panel of the synthetic experiment"""
    exp = settings.experiment
    panel = getattr(args, 'panel', 'left')
    problem, dist = _problem_for(exp, out_dir, 'fig1', args)
    gamma = resolve_gamma(exp, problem, dist)
    ck = log_checkpoints(exp.horizon, exp.checkpoints.count)
    run_id = exp.run_id or f"fig1_{panel}"
    rotation = random_rotation(problem.d, exp.base_seed) if getattr(args, 'rotate', False) else None

    curves = run_paths(problem, dist, gamma, exp.horizon, exp.replicates, exp.base_seed, ck,
                       exp.monte_carlo_series, rotation, getattr(args, 'threads', None), run_id)
    exact = propagate_diagonal(problem, dist, gamma, exp.horizon, ck, allow_large_gamma=True, run_id=run_id)
    if Series.EXACT in exp.series:
        curves.append(exact)

    tau, detected = linear_regime_transition(exact, gamma, problem.lambda_min)
    logging.info(f"Linear regime scale tau = {tau:.4g}, detected at {detected}")
    marker = tau if tau <= exp.horizon else None

    # reference c / t^(1 + alpha ^ beta) anchored on the exact curve at t ~ 10^3
    rate = 1.0 + min(problem.alpha, problem.beta)
    anchor = int(np.searchsorted(ck, min(1000, exp.horizon)))
    anchor = min(anchor, ck.size - 1)
    scale = exact.values[anchor] * float(ck[anchor]) ** rate
    reference = {'t': ck, 'value': scale / ck.astype(float) ** rate, 'label': f"1/T^{rate:g}"}

    return _write_outputs(curves, exp, out_dir, 'fig1',
                          f"alpha={problem.alpha}, beta={problem.beta}, d={problem.d}",
                          marker, reference)


def cmd_lemmas(settings: Settings, out_dir: Path, args: argparse.Namespace) -> Path:
    """Margins of the technical inequalities over their grids"""
    records = lemma3_grid() + lemma4_grid(settings.experiment.base_seed) + lemma5_grid()
    path = write_records(records, LEMMA_COLUMNS, out_dir / 'lemmas.csv')
    negative = [r for r in records if r['margin'] < 0]
    for r in negative[:10]:
        logging.error(f"Negative margin {r['margin']:.3g} in {r['lemma']}: {r}")
    logging.info(f"{len(records)} lemma margins checked, {len(negative)} negative")
    if negative:
        raise VerificationError(f"{len(negative)} negative lemma margins, see {path}")
    return path


def run_command(command: str, config_path: Optional[Path], out_dir: Path,
                threads: Optional[int] = None, overrides: Optional[dict] = None,
                args: Optional[argparse.Namespace] = None) -> Path:
    """Run one experiment command; returns the main CSV path"""
    if args is None:
        args = argparse.Namespace(threads=threads, rotate=False, force_gamma=False, panel='left', problem=None)
    presets = FIG1_PANELS[args.panel] if command == 'fig1' else None
    settings = Settings(config_path, overrides, presets)
    logging.info(f"{command}: {settings.summary()}")
    out_dir.mkdir(parents=True, exist_ok=True)
    settings.save(out_dir / f"{command}_config.json")
    handlers = {
        'propagate': cmd_propagate,
        'simulate': cmd_simulate,
        'bounds': cmd_bounds,
        'fig1': cmd_fig1,
    }
    return handlers[command](settings, out_dir, args)


def cmd_verify(out_dir: Path, args: argparse.Namespace) -> Path:
    level = args.level
    logging.info(f"Running {level} verification")
    results = run_verification(level, args.seed or 0, args.threads, run_command)
    path = write_records([r.as_record() for r in results], VERIFY_COLUMNS, out_dir / 'verify.csv')
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerificationError(f"Verification failed: {', '.join(failed)}")
    logging.info(f"All {len(results)} checks passed")
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='sgdlab',
        description='Last-iterate SGD convergence laboratory')
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', type=Path, default=None, help='JSON experiment configuration')
    parser.add_argument('--problem', type=Path, default=None,
                        help='saved problem document (<command>_problem.json) used instead of the power-law config')
    parser.add_argument('--out', type=Path, default=Path('out'), help='output directory')
    parser.add_argument('--seed', type=int, default=None, help='base seed (unsigned 64-bit)')
    parser.add_argument('--threads', type=int, default=None,
                        help='worker threads (overrides SGDLAB_THREADS)')
    parser.add_argument('--force-gamma', action='store_true',
                        help='accept step sizes that violate a theorem condition (non-certified)')
    parser.add_argument('--rotate', action='store_true', help='simulate in a random eigenvector basis')
    parser.add_argument('--panel', choices=sorted(FIG1_PANELS), default='left')
    parser.add_argument('--level', choices=LEVELS, default='quick')
    parser.add_argument('--optimum-mode', choices=['fig1', 'tight'], default=None,
                        help='optimum coordinates: fig1 exponent as printed, or the tight variant')
    parser.add_argument('--verbose', action='store_true')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out
    try:
        setup_logging(out_dir, args.verbose)
    except OSError as e:
        print(f"Cannot create output directory {out_dir}: {e}", file=sys.stderr)
        return EXIT_CONFIG

    overrides = {}
    if args.seed is not None:
        overrides['base_seed'] = args.seed
    if args.optimum_mode is not None:
        overrides['problem'] = {'optimum_mode': args.optimum_mode}

    try:
        if args.command == 'verify':
            cmd_verify(out_dir, args)
        elif args.command == 'lemmas':
            cmd_lemmas(Settings(args.config, overrides), out_dir, args)
        else:
            run_command(args.command, args.config, out_dir, args.threads, overrides, args)
        return EXIT_OK
    except SgdLabError as e:
        logging.error(str(e))
        return e.exit_code
    except Exception as e:
        logging.exception(f"Unexpected error: {e}")
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
