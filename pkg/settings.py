"""
Settings management for SGD Lab
Experiment configuration: JSON documents deep-merged onto defaults, then
validated into frozen dataclasses
"""

import copy
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from errors import ConfigError
from runner import MONTE_CARLO_SERIES, Series
from spectrum import DistributionKind, OptimumMode

MAX_SEED = (1 << 64) - 1

DEFAULT_CONFIG: Dict[str, Any] = {
    'run_id': None,
    'problem': {
        'd': 300,
        'alpha': 0.5,
        'beta': 0.0,
        'optimum_mode': 'tight',
        'eps': 0.01,
    },
    'distribution': {
        'kind': 'gaussian',
        'prob_exponent': None,
    },
    'gamma': {
        'mode': 'half_inv_trace',
        'value': None,
    },
    'horizon': 100000,
    'replicates': 10,
    'base_seed': 0,
    'checkpoints': {
        'count': 64,
        'scale': 'log',
    },
    'series': ['last', 'averaged'],
    'outputs': {
        'csv_path': None,
        'svg_path': None,
    },
}


class GammaMode(Enum):
    EXPLICIT = "explicit"
    THM1 = "thm1"
    THM2 = "thm2"
    THM3 = "thm3"
    HALF_INV_TRACE = "half_inv_trace"


@dataclass(frozen=True)
class ProblemConfig:
    d: int
    alpha: float
    beta: float
    optimum_mode: OptimumMode
    eps: float


@dataclass(frozen=True)
class DistributionConfig:
    kind: DistributionKind
    prob_exponent: Optional[float] = None


@dataclass(frozen=True)
class GammaConfig:
    mode: GammaMode
    value: Optional[float] = None


@dataclass(frozen=True)
class CheckpointConfig:
    count: int
    scale: str = 'log'


@dataclass(frozen=True)
class OutputConfig:
    csv_path: Optional[str] = None
    svg_path: Optional[str] = None


@dataclass(frozen=True)
class ExperimentConfig:
    run_id: Optional[str]
    problem: ProblemConfig
    distribution: DistributionConfig
    gamma: GammaConfig
    horizon: int
    replicates: int
    base_seed: int
    checkpoints: CheckpointConfig
    series: Tuple[Series, ...]
    outputs: OutputConfig

    @property
    def monte_carlo_series(self) -> Tuple[Series, ...]:
        return tuple(s for s in self.series if s in MONTE_CARLO_SERIES)


def _deep_update(d1: dict, d2: dict, path: str = ''):
    """Deep update d1 with d2; keys unknown to d1 are rejected"""
    for k, v in d2.items():
        where = f"{path}.{k}" if path else k
        if k not in d1:
            raise ConfigError(f"Unknown configuration key: {where}")
        if isinstance(d1[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{where} must be an object")
            _deep_update(d1[k], v, where)
        else:
            d1[k] = v


def _integer(value: Any, where: str, minimum: int, maximum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        # allow 1e5-style floats that are whole numbers
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ConfigError(f"{where} must be an integer, got {value!r}")
    if value < minimum or (maximum is not None and value > maximum):
        raise ConfigError(f"{where} = {value} is out of range")
    return value


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    return float(value)


def _enum(enum_cls, value: Any, where: str):
    try:
        return enum_cls(value)
    except ValueError:
        choices = ', '.join(e.value for e in enum_cls)
        raise ConfigError(f"{where} must be one of {choices}, got {value!r}")


def build_experiment(config: dict) -> ExperimentConfig:
    """Validate a merged configuration dict"""
    problem = config['problem']
    alpha = _number(problem['alpha'], 'problem.alpha')
    beta = _number(problem['beta'], 'problem.beta')
    eps = _number(problem['eps'], 'problem.eps')
    if not 0.0 <= alpha < 1.0:
        raise ConfigError(f"problem.alpha must lie in [0, 1), got {alpha}")
    if beta <= -1.0:
        raise ConfigError(f"problem.beta must be > -1, got {beta}")
    if eps <= 0:
        raise ConfigError(f"problem.eps must be positive, got {eps}")
    problem_cfg = ProblemConfig(
        d=_integer(problem['d'], 'problem.d', 1),
        alpha=alpha,
        beta=beta,
        optimum_mode=_enum(OptimumMode, problem['optimum_mode'], 'problem.optimum_mode'),
        eps=eps,
    )

    dist = config['distribution']
    prob_exponent = dist['prob_exponent']
    if prob_exponent is not None:
        prob_exponent = _number(prob_exponent, 'distribution.prob_exponent')
    dist_cfg = DistributionConfig(_enum(DistributionKind, dist['kind'], 'distribution.kind'), prob_exponent)

    gamma = config['gamma']
    mode = _enum(GammaMode, gamma['mode'], 'gamma.mode')
    value = gamma['value']
    if mode is GammaMode.EXPLICIT:
        if value is None:
            raise ConfigError("gamma.value is required when gamma.mode is explicit")
        value = _number(value, 'gamma.value')
        if value < 0:
            raise ConfigError(f"gamma.value must be nonnegative, got {value}")
    elif value is not None:
        logging.warning(f"gamma.value is ignored when gamma.mode is {mode.value}")
        value = None
    gamma_cfg = GammaConfig(mode, value)

    checkpoints = config['checkpoints']
    if checkpoints['scale'] != 'log':
        raise ConfigError(f"checkpoints.scale must be 'log', got {checkpoints['scale']!r}")
    checkpoint_cfg = CheckpointConfig(_integer(checkpoints['count'], 'checkpoints.count', 2), 'log')

    series = config['series']
    if not isinstance(series, list) or not series:
        raise ConfigError("series must be a non-empty list")
    series_cfg = tuple(dict.fromkeys(_enum(Series, s, 'series') for s in series))

    outputs = config['outputs']
    for key in ('csv_path', 'svg_path'):
        if outputs[key] is not None and not isinstance(outputs[key], str):
            raise ConfigError(f"outputs.{key} must be a string path")

    run_id = config['run_id']
    if run_id is not None and (not isinstance(run_id, str) or not run_id or ',' in run_id):
        raise ConfigError(f"run_id must be a non-empty string without commas, got {run_id!r}")

    return ExperimentConfig(
        run_id=run_id,
        problem=problem_cfg,
        distribution=dist_cfg,
        gamma=gamma_cfg,
        horizon=_integer(config['horizon'], 'horizon', 1),
        replicates=_integer(config['replicates'], 'replicates', 1),
        base_seed=_integer(config['base_seed'], 'base_seed', 0, MAX_SEED),
        checkpoints=checkpoint_cfg,
        series=series_cfg,
        outputs=OutputConfig(outputs['csv_path'], outputs['svg_path']),
    )


class Settings:
    def __init__(self, config_file: Optional[Union[str, Path]] = None,
                 overrides: Optional[dict] = None, presets: Optional[dict] = None):
        self.config_file = Path(config_file) if config_file is not None else None
        self.config = self._load_settings(overrides or {}, presets or {})
        self.experiment = build_experiment(self.config)

    def _load_settings(self, overrides: dict, presets: dict) -> dict:
        """Defaults, then presets, then the file, then command-line overrides"""
        settings = copy.deepcopy(DEFAULT_CONFIG)
        _deep_update(settings, copy.deepcopy(presets))
        if self.config_file is not None:
            try:
                with open(self.config_file, 'r', encoding='utf-8') as f:
                    saved_settings = json.load(f)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"Cannot read configuration {self.config_file}: {e}")
            if not isinstance(saved_settings, dict):
                raise ConfigError(f"Configuration {self.config_file} must be a JSON object")
            _deep_update(settings, saved_settings)
            logging.info(f"Settings loaded from {self.config_file}")
        else:
            logging.info("No configuration file given, using defaults")
        _deep_update(settings, overrides)
        return settings

    def get(self, key: str, default: Any = None) -> Any:
        """Get a setting by dotted path"""
        node = self.config
        for part in key.split('.'):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def save(self, path: Union[str, Path]):
        """Write the effective configuration"""
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(self.config, f, indent=4, sort_keys=True)
            logging.info(f"Effective configuration saved to {path}")
        except OSError as e:
            raise ConfigError(f"Cannot write configuration {path}: {e}")

    def summary(self) -> str:
        exp = self.experiment
        p = exp.problem
        return (f"d={p.d} alpha={p.alpha} beta={p.beta} optimum={p.optimum_mode.value} "
                f"law={exp.distribution.kind.value} gamma={exp.gamma.mode.value} T={exp.horizon} "
                f"replicates={exp.replicates} seed={exp.base_seed}")
