from typing import Any, Dict, Iterable, Optional
import copy
import logging
from pathlib import Path

import jsonschema
import yaml

from src.errors import ConfigurationError

logger = logging.getLogger(__name__)

DEFAULTS: Dict[str, Any] = {
    'gating': {
        'sigma0': 30.0,
        'alpha_par': 0.6,
        'alpha_perp': 0.25,
        'tau': 4.0,
        'theta_deg': 85.0,
        'max_dt': 21600.0,
    },
    'scoring': {
        'lambda_psi': 50.0,
        'lambda_v': 0.5,
        't_half': 7200.0,
        'beta': 1.0,
        'r_loc': 10000.0,
    },
    'screening': {
        'k': 16,
        'v_max': 25.0,
        'cell_size': 50000.0,
        'use_turn_rate': True,
        'max_turn_rate': 0.002,
        'history': 5,
        'use_index': True,
    },
    'model': {
        'models_dir': 'models',
        'name': 'relabel-mlp',
        'version': 'v1',
    },
    'training': {
        'epochs': 120,
        'batch_size': 1000,
        'learning_rate': 0.001,
        'lr_milestones': [0.6, 0.85],
        'lr_gamma': 0.1,
        'label_smoothing': 0.05,
        'clip_norm': 1.0,
        'weight_decay': 0.0,
        'seed': 0,
        'validation_fraction': 0.1,
        'hidden': [64, 64, 32],
        'calibrate': True,
        'show_progress': False,
        'train_fraction': 0.67,
    },
    'preprocess': {
        'interval': 1800.0,
        'position_noise': 30.0,
        'time_jitter': 15.0,
        'stop_speed': 0.5,
        'keep_stopped': 0.05,
    },
    'synthetic': {
        'n_vessels': 200,
        'days': 3,
        'report_interval': 300.0,
        'lifetime_hours': [2.0, 24.0],
        'speed_knots': [4.0, 16.0],
        'max_turn_rate_deg_min': 1.0,
        'mean_leg_hours': 1.5,
        'scenario': 'mixed',
        'mix': [0.5, 0.3, 0.2],
        'origin_lat': 28.0,
        'origin_lon': -95.0,
        'open_radius': 150000.0,
        'channel_length': 60000.0,
        'channel_width': 800.0,
        'port_radius': 3000.0,
        'n_docks': 6,
        'seed': 0,
    },
    'baselines': {
        'cbtr': {
            'theta_deg': 85.0,
            'window': 21600.0,
            'max_distance': None,
            'v_max': 25.0,
            'workers': 1,
        },
        'atd': {
            'window': 21600.0,
            'v_max': 25.0,
            'max_distance': 1.0,
        },
        'kalman': {
            'measurement_std': 30.0,
            'speed_std': 0.5,
            'course_std_deg': 5.0,
            'accel_std': 0.1,
            'yaw_accel_std': 0.0001,
            'turn_rate_std': 0.01,
            'gate': None,
            'gate_probability': 0.99,
            'max_age': 21600.0,
            'tune_gates': [5.0, 9.49, 13.28, 20.0, 30.0],
        },
    },
    'evaluation': {
        'batch_size': 4096,
        'radius': 5000.0,
        'coastal_threshold': 20,
        'port_threshold': 80,
        'curve_accuracies': [0.0, 0.25, 0.5, 0.75, 1.0],
        'curve_seeds': [0, 1, 2],
        'ceiling_ks': [1, 2, 4, 8, 16, 32],
    },
    'runtime': {
        'seed': 0,
        'workers': 1,
        'log_level': 'INFO',
        'log_format': 'text',
    },
}

ENUMS = {
    ('synthetic', 'scenario'): ['open', 'channel', 'port', 'mixed'],
    ('runtime', 'log_format'): ['text', 'json'],
    ('runtime', 'log_level'): ['DEBUG', 'INFO', 'WARNING', 'ERROR'],
}


def _schema_for(value: Any, path: tuple = ()) -> Dict[str, Any]:
    if isinstance(value, dict):
        return {
            'type': 'object',
            'properties': {key: _schema_for(sub, path + (key,)) for key, sub in value.items()},
            'additionalProperties': False,
        }
    if path in ENUMS:
        return {'enum': ENUMS[path]}
    if isinstance(value, bool):
        return {'type': 'boolean'}
    if isinstance(value, int):
        return {'type': 'integer'}
    if isinstance(value, float):
        return {'type': 'number'}
    if isinstance(value, str):
        return {'type': 'string'}
    if isinstance(value, list):
        item = 'integer' if all(isinstance(v, int) and not isinstance(v, bool) for v in value) else 'number'
        return {'type': 'array', 'items': {'type': item}}
    return {'type': ['number', 'null']}


CONFIG_SCHEMA = _schema_for(DEFAULTS)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def parse_override(assignment: str) -> Dict[str, Any]:
    """'section.key=value' to a nested dict; the value is read as YAML."""
    if '=' not in assignment:
        raise ConfigurationError(f"Override {assignment!r} is not section.key=value")
    dotted, raw = assignment.split('=', 1)
    keys = [k for k in dotted.strip().split('.') if k]
    if len(keys) < 2:
        raise ConfigurationError(f"Override {assignment!r} needs a section and a key")
    value: Any = yaml.safe_load(raw)
    for key in reversed(keys):
        value = {key: value}
    return value


class RunConfig:
    """Defaults, then the YAML file, then command-line overrides, validated once."""

    def __init__(
        self,
        config_path: Optional[Path] = None,
        overrides: Iterable[str] = (),
        flags: Optional[Dict[str, Any]] = None
    ):
        self.config_path = Path(config_path) if config_path else None
        merged = deep_merge(DEFAULTS, self._load_config())
        for assignment in overrides:
            merged = deep_merge(merged, parse_override(assignment))
        merged = deep_merge(merged, flags or {})
        self.validate(merged)
        self.config = merged

    def _load_config(self) -> Dict[str, Any]:
        if self.config_path is None:
            return {}
        if not self.config_path.exists():
            raise ConfigurationError(f"Config file {self.config_path} does not exist")
        try:
            with open(self.config_path, 'r') as f:
                loaded = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            logger.error(f"Error parsing {self.config_path}: {e}")
            raise ConfigurationError(f"Invalid YAML in {self.config_path}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{self.config_path} must hold a mapping of sections")
        return loaded

    @staticmethod
    def validate(config: Dict[str, Any]):
        try:
            jsonschema.validate(config, CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            location = '.'.join(str(p) for p in e.absolute_path) or '<root>'
            logger.error(f"Invalid configuration at {location}: {e.message}")
            raise ConfigurationError(f"Invalid configuration at {location}: {e.message}") from e

    def section(self, *path: str) -> Dict[str, Any]:
        node: Any = self.config
        for key in path:
            node = node[key]
        return node

    def dump(self) -> str:
        return yaml.safe_dump(self.config, sort_keys=True)


def seed_flags(seed: Optional[int]) -> Dict[str, Any]:
    """One --seed value drives every seeded stage."""
    if seed is None:
        return {}
    return {'runtime': {'seed': seed}, 'synthetic': {'seed': seed}, 'training': {'seed': seed}}
