import copy
import hashlib
import json
import os
from typing import Any, Dict, Optional

import jinja2

from errors import ConfigurationError

CONFIG_ENV_VAR = 'DEMOBOT_CONFIG'
TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'templates')

# Authoritative defaults; config.json at the repo root mirrors these.
DEFAULT_CONFIG: Dict[str, Any] = {
    "dataset": {
        "sidecar": False
    },
    "similarity": {
        "k": 10
    },
    "transport": {
        "ground_metric": "sqeuclidean",
        "solver": "pot",
        "threshold_quantile": 0.5,
        "threshold_absolute": None
    },
    "reachability": {
        "metric": "euclidean",
        "merge_eps": None,
        "merge_eps_factor": 0.05,
        "gamma": 0.95,
        "tol": 1e-10
    },
    "subgoal": {
        "history_cap": 50,
        "use_filter": True,
        "use_value": True,
        "patience": 3
    },
    "policy": {
        "valued_aggregation": "sum"
    },
    "gcbc": {
        "hidden": 64,
        "goal_horizon": 10,
        "learning_rate": 0.001,
        "epochs": 200,
        "batch_size": 64,
        "seed": 0
    },
    "env": {
        "particles": 16,
        "curtain_width": None,
        "curtain_height": 1.6,
        "gap_ratio": 1.2,
        "min_spacing_ratio": 0.1,
        "rest_scale_range": [1.0, 1.0],
        "max_strain_range": [0.1, 0.1],
        "hues": [0.0, 72.0, 144.0, 216.0, 288.0],
        "colour_weight": 0.1,
        "gripper_weight": 0.2,
        "hand_weight": 5.0,
        "distance_range": None,
        "lateral_max": None,
        "heading_dev_deg": None,
        "solver_iterations": 8,
        "feature_dim": 64,
        "lift_seed": 0,
        "noise_scale": 0.002
    },
    "harness": {
        "workers": 1,
        "max_steps": 500,
        "episodes": 20,
        "demo_seed": 0,
        "include_timing": False,
        "episode_log": None,
        "database": None
    },
    "logging": {
        "level": "INFO",
        "log_dir": "logs"
    }
}


# Types accepted by the keys that default to null. Null means "derive at
# runtime" for the numeric ones and "disabled" for the output paths.
NULLABLE_TYPES: Dict[str, tuple] = {
    "transport.threshold_absolute": (int, float),
    "reachability.merge_eps": (int, float),
    "env.curtain_width": (int, float),
    "env.distance_range": (list,),
    "env.lateral_max": (int, float),
    "env.heading_dev_deg": (int, float),
    "harness.episode_log": (str,),
    "harness.database": (str,),
}


def _check_types(default, value, path: str) -> None:
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigurationError(f"config key '{path}' must be an object")
        for key, sub in value.items():
            sub_path = f"{path}.{key}" if path else key
            if key not in default:
                raise ConfigurationError(f"unknown config key '{sub_path}'")
            _check_types(default[key], sub, sub_path)
        return
    if default is None or value is None:
        if value is None:
            return
        allowed = NULLABLE_TYPES.get(path, (int, float, list))
        if isinstance(value, bool) or not isinstance(value, allowed):
            raise ConfigurationError(f"config key '{path}' has invalid type {type(value).__name__}")
        return
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"config key '{path}' must be a boolean")
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"config key '{path}' must be a number")
        if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float) \
                and not value.is_integer():
            raise ConfigurationError(f"config key '{path}' must be an integer")
    elif not isinstance(value, type(default)):
        raise ConfigurationError(f"config key '{path}' must be of type {type(default).__name__}")


def merge_config(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """
    Returns a deep copy of base with overrides applied section by section.

    Overrides are validated against DEFAULT_CONFIG first, so unknown keys and
    type mismatches raise ConfigurationError naming the dotted key path.
    """
    _check_types(DEFAULT_CONFIG, overrides, '')
    merged = copy.deepcopy(base)
    for section, values in overrides.items():
        if isinstance(values, dict):
            merged.setdefault(section, {}).update(copy.deepcopy(values))
        else:
            merged[section] = copy.deepcopy(values)
    return merged


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Loads the effective configuration.

    Precedence is overrides (command-line flags) > config file > defaults. The
    file path comes from the argument, else the DEMOBOT_CONFIG environment
    variable, else no file is read.
    """
    config = copy.deepcopy(DEFAULT_CONFIG)
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if path:
        try:
            with open(path, encoding='utf-8') as f:
                file_config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: invalid JSON ({e})") from e
        config = merge_config(config, file_config)
    if overrides:
        config = merge_config(config, overrides)
    return config


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(',', ':'))


def config_hash(config: Dict[str, Any]) -> str:
    """First 16 hex digits of the SHA-256 over the canonical config JSON."""
    return hashlib.sha256(canonical_json(config).encode('utf-8')).hexdigest()[:16]


def episode_seed(base_seed: int, block: int, episode: int) -> int:
    """Reset seed for one episode; shared by every policy evaluated in the same block."""
    return base_seed + 1000 * block + episode


_template_env: Optional[jinja2.Environment] = None


def render(template_name: str, context: Dict[str, Any]) -> str:
    """Render a template from the templates directory with the given context."""
    global _template_env
    if _template_env is None:
        _template_env = jinja2.Environment(
            loader=jinja2.FileSystemLoader(TEMPLATE_DIR),
            undefined=jinja2.StrictUndefined,
            keep_trailing_newline=True,
            trim_blocks=True,
            lstrip_blocks=True,
        )
    return _template_env.get_template(template_name).render(**context)
