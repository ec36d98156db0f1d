import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from utils.errors import ConfigError
from utils.validators import validate_experiment_dict

SCHEMA_VERSION = 1

_app_config: Dict[str, Any] = {}


def load_config(reload: bool = False) -> Dict[str, Any]:
    """Load application configuration, with environment overrides from .env"""
    global _app_config
    if _app_config and not reload:
        return _app_config

    load_dotenv()
    debug = os.getenv('DEBUG', 'False').lower() == 'true'
    config = {
        'app_name': 'Ultrafast Diffusion Lab',
        'version': '1.0.0',
        'debug': debug,
        'log_level': 'DEBUG' if debug else os.getenv('ULTRAFAST_LOG_LEVEL', 'INFO').upper(),
        'out_dir': os.getenv('ULTRAFAST_OUT_DIR', 'out'),
        'stride': int(os.getenv('ULTRAFAST_STRIDE', '1')),
        'workers': int(os.getenv('ULTRAFAST_WORKERS', str(min(4, os.cpu_count() or 1)))),
        'schema_version': SCHEMA_VERSION,
    }
    _app_config = config
    return config


def get_config(key, default=None):
    """Get configuration value"""
    return load_config().get(key, default)


@dataclass
class ExperimentConfig:
    """One experiment: domain, weight, initial datum, solver and horizon"""
    domain: Dict[str, Any]
    n: int
    r: float
    rho: Dict[str, Any]
    f0: Dict[str, Any]
    solver: Dict[str, Any]
    horizon: float
    schema_version: int = SCHEMA_VERSION
    scenario: str = 'jko'
    Lambda: Optional[float] = None
    output_dir: str = 'out'
    seed: int = 0
    stride: int = 1
    checks: List[str] = field(default_factory=list)
    q_list: List[float] = field(default_factory=list)
    tau_list: List[float] = field(default_factory=list)
    reference_dt: float = 2e-5
    epsilons: List[float] = field(default_factory=list)


_FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}


def experiment_config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a parsed JSON object and build the config"""
    if not isinstance(data, dict):
        raise ConfigError("experiment config must be a JSON object")
    unknown = sorted(set(data) - _FIELD_NAMES)
    if unknown:
        raise ConfigError(f"Unknown config fields: {', '.join(unknown)}")
    is_valid, message = validate_experiment_dict(data)
    if not is_valid:
        raise ConfigError(message)
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def experiment_config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return asdict(cfg)


def load_experiment_config(path) -> ExperimentConfig:
    """Read and validate an experiment config file"""
    path = Path(path)
    try:
        with open(path, encoding='utf-8') as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Invalid JSON in {path}: {exc}") from exc
    cfg = experiment_config_from_dict(data)
    _resolve_paths(cfg, path.parent)
    return cfg


def _resolve_paths(cfg: ExperimentConfig, base: Path) -> None:
    """Custom CSV paths are relative to the config file"""
    for spec in (cfg.rho, cfg.f0):
        if spec.get('path') and not Path(spec['path']).is_absolute():
            spec['path'] = str(base / spec['path'])
