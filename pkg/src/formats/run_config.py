"""YAML run configuration.

The document mirrors ``TrainConfig``::

    seed: 0
    paths: {scene: runs/scene, checkpoint: runs/model.g4ds, ...}
    stage1: {coarse_iters: 3000, fine_iters: 1500, ...}
    stage2: {iters: 1500, lambda_style: 10.0, ...}
    render: {tile: 16, resolution: 64, dtype: float64}
    eval: {short_offset: 1, long_offset: 3, propagate: true, transform: predicted}

Missing keys take their defaults; unknown keys are an error.
"""

import logging
from dataclasses import fields
from pathlib import Path
from typing import Dict, Union

import yaml

from src.train.config import SECTIONS, TrainConfig
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)


def _coerce_floats(data: Dict) -> Dict:
    """YAML 1.1 reads ``1e-3`` as a string; turn such values into floats."""
    for section, section_cls in SECTIONS.items():
        values = data.get(section)
        if not isinstance(values, dict):
            continue
        for f in fields(section_cls):
            value = values.get(f.name)
            if f.type is float and isinstance(value, str):
                try:
                    values[f.name] = float(value)
                except ValueError:
                    raise ConfigError(f"{section}.{f.name} must be a number, got {value!r}")
            elif f.type is float and isinstance(value, int) and not isinstance(value, bool):
                values[f.name] = float(value)
    return data


def parse_run_config(text: str) -> TrainConfig:
    """Parse a YAML document into a validated ``TrainConfig``.

    Raises:
        ConfigError: malformed YAML, unknown key or out-of-range value
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"Malformed run config: {str(e)}")
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"Run config must be a mapping, got {type(data).__name__}")
    return TrainConfig.from_dict(_coerce_floats(data))


def dump_run_config(config: TrainConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=False)


def load_run_config(path: Union[str, Path]) -> TrainConfig:
    config = parse_run_config(Path(path).read_text(encoding="utf-8"))
    logger.info(f"Loaded run config from {path}")
    return config


def save_run_config(path: Union[str, Path], config: TrainConfig):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_run_config(config), encoding="utf-8")
