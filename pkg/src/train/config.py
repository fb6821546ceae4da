"""Training configuration dataclasses.

Every field has a default, so an empty run config is a valid one. The YAML
reader in ``src.formats.run_config`` maps document sections onto these
classes and rejects unknown keys.
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Dict, Optional

import numpy as np

from src.utils.errors import ConfigError

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class PathsConfig:
    scene: str = "runs/scene/scene.json"
    checkpoint: str = "runs/model.g4ds"
    styles: str = "styles"
    output: str = "runs/out"
    style_cache: Optional[str] = None


@dataclass
class Stage1Config:
    """Embedding stage: coarse (static) then fine (deformable) phase."""

    coarse_iters: int = 3000
    fine_iters: int = 1500
    lr_gaussians: float = 1.6e-3
    lr_gaussians_final: float = 1.6e-4
    lr_networks: float = 1e-3
    lambda_embed_color: float = 1.0
    lambda_embed_feat: float = 1.0
    validate_every: int = 250
    checkpoint_every: int = 0
    held_out_camera: Optional[int] = None


@dataclass
class Stage2Config:
    """Style stage: transform predictors, extractors and propagation."""

    iters: int = 1500
    lr: float = 1e-3
    lambda_content: float = 1.0
    lambda_style: float = 10.0
    lambda_covariance: float = 1.0
    cspn_iterations: int = 3
    style_resolution: int = 256
    validate_every: int = 250
    checkpoint_every: int = 0


@dataclass
class RenderConfig:
    tile: int = 16
    resolution: int = 64
    dtype: str = "float64"

    @property
    def numpy_dtype(self):
        return DTYPES[self.dtype]


@dataclass
class EvalConfig:
    short_offset: int = 1
    long_offset: int = 3
    propagate: bool = True
    transform: str = "predicted"


SECTIONS = {
    "paths": PathsConfig,
    "stage1": Stage1Config,
    "stage2": Stage2Config,
    "render": RenderConfig,
    "eval": EvalConfig,
}


@dataclass
class TrainConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    render: RenderConfig = field(default_factory=RenderConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "TrainConfig":
        """Check ranges; returns self.

        Raises:
            ConfigError: negative iteration count or weight, bad enum value
        """
        counts = {
            "stage1.coarse_iters": self.stage1.coarse_iters,
            "stage1.fine_iters": self.stage1.fine_iters,
            "stage1.validate_every": self.stage1.validate_every,
            "stage1.checkpoint_every": self.stage1.checkpoint_every,
            "stage2.iters": self.stage2.iters,
            "stage2.cspn_iterations": self.stage2.cspn_iterations,
            "stage2.validate_every": self.stage2.validate_every,
            "stage2.checkpoint_every": self.stage2.checkpoint_every,
        }
        for key, value in counts.items():
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise ConfigError(f"{key} must be a non-negative integer, got {value!r}")
        weights = {
            "stage1.lambda_embed_color": self.stage1.lambda_embed_color,
            "stage1.lambda_embed_feat": self.stage1.lambda_embed_feat,
            "stage2.lambda_content": self.stage2.lambda_content,
            "stage2.lambda_style": self.stage2.lambda_style,
            "stage2.lambda_covariance": self.stage2.lambda_covariance,
        }
        for key, value in weights.items():
            if value < 0:
                raise ConfigError(f"{key} must be >= 0, got {value!r}")
        for key, value in {"stage1.lr_gaussians": self.stage1.lr_gaussians,
                           "stage1.lr_gaussians_final": self.stage1.lr_gaussians_final,
                           "stage1.lr_networks": self.stage1.lr_networks,
                           "stage2.lr": self.stage2.lr}.items():
            if value <= 0:
                raise ConfigError(f"{key} must be > 0, got {value!r}")
        if self.render.dtype not in DTYPES:
            raise ConfigError(f"render.dtype must be one of {sorted(DTYPES)}, got {self.render.dtype!r}")
        if self.render.tile < 1:
            raise ConfigError(f"render.tile must be >= 1, got {self.render.tile}")
        if self.stage2.style_resolution < 64:
            raise ConfigError(f"stage2.style_resolution must be >= 64, got {self.stage2.style_resolution}")
        if self.eval.transform not in ("predicted", "closed-form"):
            raise ConfigError(f"eval.transform must be 'predicted' or 'closed-form', got {self.eval.transform!r}")
        return self

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[Dict]) -> "TrainConfig":
        """Build from a nested mapping; missing keys take their defaults.

        Raises:
            ConfigError: unknown key at any level or a section that is not a mapping
        """
        data = data or {}
        if not isinstance(data, dict):
            raise ConfigError(f"Run config must be a mapping, got {type(data).__name__}")
        known = {"seed"} | set(SECTIONS)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}")
        kwargs = {}
        if "seed" in data:
            kwargs["seed"] = data["seed"]
        for section, section_cls in SECTIONS.items():
            values = data.get(section) or {}
            if not isinstance(values, dict):
                raise ConfigError(f"Config section '{section}' must be a mapping")
            allowed = {f.name for f in fields(section_cls)}
            extra = sorted(set(values) - allowed)
            if extra:
                raise ConfigError(f"Unknown config key(s) in '{section}': {', '.join(f'{section}.{k}' for k in extra)}")
            kwargs[section] = section_cls(**values)
        return cls(**kwargs).validate()
