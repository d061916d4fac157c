"""
Validated configuration models.

Every model forbids unknown keys, so a typo in a JSON config file fails loudly with the
offending key named.
"""

import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator


class ConfigError(ValueError):
    pass


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FeatureConfig(StrictModel):
    pe_pairs: int = Field(8, ge=1)
    pe_min_wavelength: float = Field(0.1, gt=0.0)
    pe_max_wavelength: float = Field(20.0, gt=0.0)

    @model_validator(mode="after")
    def check_ladder(self):
        if not self.pe_min_wavelength < self.pe_max_wavelength:
            raise ValueError("pe_min_wavelength must be < pe_max_wavelength")
        return self


class GraphConfig(StrictModel):
    levels: int = Field(3, ge=1)
    alpha: float = Field(0.1, gt=0.0, le=1.0)
    n_candidates: int = Field(2, ge=1)
    # Octree base cell as a multiple of the mesh target edge length
    base_cell_factor: float = Field(2.0, gt=0.0)


class ModelConfig(StrictModel):
    latent_dim: int = Field(64, ge=1)
    expansion: int = Field(2, ge=1)
    n_boundary_blocks: int = Field(2, ge=1)
    n_distant_blocks: int = Field(4, ge=0)
    layer_norm: bool = True


class TrainConfig(StrictModel):
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(16, ge=1)
    lr_start: float = Field(1e-4, gt=0.0)
    lr_end: float = Field(1e-7, gt=0.0)
    huber_delta: float = Field(1.0, gt=0.0)
    clip_norm: float = Field(1.0, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    augment: bool = True
    normalize_targets: bool = False

    @model_validator(mode="after")
    def check_schedule(self):
        if self.lr_end > self.lr_start:
            raise ValueError(f"lr_end ({self.lr_end}) must be <= lr_start ({self.lr_start})")
        return self


class GridSpec(StrictModel):
    z0: float = 0.0
    side: float = Field(10.0, gt=0.0)
    resolution: int = Field(64, ge=1)


class EvalConfig(StrictModel):
    seeds: int = Field(1, ge=1)
    n_candidates: List[int] = Field(default_factory=list)
    obstacle_counts: List[int] = Field(default_factory=list)
    samples: int = Field(8, ge=1)


class RunConfig(StrictModel):
    command: Literal["generate", "solve", "graphs", "train", "eval", "field", "selftest"]
    run_dir: Path = Path("runs/default")
    seed: int = 0
    threads: Optional[int] = Field(None, ge=1)
    deterministic: bool = False
    verbose: bool = False

    problem: Literal["laplace", "helmholtz"] = "laplace"
    samples: int = Field(4, ge=1)
    obstacles: int = Field(3, ge=1)
    edge: float = Field(0.3, gt=0.0)

    data: Optional[Path] = None
    checkpoint: Optional[Path] = None
    index: int = Field(0, ge=0)
    field_format: Literal["csv", "pgm", "png"] = "csv"

    features: FeatureConfig = Field(default_factory=FeatureConfig)
    graphs: GraphConfig = Field(default_factory=GraphConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    grid: GridSpec = Field(default_factory=GridSpec)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @property
    def variant(self) -> str:
        return {"laplace": "laplace_dirichlet", "helmholtz": "helmholtz_dirichlet"}[self.problem]


def describe_validation_error(error: ValidationError) -> str:
    """One line listing every offending key."""
    parts = []
    for item in error.errors():
        key = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{key}: {item['msg']}")
    return "; ".join(parts)


def _merge(base: dict, overrides: dict) -> dict:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def resolve_run_config(overrides: dict, config_path: Optional[Path] = None) -> RunConfig:
    """
    Build a RunConfig from an optional JSON file plus explicit overrides (flags win).

    Raises:
        ConfigError: Unreadable file or any validation failure, with all offending keys listed
    """
    base = {}
    if config_path is not None:
        try:
            base = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {config_path}: {e}")
        if not isinstance(base, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
    try:
        return RunConfig(**_merge(base, overrides))
    except ValidationError as e:
        raise ConfigError(describe_validation_error(e))


def write_resolved_config(config: RunConfig, run_dir: Path) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "resolved_config.json"
    path.write_text(config.model_dump_json(indent=2) + "\n")
    return path
