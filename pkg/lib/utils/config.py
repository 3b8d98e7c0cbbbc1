"""
Experiment configuration for the multi-domain restoration framework
"""
import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError, field_validator, model_validator

from .errors import ConfigurationError

SSIM_ALPHA1 = (0.0002 * 65535) ** 2
SSIM_ALPHA2 = (0.0007 * 65535) ** 2


class TrainingMode(str, Enum):
    """Loss/conditioning combinations of the ablation matrix."""
    M1 = "m1"              # adv + ls, single domain
    M2 = "m2"              # adv + ls + cycle, single domain
    M3 = "m3"              # adv + wls, multi domain
    M4 = "m4"              # adv + wls + cycle, multi domain
    PROPOSED = "proposed"  # adv + wls + cycle + mapping label

    @property
    def single_domain(self) -> bool:
        return self in (TrainingMode.M1, TrainingMode.M2)

    @property
    def uses_cycle(self) -> bool:
        return self in (TrainingMode.M2, TrainingMode.M4, TrainingMode.PROPOSED)

    @property
    def uses_labels(self) -> bool:
        return self is TrainingMode.PROPOSED

    @property
    def uses_domain_weights(self) -> bool:
        return not self.single_domain

    @property
    def description(self) -> str:
        return {
            TrainingMode.M1: "adv+ls",
            TrainingMode.M2: "adv+ls+cycle",
            TrainingMode.M3: "adv+wls",
            TrainingMode.M4: "adv+wls+cycle",
            TrainingMode.PROPOSED: "adv+wls+cycle+label",
        }[self]


class DomainConfig(BaseModel):
    """Degradation parameters of one synthetic acquisition domain."""
    name: str = Field(..., description="Domain name")
    count_scale: float = Field(..., gt=0, description="Counts per intensity unit at full scan time")
    time_fraction: float = Field(..., gt=0, le=1, description="Short-scan fraction of the full scan time")
    psf_fwhm_mm: float = Field(0.0, ge=0, description="Scanner point-spread FWHM in mm")


class DataConfig(BaseModel):
    """Synthetic dataset construction and ingestion settings."""
    dims: List[int] = Field(default_factory=lambda: [16, 64, 64], description="Volume dims (slices, rows, columns)")
    spacing_mm: List[float] = Field(default_factory=lambda: [2.0, 2.0, 2.0], description="Voxel spacing in mm")
    subjects_per_domain: List[int] = Field(default_factory=lambda: [8, 4, 2], description="Subjects per domain")
    val_fraction: float = Field(0.25, ge=0, lt=1, description="Fraction of subjects held out per domain")
    phantom: Literal["ellipsoids", "checker", "blobs"] = Field("ellipsoids", description="Phantom family")
    amplitude: float = Field(1000.0, gt=0, description="Peak phantom intensity")
    intensity_units: str = Field("counts", description="Free-text intensity unit tag")
    pad_multiple: int = Field(16, ge=1, description="Slices are padded/cropped to a multiple of this")
    domains: List[DomainConfig] = Field(default_factory=list)

    @field_validator('dims')
    @classmethod
    def validate_dims(cls, v):
        if len(v) != 3 or any(d < 1 for d in v):
            raise ValueError('dims must be three positive integers (slices, rows, columns)')
        return v

    @field_validator('spacing_mm')
    @classmethod
    def validate_spacing(cls, v):
        if len(v) != 3 or any(s <= 0 for s in v):
            raise ValueError('spacing_mm must be three positive values')
        return v

    @field_validator('subjects_per_domain')
    @classmethod
    def validate_subjects(cls, v):
        if not v or any(n < 1 for n in v):
            raise ValueError('subjects_per_domain entries must be >= 1')
        return v


class GeneratorConfig(BaseModel):
    """Architecture of the conditional framelet generators G and F."""
    stages: int = Field(4, ge=1, description="Number of Haar down-sampling stages K")
    channels: List[int] = Field(default_factory=lambda: [64, 128, 256, 512], description="Channels J_k per stage")
    domain_count: int = Field(3, ge=1, description="Mapping label length N")
    in_channels: int = Field(1, ge=1)
    out_channels: int = Field(1, ge=1)
    conditioned: bool = Field(True, description="AdaIN sites driven by mapping networks")
    mapping_hidden: int = Field(64, ge=1, description="Width of the mapping-network hidden layers")
    negative_slope: float = Field(0.2, ge=0)
    adain_eps: float = Field(1e-5, gt=0)

    @model_validator(mode='after')
    def validate_channels(self):
        if len(self.channels) != self.stages:
            raise ValueError(f'channels must list {self.stages} entries, got {len(self.channels)}')
        if any(c < 1 for c in self.channels):
            raise ValueError('channel counts must be positive')
        return self

    @property
    def divisor(self) -> int:
        return 2 ** self.stages


class DiscriminatorConfig(BaseModel):
    """Architecture of the patch discriminators D_X and D_Z."""
    base_channels: int = Field(64, ge=1)
    layers: int = Field(3, ge=1, description="Stride-2 convolution stages")
    negative_slope: float = Field(0.2, ge=0)

    @property
    def min_size(self) -> int:
        return 2 ** self.layers


class TrainConfig(BaseModel):
    """Optimisation settings of the min-max training loop."""
    learning_rate: float = Field(0.0002, gt=0)
    beta1: float = Field(0.5, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epochs: int = Field(200, ge=1)
    batch_size: int = Field(32, ge=1)
    lambda_cyc: float = Field(10.0, gt=0)
    lambda_wls: float = Field(10.0, gt=0)
    init_std: float = Field(0.01, gt=0)
    seed: int = Field(0)
    mode: TrainingMode = Field(TrainingMode.PROPOSED)
    wls_reduction: Literal["residual", "squared"] = Field(
        "residual", description="'residual': w scales the residual (w^2 effective); 'squared': w scales ||r||^2"
    )
    gan_convention: Literal["standard", "as_printed"] = Field(
        "standard", description="Least-squares GAN targets; 'as_printed' swaps real/fake targets"
    )
    exclude_air_slices: bool = Field(True)
    air_threshold: float = Field(0.01, ge=0, lt=1, description="Fraction of the volume max below which a slice is air")
    deterministic: bool = Field(True)


class GridSearchConfig(BaseModel):
    """Discretised search for an unseen-domain mapping label."""
    epsilon: float = Field(0.1, ge=0, description="Search box is [-epsilon, 1 + epsilon]^N")
    coarse: float = Field(0.1, gt=0, description="Coarse grid spacing")
    fine: float = Field(0.02, gt=0, description="Fine grid spacing")
    refine_radius: Optional[float] = Field(None, gt=0, description="Half-width of the fine window (default: one coarse cell)")
    strategy: Literal["coarse_to_fine", "exhaustive"] = Field("coarse_to_fine")
    batch_size: int = Field(16, ge=1, description="Calibration slices per forward pass")
    gradient_refine: bool = Field(False, description="Polish the grid optimum by gradient descent on c")
    gradient_steps: int = Field(100, ge=1)
    gradient_lr: float = Field(0.01, gt=0)

    @model_validator(mode='after')
    def validate_spacing(self):
        span = 1.0 + 2.0 * self.epsilon
        if self.fine > self.coarse:
            raise ValueError('fine spacing must not exceed coarse spacing')
        if self.coarse > span:
            raise ValueError('coarse spacing must leave at least two points per axis')
        return self

    @property
    def radius(self) -> float:
        return self.refine_radius if self.refine_radius is not None else self.coarse


class MetricsConfig(BaseModel):
    """Image-quality metric constants."""
    ssim_alpha1: float = Field(SSIM_ALPHA1, ge=0)
    ssim_alpha2: float = Field(SSIM_ALPHA2, ge=0)
    per_slice: bool = Field(False, description="Also report per-slice series")


class ExperimentConfig(BaseModel):
    """Merged experiment configuration serialised as a single YAML file."""
    seed: int = Field(0)
    output_dir: str = Field("runs/default")
    data: DataConfig = Field(default_factory=DataConfig)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = Field(default_factory=DiscriminatorConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    grid_search: GridSearchConfig = Field(default_factory=GridSearchConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)

    def config_hash(self) -> str:
        """Stable hash of the canonical JSON form, recorded in output manifests."""
        canonical = json.dumps(self.model_dump(mode='json'), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by dotted key"""
        value: Any = self.model_dump(mode='json')
        for k in key.split('.'):
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default
        return value

    def to_yaml(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            yaml.safe_dump(self.model_dump(mode='json'), f, default_flow_style=False, sort_keys=False)
        return path


def _set_dotted(data: Dict[str, Any], key: str, value: Any) -> None:
    node = data
    parts = key.split('.')
    for part in parts[:-1]:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[parts[-1]] = value


def load_experiment_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """
    Load an experiment configuration from YAML and apply flag overrides

    Args:
        path: YAML file; None uses built-in defaults
        overrides: Dotted-key overrides (e.g. ``{"train.epochs": 1}``); flags win

    Returns:
        Validated ExperimentConfig
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, 'r') as f:
                data = yaml.safe_load(f) or {}
        except FileNotFoundError:
            raise ConfigurationError(f"Config file not found: {path}", field="config")
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Invalid YAML in config file {path}: {e}", field="config")
        if not isinstance(data, dict):
            raise ConfigurationError(f"Config file {path} must contain a mapping", field="config")

    return _validated(data, overrides)


def apply_overrides(config: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """Re-validate a configuration with dotted-key overrides applied"""
    return _validated(config.model_dump(mode='json'), overrides)


def _validated(data: Dict[str, Any], overrides: Optional[Dict[str, Any]]) -> ExperimentConfig:
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, key, value)

    try:
        return ExperimentConfig(**data)
    except PydanticValidationError as e:
        first = e.errors()[0]
        field = '.'.join(str(p) for p in first.get('loc', ()))
        raise ConfigurationError(f"Invalid configuration at '{field}': {first.get('msg')}", field=field)
