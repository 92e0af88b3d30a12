# state.py

from dataclasses import dataclass, field
from typing import List, Optional, Tuple, TypedDict

import numpy as np

from errors import ConfigError, DataError

# === Architecture ===

@dataclass
class ModelConfig:
    """
    Full architectural description of a Mamba-CNN.

    stage_channels includes the stem width: [stem, stage1, ..., stageK].
    Each block stage i maps stage_channels[i] -> stage_channels[i + 1]; its
    first block carries stage_strides[i], the remaining blocks are stride 1.
    """

    stage_channels: List[int] = field(default_factory=lambda: [64, 64, 128, 256, 512])
    stage_strides: List[int] = field(default_factory=lambda: [1, 2, 2, 2])
    blocks_per_stage: List[int] = field(default_factory=lambda: [1, 1, 1, 2])
    expansion_factor: int = 4
    use_gate: bool = True
    use_pyramid: bool = True
    pyramid_scales: List[int] = field(default_factory=lambda: [1, 2, 4])
    head_widths: List[int] = field(default_factory=lambda: [512, 128])
    head_dropout: List[float] = field(default_factory=lambda: [0.5, 0.3])
    input_size: int = 224
    use_batchnorm: bool = True
    activation: str = "relu"  # hidden nonlinearity: relu | relu6 | none
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    gate_bias_init: float = 0.0

    def validate(self) -> "ModelConfig":
        """Raises ConfigError when the stage lists or head lists are inconsistent."""
        problems = []
        n_stages = len(self.stage_strides)
        if len(self.stage_channels) != n_stages + 1:
            problems.append(
                f"stage_channels needs {n_stages + 1} entries (stem + {n_stages} stages), "
                f"got {len(self.stage_channels)}"
            )
        if len(self.blocks_per_stage) != n_stages:
            problems.append(
                f"blocks_per_stage has {len(self.blocks_per_stage)} entries, stage_strides has {n_stages}"
            )
        if any(s not in (1, 2) for s in self.stage_strides):
            problems.append(f"stage_strides must be 1 or 2, got {self.stage_strides}")
        if any(b < 1 for b in self.blocks_per_stage):
            problems.append(f"blocks_per_stage must be >= 1, got {self.blocks_per_stage}")
        if any(c < 1 for c in self.stage_channels):
            problems.append(f"stage_channels must be positive, got {self.stage_channels}")
        if self.expansion_factor < 1:
            problems.append(f"expansion_factor must be >= 1, got {self.expansion_factor}")
        if not self.pyramid_scales or any(s < 1 for s in self.pyramid_scales):
            problems.append(f"pyramid_scales must be positive, got {self.pyramid_scales}")
        if len(self.head_widths) != len(self.head_dropout):
            problems.append(
                f"head_widths ({len(self.head_widths)}) and head_dropout ({len(self.head_dropout)}) "
                f"must have the same length"
            )
        if any(not 0.0 <= r < 1.0 for r in self.head_dropout):
            problems.append(f"head_dropout rates must be in [0, 1), got {self.head_dropout}")
        if self.input_size < 1:
            problems.append(f"input_size must be >= 1, got {self.input_size}")
        if self.activation not in ("relu", "relu6", "none"):
            problems.append(f"activation must be relu, relu6 or none, got {self.activation!r}")
        if problems:
            raise ConfigError("Invalid ModelConfig:\n  - " + "\n  - ".join(problems))
        return self

    @property
    def last_channels(self) -> int:
        return self.stage_channels[-1]

    @property
    def head_input_width(self) -> int:
        """Pyramid: C * sum(s^2); GAP: C."""
        if self.use_pyramid:
            return self.last_channels * sum(s * s for s in self.pyramid_scales)
        return self.last_channels


# === Optimization ===

@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    decay_bn_and_bias: bool = False
    clip_max_norm: float = 1.0
    scheduler_factor: float = 0.5
    scheduler_patience: int = 10
    scheduler_min_lr: float = 0.0
    scheduler_cooldown: int = 0
    early_stop_patience: int = 20
    seed: int = 0
    precision: str = "f32"
    augment: bool = True

    def validate(self) -> "TrainConfig":
        problems = []
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            problems.append(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            problems.append(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append(f"betas must be in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.clip_max_norm <= 0:
            problems.append(f"clip_max_norm must be > 0, got {self.clip_max_norm}")
        if not 0 < self.scheduler_factor < 1:
            problems.append(f"scheduler_factor must be in (0, 1), got {self.scheduler_factor}")
        if self.scheduler_patience < 1 or self.early_stop_patience < 1:
            problems.append("scheduler_patience and early_stop_patience must be >= 1")
        if self.precision not in ("f32", "f64"):
            problems.append(f"precision must be f32 or f64, got {self.precision!r}")
        if problems:
            raise ConfigError("Invalid TrainConfig:\n  - " + "\n  - ".join(problems))
        return self


# === Data ===

@dataclass
class AugmentConfig:
    """Training-time augmentation; jitter ranges are multiplicative factors."""

    resize_to: int = 256
    crop_to: int = 224
    hflip_prob: float = 0.5
    brightness: Tuple[float, float] = (0.8, 1.2)
    contrast: Tuple[float, float] = (0.8, 1.2)
    saturation: Tuple[float, float] = (0.8, 1.2)
    hue: float = 0.05  # max shift as a fraction of the hue circle
    max_rotation_deg: float = 10.0

    def validate(self) -> "AugmentConfig":
        problems = []
        if self.crop_to > self.resize_to:
            problems.append(f"crop_to ({self.crop_to}) must be <= resize_to ({self.resize_to})")
        if not 0.0 <= self.hflip_prob <= 1.0:
            problems.append(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")
        for name in ("brightness", "contrast", "saturation"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                problems.append(f"{name} range must satisfy 0 <= lo <= hi, got ({lo}, {hi})")
        if not 0.0 <= self.hue <= 0.5:
            problems.append(f"hue must be in [0, 0.5], got {self.hue}")
        if self.max_rotation_deg < 0:
            problems.append(f"max_rotation_deg must be >= 0, got {self.max_rotation_deg}")
        if problems:
            raise ConfigError("Invalid AugmentConfig:\n  - " + "\n  - ".join(problems))
        return self


@dataclass
class DataConfig:
    image_dir: Optional[str] = None
    labels_csv: Optional[str] = None
    split_dir: Optional[str] = None
    fold: Optional[int] = None
    val_fraction: float = 0.2

    def validate(self) -> "DataConfig":
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        return self


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: Optional[str] = None

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.train.validate()
        self.augment.validate()
        self.data.validate()
        return self


IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class NormStats:
    """Train-split score range (for min-max scaling) plus image normalization statistics."""

    train_min: float
    train_max: float
    image_mean: Tuple[float, float, float] = IMAGENET_MEAN
    image_std: Tuple[float, float, float] = IMAGENET_STD

    def validate(self) -> "NormStats":
        if not self.train_max > self.train_min:
            raise DataError(
                f"Degenerate score range: train_max ({self.train_max}) must exceed "
                f"train_min ({self.train_min})"
            )
        return self


@dataclass
class Sample:
    """
    One labelled image.

    image is [3, H, W] in [0, 1] before normalization; score_norm is set once
    the train-split NormStats are known.
    """

    filename: str
    image: np.ndarray
    score_raw: float
    score_norm: Optional[float] = None


# === Records ===

class EpochRecord(TypedDict):
    """One history row (persisted as CSV epoch,train_loss,val_loss,lr)."""

    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class EvalReport:
    """
    Metrics on the original 1-5 scale.

    pc is None when the correlation is undefined (zero variance in a series).
    """

    mae: float
    rmse: float
    pc: Optional[float]
    n: int
    scale: str = "1-5"
