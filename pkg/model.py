# model.py

"""
Mamba-CNN assembly:

    stem (conv 7x7 s2 p3 -> BN -> act -> maxpool 3 s2 p1)
      -> block stages (MambaBlocks, or baseline inverted residual blocks)
      -> feature pyramid (adaptive average pools at each scale, concatenated)
         or global average pooling
      -> regression head (linear -> act -> dropout)* -> linear -> sigmoid

Parameter enumeration order (checkpoint compatibility):
    stem.*, stages.<i>.layers.<j>.*, pyramid (no params), head.layers.*
"""

import copy
from collections import OrderedDict
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import ConfigError, ShapeError
from mamba_block import MambaBlock, MambaBlockConfig
from nn.functional import output_extent
from nn.layers import (
    AdaptiveAvgPool2d,
    BatchNorm2d,
    Conv2d,
    Dropout,
    Identity,
    Linear,
    MaxPool2d,
    Module,
    Sequential,
    Sigmoid,
    make_activation,
)
from nn.tensor import Rng, Tensor, require_rank
from state import ModelConfig

VARIANTS = ("A", "B", "C", "D")

VARIANT_FLAGS = {
    # label: (use_gate, use_pyramid)
    "A": (False, False),
    "B": (False, True),
    "C": (True, False),
    "D": (True, True),
}

VARIANT_NAMES = {
    "A": "Baseline CNN",
    "B": "+ Pyramid",
    "C": "+ SSM Gate",
    "D": "Full Model",
}


class FeaturePyramid(Module):
    """Adaptive average pools at each scale, flattened (channel-major) and concatenated in scale order."""

    def __init__(self, scales: List[int]):
        super().__init__()
        self.scales = list(scales)
        self.pools = [AdaptiveAvgPool2d(s) for s in self.scales]

    def output_width(self, channels: int) -> int:
        return channels * sum(s * s for s in self.scales)

    def forward(self, x: Tensor) -> Tensor:
        require_rank(x, 4)
        h, w = x.shape[2], x.shape[3]
        if max(self.scales) > min(h, w):
            raise ShapeError(
                f"Pyramid scale {max(self.scales)} exceeds feature map extent {h}x{w}"
            )
        parts = [pool(x).reshape(x.shape[0], -1) for pool in self.pools]
        self._record(shapes=[(x.shape[0], x.shape[1], s, s) for s in self.scales])
        return np.concatenate(parts, axis=1)

    def backward(self, dy: Tensor) -> Tensor:
        shapes = self._consume()["shapes"]
        dx = None
        offset = 0
        for pool, shape in zip(self.pools, shapes):
            width = shape[1] * shape[2] * shape[3]
            part = dy[:, offset:offset + width].reshape(shape)
            offset += width
            grad = pool.backward(part)
            dx = grad if dx is None else dx + grad
        return dx


def feature_pyramid(features: Tensor, scales: List[int]) -> Tensor:
    """Functional form: [N, C, H, W] -> [N, C * sum(s^2)]."""
    return FeaturePyramid(scales).forward(features)


def stage_spatial_sizes(config: ModelConfig) -> List[int]:
    """Spatial extent after the stem and after every block stage."""
    size = output_extent(config.input_size, 7, 2, 3)
    size = output_extent(size, 3, 2, 1)
    sizes = [size]
    for stride in config.stage_strides:
        size = output_extent(size, 3, stride, 1)
        sizes.append(size)
    return sizes


class MambaCNN(Module):
    def __init__(self, config: ModelConfig, rng: Rng, precision: str = "f32"):
        super().__init__()
        self.config = config
        self.precision = precision
        use_bn = config.use_batchnorm
        stem_width = config.stage_channels[0]

        self.stem = Sequential(
            Conv2d(3, stem_width, 7, rng.derive("stem"), stride=2, padding=3,
                   bias=not use_bn, precision=precision),
            BatchNorm2d(stem_width, config.bn_momentum, config.bn_eps, precision) if use_bn else Identity(),
            make_activation(config.activation),
            MaxPool2d(3, 2, 1),
        )

        self.stages: List[Sequential] = []
        for i, stride in enumerate(config.stage_strides):
            blocks = []
            for j in range(config.blocks_per_stage[i]):
                block_cfg = MambaBlockConfig(
                    in_channels=config.stage_channels[i] if j == 0 else config.stage_channels[i + 1],
                    out_channels=config.stage_channels[i + 1],
                    stride=stride if j == 0 else 1,
                    expansion_factor=config.expansion_factor,
                    use_gate=config.use_gate,
                    use_batchnorm=use_bn,
                    activation=config.activation,
                    bn_momentum=config.bn_momentum,
                    bn_eps=config.bn_eps,
                    gate_bias_init=config.gate_bias_init,
                )
                blocks.append(MambaBlock(block_cfg, rng.derive("stage", i, "block", j), precision))
            self.stages.append(Sequential(*blocks))

        self.pyramid = FeaturePyramid(config.pyramid_scales if config.use_pyramid else [1])

        head_layers: List[Module] = []
        width = config.head_input_width
        for k, (hidden, rate) in enumerate(zip(config.head_widths, config.head_dropout)):
            head_layers.append(Linear(width, hidden, rng.derive("head", k), precision=precision))
            head_layers.append(make_activation(config.activation))
            head_layers.append(Dropout(rate, rng.derive("dropout", k)))
            width = hidden
        head_layers.append(Linear(width, 1, rng.derive("head", "out"), precision=precision))
        self.head = Sequential(*head_layers)
        self.output_act = Sigmoid()

    # --- forward / backward ---

    def check_input(self, x: Tensor) -> None:
        require_rank(x, 4)
        size = self.config.input_size
        if x.shape[1] != 3 or x.shape[2] != size or x.shape[3] != size:
            raise ShapeError(f"Model expects input [N, 3, {size}, {size}], got {tuple(x.shape)}")

    def forward_features(self, x: Tensor) -> List[Tensor]:
        """Stem output followed by every stage output."""
        self.check_input(x)
        x = x.astype(self.stem.layers[0].weight.data.dtype, copy=False)
        outputs = [self.stem(x)]
        for stage in self.stages:
            outputs.append(stage(outputs[-1]))
        return outputs

    def forward(self, x: Tensor) -> Tensor:
        features = self.forward_features(x)[-1]
        pooled = self.pyramid(features)
        logits = self.head(pooled)
        return self.output_act(logits).reshape(-1)

    def backward(self, dy: Tensor) -> Tensor:
        """dy: [N] upstream gradient w.r.t. the scores; returns the input gradient."""
        d = self.output_act.backward(dy.reshape(-1, 1).astype(self.head.layers[-1].weight.data.dtype))
        d = self.head.backward(d)
        d = self.pyramid.backward(d)
        for stage in reversed(self.stages):
            d = stage.backward(d)
        return self.stem.backward(d)

    # --- utilities ---

    def blocks(self) -> List[MambaBlock]:
        return [block for stage in self.stages for block in stage.layers]

    def dropout_layers(self) -> List[Dropout]:
        return [m for m in self.modules() if isinstance(m, Dropout)]

    def seed_dropout(self, rng: Rng) -> None:
        """Reseeds every dropout layer from rng (one derived stream per layer)."""
        for k, layer in enumerate(self.dropout_layers()):
            layer.reseed(rng.derive("dropout", k))

    def gate_statistics(self) -> Dict[str, Optional[float]]:
        """Mean gate value per block from the most recent forward pass."""
        return {f"stage{i + 1}.block{j + 1}": block.gate_mean()
                for i, stage in enumerate(self.stages)
                for j, block in enumerate(stage.layers)}


Model = MambaCNN


def build_model(config: ModelConfig, rng: Rng, precision: str = "f32") -> MambaCNN:
    """
    Validates the config and builds an initialized model; deterministic given the rng seed.

    Raises:
        ConfigError: Inconsistent stage lists, or a pyramid scale larger than
            the final feature map for the configured input size
    """
    config.validate()
    sizes = stage_spatial_sizes(config)
    if min(sizes) < 1:
        raise ConfigError(f"input_size {config.input_size} collapses to zero through the stages: {sizes}")
    scales = config.pyramid_scales if config.use_pyramid else [1]
    if max(scales) > sizes[-1]:
        raise ConfigError(
            f"Final feature map is {sizes[-1]}x{sizes[-1]} but the pyramid needs {max(scales)}x{max(scales)}.\n"
            f"Increase input_size or reduce pyramid_scales."
        )
    return MambaCNN(config, rng, precision)


def make_variant(config: ModelConfig, variant: str) -> ModelConfig:
    """
    Ablation variants: A baseline (no gate, GAP), B + pyramid, C + gate, D full model.

    Raises:
        ConfigError: Unknown variant label
    """
    label = variant.strip().upper()
    if label not in VARIANT_FLAGS:
        raise ConfigError(f"Unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    use_gate, use_pyramid = VARIANT_FLAGS[label]
    out = copy.deepcopy(config)
    out.use_gate = use_gate
    out.use_pyramid = use_pyramid
    return out


def count_parameters(model: MambaCNN) -> Tuple[int, "OrderedDict[str, int]"]:
    """Total scalar parameter count plus a per-module breakdown (stem, stageK, head)."""
    breakdown = OrderedDict()
    breakdown["stem"] = sum(p.size for p in model.stem.parameters())
    for i, stage in enumerate(model.stages):
        breakdown[f"stage{i + 1}"] = sum(p.size for p in stage.parameters())
    breakdown["head"] = sum(p.size for p in model.head.parameters())
    return int(sum(breakdown.values())), breakdown


def gate_parameter_total(model: MambaCNN) -> int:
    return sum(block.gate_parameter_count() for block in model.blocks())
