# mamba_block.py

"""
MambaBlock: an inverted residual block with a parallel gating path.

    u    = act(bn(expand_1x1(x)))
    v    = act(bn(depthwise_3x3_stride(u)))
    gate = sigmoid(depthwise_3x3(v))          # gating path, stride 1, bias, no BN
    g    = v * gate                           # (g = v when use_gate is off)
    y    = bn(project_1x1(g))                 # linear bottleneck, no activation
    out  = y + x   only when stride == 1 and in_channels == out_channels

With use_gate=False the block is the standard inverted residual block used
as the ablation baseline.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from errors import ShapeError
from nn.layers import BatchNorm2d, Conv2d, Identity, Module, Sigmoid, make_activation
from nn.tensor import Rng, Tensor, require_rank


@dataclass
class MambaBlockConfig:
    in_channels: int
    out_channels: int
    stride: int = 1
    expansion_factor: int = 4
    use_gate: bool = True
    use_batchnorm: bool = True
    activation: str = "relu"
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    gate_bias_init: float = 0.0

    @property
    def hidden_channels(self) -> int:
        return self.in_channels * self.expansion_factor

    @property
    def has_residual(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels


class MambaBlock(Module):
    def __init__(self, config: MambaBlockConfig, rng: Rng, precision: str = "f32"):
        super().__init__()
        if config.stride not in (1, 2):
            raise ShapeError(f"MambaBlock stride must be 1 or 2, got {config.stride}")
        if config.in_channels < 1 or config.out_channels < 1 or config.expansion_factor < 1:
            raise ShapeError(f"Invalid MambaBlock widths: {config}")
        self.config = config
        hidden = config.hidden_channels
        use_bn = config.use_batchnorm

        def norm(channels: int) -> Module:
            if not use_bn:
                return Identity()
            return BatchNorm2d(channels, config.bn_momentum, config.bn_eps, precision)

        self.expand = Conv2d(config.in_channels, hidden, 1, rng.derive("expand"),
                             bias=not use_bn, precision=precision)
        self.bn_expand = norm(hidden)
        self.act_expand = make_activation(config.activation)

        self.depthwise = Conv2d(hidden, hidden, 3, rng.derive("depthwise"), stride=config.stride,
                                padding=1, groups=hidden, bias=not use_bn, precision=precision)
        self.bn_depthwise = norm(hidden)
        self.act_depthwise = make_activation(config.activation)

        if config.use_gate:
            self.gate_conv = Conv2d(hidden, hidden, 3, rng.derive("gate"), stride=1, padding=1,
                                    groups=hidden, bias=True, precision=precision)
            self.gate_conv.bias.data[...] = config.gate_bias_init
            self.gate_act = Sigmoid()
        else:
            self.gate_conv = None
            self.gate_act = None

        self.project = Conv2d(hidden, config.out_channels, 1, rng.derive("project"),
                              bias=not use_bn, precision=precision)
        self.bn_project = norm(config.out_channels)

        self.last_gate: Optional[Tensor] = None

    @property
    def has_residual(self) -> bool:
        return self.config.has_residual

    def forward(self, x: Tensor) -> Tensor:
        require_rank(x, 4)
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"MambaBlock expects {self.config.in_channels} input channels, got {x.shape[1]}"
            )
        u = self.act_expand(self.bn_expand(self.expand(x)))
        v = self.act_depthwise(self.bn_depthwise(self.depthwise(u)))
        if self.gate_conv is not None:
            gate = self.gate_act(self.gate_conv(v))
            g = v * gate
            self.last_gate = gate
        else:
            gate = None
            g = v
        y = self.bn_project(self.project(g))
        self._record(v=v, gate=gate)
        if self.has_residual:
            return y + x
        return y

    def backward(self, dy: Tensor) -> Tensor:
        tape = self._consume()
        dg = self.project.backward(self.bn_project.backward(dy))
        if self.gate_conv is not None:
            v, gate = tape["v"], tape["gate"]
            # product rule at g = v * gate
            dv = dg * gate
            dgate = dg * v
            dv = dv + self.gate_conv.backward(self.gate_act.backward(dgate))
        else:
            dv = dg
        du = self.depthwise.backward(self.bn_depthwise.backward(self.act_depthwise.backward(dv)))
        dx = self.expand.backward(self.bn_expand.backward(self.act_expand.backward(du)))
        if self.has_residual:
            dx = dx + dy
        return dx

    def gate_parameter_count(self) -> int:
        """9 * hidden weights + hidden biases when gated, else 0."""
        if self.gate_conv is None:
            return 0
        return int(sum(p.size for p in self.gate_conv.parameters()))

    def gate_mean(self) -> Optional[float]:
        if self.last_gate is None:
            return None
        return float(np.mean(self.last_gate))
