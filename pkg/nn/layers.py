# nn/layers.py

"""
Layer objects with recorded forward state and exact backward rules.

Each Module keeps the activations its backward rule needs from the most
recent forward() call (the "tape"). backward(upstream) returns the gradient
w.r.t. the input and ACCUMULATES parameter gradients into Parameter.grad.
Calling backward() with no recorded forward raises
BackwardBeforeForwardError; each recorded forward is consumed by exactly one
backward.

Parameter enumeration order is the attribute registration order, recursively
(named_parameters / named_buffers), and is what checkpoints rely on.
"""

import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from errors import BackwardBeforeForwardError, ShapeError
from nn import functional as F
from nn.tensor import Rng, Tensor, require_rank, resolve_dtype


class Parameter:
    """
    A trainable tensor with an accumulated gradient buffer.

    Attributes:
        data: Parameter values (updated in place by the optimizer)
        grad: Gradient accumulator, same shape/dtype as data
        decay: Whether decoupled weight decay applies (False for BN affine and biases)
    """

    def __init__(self, data: Tensor, decay: bool = True):
        self.data = np.ascontiguousarray(data)
        self.grad = np.zeros_like(self.data)
        self.decay = decay

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter(shape={self.shape}, dtype={self.data.dtype}, decay={self.decay})"


class Module:
    """Base class: parameter/buffer registry, train/eval mode and tape handling."""

    def __init__(self):
        self.training = True
        self._tape: Optional[dict] = None

    # --- registry ---

    def _children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def _own_buffers(self) -> Dict[str, Tensor]:
        return {}

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in self._own_buffers().items():
            yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            yield from child.modules()

    # --- state ---

    def state_dict(self) -> "OrderedDict[str, Tensor]":
        """Copies of every parameter and buffer, in enumeration order."""
        state = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, b in self.named_buffers():
            state[name] = b.copy()
        return state

    def load_state_dict(self, state: Dict[str, Tensor]) -> None:
        params = dict(self.named_parameters())
        expected = list(params) + [name for name, _ in self.named_buffers()]
        missing = [name for name in expected if name not in state]
        unexpected = [name for name in state if name not in expected]
        if missing or unexpected:
            raise ShapeError(
                f"State mismatch. Missing: {missing[:5]} Unexpected: {unexpected[:5]}"
            )
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ShapeError(f"Shape mismatch for {name}: {state[name].shape} vs {p.data.shape}")
            p.data[...] = state[name]
        for module_prefix, module in self._prefixed_modules():
            module._load_buffers({k[len(module_prefix):]: v for k, v in state.items()
                                  if k.startswith(module_prefix) and "." not in k[len(module_prefix):]})

    def _prefixed_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children():
            yield from child._prefixed_modules(f"{prefix}{name}.")

    def _load_buffers(self, buffers: Dict[str, Tensor]) -> None:
        pass

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    # --- tape ---

    def _record(self, **entries) -> None:
        self._tape = entries

    def _consume(self) -> dict:
        if self._tape is None:
            raise BackwardBeforeForwardError(
                f"{type(self).__name__}.backward() called without a recorded forward pass"
            )
        tape, self._tape = self._tape, None
        return tape

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def backward(self, dy: Tensor) -> Tensor:
        raise NotImplementedError


def kaiming_uniform(shape: Tuple[int, ...], fan_in: int, rng: Rng, precision: str) -> Tensor:
    """Kaiming-uniform fan-in init, bound = sqrt(6 / fan_in) (ReLU gain)."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform_tensor(shape, -bound, bound, precision)


class Conv2d(Module):
    """
    Grouped 2-D convolution. groups == in_channels == out_channels gives a
    depthwise convolution with weight [C, 1, k, k].
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, rng: Rng,
                 stride: int = 1, padding: int = 0, groups: int = 1, bias: bool = True,
                 precision: str = "f32"):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ShapeError(
                f"Conv2d channels must be divisible by groups: in={in_channels}, "
                f"out={out_channels}, groups={groups}"
            )
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.groups = groups
        fan_in = (in_channels // groups) * kernel_size * kernel_size
        self.weight = Parameter(kaiming_uniform(
            (out_channels, in_channels // groups, kernel_size, kernel_size), fan_in, rng, precision))
        self.bias = Parameter(np.zeros(out_channels, dtype=resolve_dtype(precision)), decay=False) \
            if bias else None

    def forward(self, x: Tensor) -> Tensor:
        require_rank(x, 4)
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"Conv2d expects {self.in_channels} input channels, got {x.shape[1]}")
        bias = self.bias.data if self.bias is not None else None
        out, cache = F.conv2d_forward(x, self.weight.data, bias, self.stride, self.padding, self.groups)
        self._record(cache=cache)
        return out

    def backward(self, dy: Tensor) -> Tensor:
        cache = self._consume()["cache"]
        dx, dw, db = F.conv2d_backward(dy, cache)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx


class BatchNorm2d(Module):
    """
    Per-channel batch normalization over N x H x W.

    Train mode normalizes with the biased batch variance and updates
    running_mean / running_var (unbiased) with the given momentum. Eval mode
    normalizes with the running statistics and is a pure function.

    With init_running_stats=False the running statistics start out unset and
    an eval-mode forward before any train-mode batch raises ShapeError.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 precision: str = "f32", init_running_stats: bool = True):
        super().__init__()
        if eps <= 0:
            raise ShapeError(f"BatchNorm eps must be > 0, got {eps}")
        dtype = resolve_dtype(precision)
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype), decay=False)
        self.beta = Parameter(np.zeros(channels, dtype=dtype), decay=False)
        if init_running_stats:
            self.running_mean = np.zeros(channels, dtype=dtype)
            self.running_var = np.ones(channels, dtype=dtype)
        else:
            self.running_mean = None
            self.running_var = None

    def _own_buffers(self) -> Dict[str, Tensor]:
        if self.running_mean is None:
            return {}
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _load_buffers(self, buffers: Dict[str, Tensor]) -> None:
        if "running_mean" in buffers:
            self.running_mean = buffers["running_mean"].astype(self.gamma.data.dtype, copy=True)
            self.running_var = buffers["running_var"].astype(self.gamma.data.dtype, copy=True)

    def forward(self, x: Tensor) -> Tensor:
        require_rank(x, 4)
        if x.shape[1] != self.channels:
            raise ShapeError(f"BatchNorm2d expects {self.channels} channels, got {x.shape[1]}")
        gamma = self.gamma.data.reshape(1, -1, 1, 1)
        beta = self.beta.data.reshape(1, -1, 1, 1)
        if self.training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            count = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var * count / max(count - 1, 1)
            if self.running_mean is None:
                self.running_mean = mean.copy()
                self.running_var = unbiased.astype(x.dtype)
            else:
                m = self.momentum
                self.running_mean = ((1 - m) * self.running_mean + m * mean).astype(x.dtype)
                self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(x.dtype)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            x_hat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
            self._record(x_hat=x_hat, inv_std=inv_std, training=True)
        else:
            if self.running_mean is None:
                raise ShapeError(
                    "BatchNorm2d in eval mode has no running statistics yet.\n"
                    "Run at least one train-mode batch or load a checkpoint first."
                )
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            x_hat = (x - self.running_mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
            self._record(x_hat=x_hat, inv_std=inv_std, training=False)
        return (x_hat * gamma + beta).astype(x.dtype, copy=False)

    def backward(self, dy: Tensor) -> Tensor:
        tape = self._consume()
        x_hat, inv_std = tape["x_hat"], tape["inv_std"]
        self.gamma.grad += (dy * x_hat).sum(axis=(0, 2, 3))
        self.beta.grad += dy.sum(axis=(0, 2, 3))
        dx_hat = dy * self.gamma.data.reshape(1, -1, 1, 1)
        if not tape["training"]:
            return dx_hat * inv_std.reshape(1, -1, 1, 1)
        mean_dx_hat = dx_hat.mean(axis=(0, 2, 3), keepdims=True)
        mean_dx_hat_xhat = (dx_hat * x_hat).mean(axis=(0, 2, 3), keepdims=True)
        return (dx_hat - mean_dx_hat - x_hat * mean_dx_hat_xhat) * inv_std.reshape(1, -1, 1, 1)


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        mask = x > 0
        self._record(mask=mask)
        return np.where(mask, x, 0.0).astype(x.dtype, copy=False)

    def backward(self, dy: Tensor) -> Tensor:
        return np.where(self._consume()["mask"], dy, 0.0).astype(dy.dtype, copy=False)


class ReLU6(Module):
    def forward(self, x: Tensor) -> Tensor:
        mask = (x > 0) & (x < 6)
        self._record(mask=mask)
        return np.clip(x, 0.0, 6.0)

    def backward(self, dy: Tensor) -> Tensor:
        return np.where(self._consume()["mask"], dy, 0.0).astype(dy.dtype, copy=False)


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        self._record()
        return x

    def backward(self, dy: Tensor) -> Tensor:
        self._consume()
        return dy


ACTIVATIONS = {
    "relu": ReLU,
    "relu6": ReLU6,
    "none": Identity,
}


def make_activation(name: str) -> Module:
    """Hidden-layer nonlinearity by config name."""
    if name not in ACTIVATIONS:
        raise ShapeError(f"Unknown activation {name!r}; expected one of {', '.join(ACTIVATIONS)}")
    return ACTIVATIONS[name]()


class Sigmoid(Module):
    def forward(self, x: Tensor) -> Tensor:
        y = F.sigmoid(x)
        self._record(y=y)
        return y

    def backward(self, dy: Tensor) -> Tensor:
        y = self._consume()["y"]
        return dy * y * (1.0 - y)


class MaxPool2d(Module):
    def __init__(self, kernel_size: int, stride: int, padding: int = 0):
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        out, cache = F.maxpool2d_forward(x, self.kernel_size, self.stride, self.padding)
        self._record(cache=cache)
        return out

    def backward(self, dy: Tensor) -> Tensor:
        return F.maxpool2d_backward(dy, self._consume()["cache"])


class AdaptiveAvgPool2d(Module):
    def __init__(self, out_h: int, out_w: Optional[int] = None):
        super().__init__()
        self.out_h = out_h
        self.out_w = out_h if out_w is None else out_w

    def forward(self, x: Tensor) -> Tensor:
        out, cache = F.adaptive_avg_pool2d_forward(x, self.out_h, self.out_w)
        self._record(cache=cache)
        return out

    def backward(self, dy: Tensor) -> Tensor:
        return F.adaptive_avg_pool2d_backward(dy, self._consume()["cache"])


class Linear(Module):
    """out = x @ weight.T + bias, weight [Dout, Din]."""

    def __init__(self, in_features: int, out_features: int, rng: Rng, bias: bool = True,
                 precision: str = "f32"):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(kaiming_uniform((out_features, in_features), in_features, rng, precision))
        self.bias = Parameter(np.zeros(out_features, dtype=resolve_dtype(precision)), decay=False) \
            if bias else None

    def forward(self, x: Tensor) -> Tensor:
        require_rank(x, 2)
        if x.shape[1] != self.in_features:
            raise ShapeError(f"Linear expects {self.in_features} features, got {x.shape[1]}")
        out = x @ self.weight.data.T
        if self.bias is not None:
            out = out + self.bias.data
        self._record(x=x)
        return out

    def backward(self, dy: Tensor) -> Tensor:
        x = self._consume()["x"]
        self.weight.grad += dy.T @ x
        if self.bias is not None:
            self.bias.grad += dy.sum(axis=0)
        return dy @ self.weight.data


class Dropout(Module):
    """
    Inverted dropout: in train mode each element is zeroed with probability
    rate and survivors are scaled by 1 / (1 - rate); eval mode is identity.

    Masks are drawn from the layer's own Rng; reseed() replaces it so a
    caller can make masks a function of (run seed, epoch, batch).
    """

    def __init__(self, rate: float, rng: Rng):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ShapeError(f"Dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def reseed(self, rng: Rng) -> None:
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.rate == 0.0:
            self._record(mask=None)
            return x
        keep = self.rng.random(x.shape) >= self.rate
        mask = keep.astype(x.dtype) / (1.0 - self.rate)
        self._record(mask=mask)
        return x * mask

    def backward(self, dy: Tensor) -> Tensor:
        mask = self._consume()["mask"]
        return dy if mask is None else dy * mask


class Flatten(Module):
    def forward(self, x: Tensor) -> Tensor:
        self._record(shape=x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, dy: Tensor) -> Tensor:
        return dy.reshape(self._consume()["shape"])


class Sequential(Module):
    """Applies layers in order; backward runs them in reverse."""

    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def backward(self, dy: Tensor) -> Tensor:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy
