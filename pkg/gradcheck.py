# gradcheck.py

"""
Finite-difference gradient checks.

For a random subsample of entries in every parameter tensor (and the input),
compares the analytic gradient from backward() with the central difference

    (L(theta + h) - L(theta - h)) / 2h

using the relative error |a - n| / max(|a|, |n|, floor). Everything runs in
float64; dropout masks are reseeded identically before each evaluation and
BatchNorm stays in train mode so its batch-statistics backward is covered.
"""

import copy
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from config_run import model_config_from_dict, preset_document
from errors import ConfigError
from mamba_block import MambaBlock, MambaBlockConfig
from model import FeaturePyramid, build_model, make_variant
from nn.layers import (
    AdaptiveAvgPool2d,
    BatchNorm2d,
    Conv2d,
    Dropout,
    Linear,
    MaxPool2d,
    Module,
    ReLU6,
    Sigmoid,
)
from nn.tensor import Rng, Tensor
from optim import mse_loss
from state import ModelConfig

DEFAULT_EPS = 1e-5
DEFAULT_TOLERANCE = 1e-4
DEFAULT_FLOOR = 1e-5
GRADCHECK_PRESETS = ("tiny", "block", "layers")


@dataclass
class GradcheckResult:
    """Max relative error per group (parameter tensor name, or "input")."""

    errors: "OrderedDict[str, float]" = field(default_factory=OrderedDict)
    tolerance: float = DEFAULT_TOLERANCE

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def relative_error(analytic: float, numeric: float, floor: float = DEFAULT_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _pick(rng: Rng, size: int, count: int) -> np.ndarray:
    if size <= count:
        return np.arange(size)
    return np.sort(rng.permutation(size)[:count])


def _check_tensor(data: Tensor, analytic: Tensor, loss_fn: Callable[[], float], idx: np.ndarray,
                  eps: float, floor: float) -> float:
    flat = data.reshape(-1)
    grad = analytic.reshape(-1)
    worst = 0.0
    for i in idx:
        original = flat[i]
        flat[i] = original + eps
        plus = loss_fn()
        flat[i] = original - eps
        minus = loss_fn()
        flat[i] = original
        numeric = (plus - minus) / (2.0 * eps)
        worst = max(worst, relative_error(float(grad[i]), numeric, floor))
    return worst


def _reseed_dropout(module: Module, seed: int) -> None:
    root = Rng(seed).derive("gradcheck", "dropout")
    for k, layer in enumerate(m for m in module.modules() if isinstance(m, Dropout)):
        layer.reseed(root.derive(k))


def check_module(module: Module, x: Tensor, seed: int = 0, eps: float = DEFAULT_EPS,
                 samples_per_tensor: int = 5, floor: float = DEFAULT_FLOOR,
                 check_input: bool = True, tolerance: float = DEFAULT_TOLERANCE) -> GradcheckResult:
    """
    Gradient check of a single module under the loss L = sum(module(x) * R)
    for a fixed random projection R.
    """
    rng = Rng(seed).derive("gradcheck", "module")
    x = np.array(x, dtype=np.float64)
    module.train()
    _reseed_dropout(module, seed)
    y = module(x)
    projection = rng.derive("projection").normal_tensor(y.shape, precision="f64")

    def loss_fn() -> float:
        _reseed_dropout(module, seed)
        return float(np.sum(module(x) * projection))

    module.zero_grad()
    _reseed_dropout(module, seed)
    module(x)
    dx = module.backward(projection)

    result = GradcheckResult(tolerance=tolerance)
    for k, (name, p) in enumerate(module.named_parameters()):
        grad = p.grad.copy()
        result.errors[name] = _check_tensor(p.data, grad, loss_fn, _pick(rng.derive("param", k), p.size,
                                            samples_per_tensor), eps, floor)
    if check_input:
        result.errors["input"] = _check_tensor(x, dx, loss_fn, _pick(rng.derive("input"), x.size,
                                               samples_per_tensor), eps, floor)
    return result


def gradcheck(model_config: ModelConfig, seed: int = 0, eps: float = DEFAULT_EPS, batch_size: int = 2,
              samples_per_tensor: int = 5, floor: float = DEFAULT_FLOOR,
              tolerance: float = DEFAULT_TOLERANCE) -> GradcheckResult:
    """
    Checks the whole model under the total MSE loss against random targets in (0, 1).

    Returns:
        GradcheckResult with the max relative error per parameter tensor
    """
    rng = Rng(seed)
    model = build_model(copy.deepcopy(model_config), rng.derive("init"), precision="f64")
    size = model_config.input_size
    x = rng.derive("input").normal_tensor((batch_size, 3, size, size), precision="f64")
    targets = rng.derive("targets").uniform_tensor((batch_size,), 0.1, 0.9, precision="f64")
    model.train()

    def loss_fn() -> float:
        _reseed_dropout(model, seed)
        return mse_loss(model.forward(x), targets)[0]

    model.zero_grad()
    _reseed_dropout(model, seed)
    _, grad = mse_loss(model.forward(x), targets)
    model.backward(grad)

    result = GradcheckResult(tolerance=tolerance)
    pick_rng = rng.derive("gradcheck", "pick")
    for k, (name, p) in enumerate(model.named_parameters()):
        analytic = p.grad.copy()
        result.errors[name] = _check_tensor(p.data, analytic, loss_fn,
                                            _pick(pick_rng.derive(k), p.size, samples_per_tensor), eps, floor)
    return result


# === Presets ===

def gradcheck_model_config() -> ModelConfig:
    return model_config_from_dict(preset_document("gradcheck").get("model", {}))


def layer_cases(seed: int) -> List[Tuple[str, Module, Tuple[int, ...]]]:
    rng = Rng(seed).derive("gradcheck", "layers")
    return [
        ("conv2d", Conv2d(3, 4, 3, rng.derive("conv"), stride=2, padding=1, precision="f64"), (2, 3, 7, 7)),
        ("conv7x7_stem", Conv2d(3, 4, 7, rng.derive("stem"), stride=2, padding=3, precision="f64"), (2, 3, 9, 9)),
        ("depthwise", Conv2d(4, 4, 3, rng.derive("dw"), stride=1, padding=1, groups=4, precision="f64"),
         (2, 4, 5, 5)),
        ("pointwise", Conv2d(4, 6, 1, rng.derive("pw"), precision="f64"), (2, 4, 3, 3)),
        ("batchnorm", BatchNorm2d(3, precision="f64"), (3, 3, 4, 4)),
        ("maxpool", MaxPool2d(3, 2, 1), (2, 2, 7, 7)),
        ("adaptive_pool", AdaptiveAvgPool2d(4, 4), (2, 2, 7, 7)),
        ("pyramid", FeaturePyramid([1, 2, 4]), (2, 3, 7, 7)),
        ("linear", Linear(6, 3, rng.derive("linear"), precision="f64"), (4, 6)),
        ("sigmoid", Sigmoid(), (3, 5)),
        ("relu6", ReLU6(), (3, 5)),
        ("dropout", Dropout(0.3, rng.derive("dropout")), (3, 5)),
    ]


def block_cases(seed: int) -> List[Tuple[str, Module, Tuple[int, ...]]]:
    rng = Rng(seed).derive("gradcheck", "block")
    return [
        ("gated_residual", MambaBlock(MambaBlockConfig(4, 4, 1, 2, use_gate=True), rng.derive(0), "f64"),
         (2, 4, 6, 6)),
        ("gated_stride2", MambaBlock(MambaBlockConfig(4, 8, 2, 2, use_gate=True), rng.derive(1), "f64"),
         (2, 4, 6, 6)),
        ("baseline_residual", MambaBlock(MambaBlockConfig(4, 4, 1, 2, use_gate=False), rng.derive(2), "f64"),
         (2, 4, 6, 6)),
    ]


def run_preset(name: str, seed: int = 0, eps: float = DEFAULT_EPS,
               tolerance: float = DEFAULT_TOLERANCE) -> "OrderedDict[str, GradcheckResult]":
    """
    Named gradient-check suites.

    tiny    full model (variant D) and baseline (variant A) at the gradcheck preset size
    block   MambaBlock with/without gate, with/without residual
    layers  each primitive layer on its own

    Raises:
        ConfigError: Unknown preset name
    """
    results: "OrderedDict[str, GradcheckResult]" = OrderedDict()
    if name == "tiny":
        base = gradcheck_model_config()
        for label in ("D", "A"):
            results[f"variant_{label}"] = gradcheck(make_variant(base, label), seed, eps, tolerance=tolerance)
    elif name in ("block", "layers"):
        cases = block_cases(seed) if name == "block" else layer_cases(seed)
        input_rng = Rng(seed).derive("gradcheck", "inputs")
        for k, (case, module, shape) in enumerate(cases):
            x = input_rng.derive(k).normal_tensor(shape, precision="f64")
            results[case] = check_module(module, x, seed, eps, tolerance=tolerance)
    else:
        raise ConfigError(f"Unknown gradcheck preset {name!r}; expected one of {', '.join(GRADCHECK_PRESETS)}")
    return results


def flatten_results(results: Dict[str, GradcheckResult]) -> "OrderedDict[str, float]":
    flat: "OrderedDict[str, float]" = OrderedDict()
    for case, result in results.items():
        for name, err in result.errors.items():
            flat[f"{case}/{name}"] = err
    return flat


def worst_error(results: Dict[str, GradcheckResult]) -> Optional[float]:
    flat = flatten_results(results)
    return max(flat.values()) if flat else None
