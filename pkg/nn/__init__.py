"""
Minimal NCHW deep-learning core: tensors, MTNS1 IO, kernels and layers.
"""

from .tensor import Rng, Tensor, elementwise, global_l2_norm, tensor_full
from .layers import (
    AdaptiveAvgPool2d,
    BatchNorm2d,
    Conv2d,
    Dropout,
    Flatten,
    Identity,
    Linear,
    MaxPool2d,
    Module,
    Parameter,
    ReLU,
    ReLU6,
    Sequential,
    Sigmoid,
    make_activation,
)

__all__ = [
    "Rng",
    "Tensor",
    "elementwise",
    "global_l2_norm",
    "tensor_full",
    "AdaptiveAvgPool2d",
    "BatchNorm2d",
    "Conv2d",
    "Dropout",
    "Flatten",
    "Identity",
    "Linear",
    "MaxPool2d",
    "Module",
    "Parameter",
    "ReLU",
    "ReLU6",
    "Sequential",
    "Sigmoid",
    "make_activation",
]
