# optim.py

"""
Optimization machinery for the training loop: MSE loss, AdamW with decoupled
weight decay, global-norm gradient clipping, ReduceLROnPlateau scheduling and
early stopping with a best-weights snapshot.

Every stateful object exposes state_dict() / load_state_dict() so checkpoints
can resume a run exactly.
"""

from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np

from errors import ConfigError, ShapeError
from nn.layers import Module, Parameter
from nn.tensor import Tensor, global_l2_norm


# === Loss ===

def mse_loss(pred: Tensor, target: Tensor) -> Tuple[float, Tensor]:
    """
    Mean squared error and its gradient w.r.t. pred.

    Returns:
        (loss, grad): loss accumulated in float64; grad = 2 (pred - target) / N
            in pred's dtype

    Example:
        >>> mse_loss(np.array([0.0, 1.0]), np.array([1.0, 1.0]))[0]
        0.5
    """
    pred = np.asarray(pred).reshape(-1)
    target = np.asarray(target).reshape(-1)
    if pred.size == 0:
        raise ShapeError("mse_loss needs at least one prediction")
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss length mismatch: pred {pred.shape[0]} vs target {target.shape[0]}")
    diff64 = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.mean(diff64 * diff64))
    grad = (2.0 * diff64 / pred.size).astype(pred.dtype if pred.dtype.kind == "f" else np.float64)
    return loss, grad


# === AdamW ===

@dataclass
class AdamWConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_bn_and_bias: bool = False

    def validate(self) -> "AdamWConfig":
        if self.lr <= 0:
            raise ConfigError(f"AdamW lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"AdamW weight_decay must be >= 0, got {self.weight_decay}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"AdamW betas must be in [0, 1), got ({self.beta1}, {self.beta2})")
        return self


class AdamW:
    """
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta

    The decay term uses theta from before the step and is skipped for
    parameters flagged decay=False (BN affine, biases) unless
    decay_bn_and_bias is set. With weight_decay == 0 the update is exactly Adam.
    """

    def __init__(self, params: List[Parameter], config: Optional[AdamWConfig] = None):
        self.config = (config or AdamWConfig()).validate()
        self.params = list(params)
        self.lr = self.config.lr
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _decays(self, p: Parameter) -> bool:
        return self.config.weight_decay > 0 and (p.decay or self.config.decay_bn_and_bias)

    def step(self) -> None:
        cfg = self.config
        self.t += 1
        bias1 = 1.0 - cfg.beta1 ** self.t
        bias2 = 1.0 - cfg.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad.shape != p.data.shape:
                raise ShapeError(f"Gradient shape {p.grad.shape} does not match parameter {p.data.shape}")
            g = p.grad
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            m_hat = m / bias1
            v_hat = v / bias2
            decay = self.lr * cfg.weight_decay * p.data if self._decays(p) else None
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.data.dtype, copy=False)
            if decay is not None:
                p.data -= decay.astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> dict:
        return {"t": self.t, "lr": self.lr, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}

    def load_state_dict(self, state: dict) -> None:
        if len(state["m"]) != len(self.params) or len(state["v"]) != len(self.params):
            raise ShapeError(
                f"Optimizer state holds {len(state['m'])} moment tensors, model has {len(self.params)} parameters"
            )
        for i, p in enumerate(self.params):
            if state["m"][i].shape != p.data.shape or state["v"][i].shape != p.data.shape:
                raise ShapeError(f"Optimizer moment {i} shape mismatch with parameter {p.data.shape}")
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.m = [np.array(m, dtype=p.data.dtype) for m, p in zip(state["m"], self.params)]
        self.v = [np.array(v, dtype=p.data.dtype) for v, p in zip(state["v"], self.params)]


# === Clipping ===

def clip_grad_norm(grads: Iterable[Union[Parameter, Tensor]], max_norm: float = 1.0) -> float:
    """
    Rescales gradients in place so their global L2 norm is at most max_norm.

    Args:
        grads: Parameters (their .grad is clipped) or raw gradient arrays
        max_norm: Positive threshold

    Returns:
        float: The scale applied (1.0 when the norm was already within bounds)
    """
    if max_norm <= 0:
        raise ConfigError(f"clip max_norm must be > 0, got {max_norm}")
    arrays = [g.grad if isinstance(g, Parameter) else g for g in grads]
    if not arrays:
        return 1.0
    norm = global_l2_norm(arrays)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for g in arrays:
        g *= g.dtype.type(scale)
    return scale


# === Scheduler ===

class PlateauScheduler:
    """
    ReduceLROnPlateau in "min" mode with a zero threshold.

    A strictly lower val loss is an improvement; after `patience` consecutive
    non-improving epochs lr is multiplied by factor (floored at min_lr) and
    the wait counter resets. Cooldown epochs after a reduction do not count.
    """

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 10,
                 min_lr: float = 0.0, cooldown: int = 0):
        if not 0 < factor < 1:
            raise ConfigError(f"Scheduler factor must be in (0, 1), got {factor}")
        if patience < 1:
            raise ConfigError(f"Scheduler patience must be >= 1, got {patience}")
        self.lr = float(lr)
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.cooldown = cooldown
        self.best_loss = float("inf")
        self.wait = 0
        self.cooldown_counter = 0
        self.num_reductions = 0

    def step(self, val_loss: float) -> float:
        """Returns the lr to use for the next epoch."""
        if val_loss < self.best_loss:
            self.best_loss = float(val_loss)
            self.wait = 0
        else:
            self.wait += 1

        if self.cooldown_counter > 0:
            self.cooldown_counter -= 1
            self.wait = 0

        if self.wait >= self.patience:
            new_lr = max(self.lr * self.factor, self.min_lr)
            if new_lr < self.lr:
                self.lr = new_lr
                self.num_reductions += 1
            self.cooldown_counter = self.cooldown
            self.wait = 0
        return self.lr

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "best_loss": self.best_loss,
            "wait": self.wait,
            "cooldown_counter": self.cooldown_counter,
            "num_reductions": self.num_reductions,
        }

    def load_state_dict(self, state: dict) -> None:
        self.lr = float(state["lr"])
        self.best_loss = float(state["best_loss"])
        self.wait = int(state["wait"])
        self.cooldown_counter = int(state["cooldown_counter"])
        self.num_reductions = int(state["num_reductions"])


# === Early stopping ===

class EarlyStopper:
    """
    Tracks the best validation loss and keeps a copy of the model state at
    that epoch. update() returns True once `patience` consecutive epochs have
    failed to improve strictly.
    """

    def __init__(self, patience: int = 20):
        if patience < 1:
            raise ConfigError(f"Early-stopping patience must be >= 1, got {patience}")
        self.patience = patience
        self.best_val_loss = float("inf")
        self.counter = 0
        self.best_epoch: Optional[int] = None
        self.snapshot: Optional["OrderedDict[str, Tensor]"] = None

    def update(self, val_loss: float, model: Module, epoch: Optional[int] = None) -> bool:
        if val_loss < self.best_val_loss:
            self.best_val_loss = float(val_loss)
            self.counter = 0
            self.best_epoch = epoch
            self.snapshot = model.state_dict()
            return False
        self.counter += 1
        return self.counter >= self.patience

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.patience

    def restore_best(self, model: Module) -> bool:
        """Loads the snapshot into model; returns False when no snapshot exists."""
        if self.snapshot is None:
            return False
        model.load_state_dict(self.snapshot)
        return True

    def state_dict(self) -> dict:
        return {
            "best_val_loss": self.best_val_loss,
            "counter": self.counter,
            "best_epoch": self.best_epoch,
            "snapshot": None if self.snapshot is None
            else OrderedDict((k, v.copy()) for k, v in self.snapshot.items()),
        }

    def load_state_dict(self, state: dict) -> None:
        self.best_val_loss = float(state["best_val_loss"])
        self.counter = int(state["counter"])
        self.best_epoch = state.get("best_epoch")
        snapshot = state.get("snapshot")
        self.snapshot = None if snapshot is None else OrderedDict(snapshot)


def adamw_config_from(train_config) -> AdamWConfig:
    """AdamW settings from a TrainConfig."""
    return AdamWConfig(
        lr=train_config.lr,
        weight_decay=train_config.weight_decay,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        eps=train_config.adam_eps,
        decay_bn_and_bias=train_config.decay_bn_and_bias,
    )
