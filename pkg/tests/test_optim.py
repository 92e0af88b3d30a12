# tests/test_optim.py

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from errors import ConfigError, ShapeError
from nn.layers import Linear, Parameter
from nn.tensor import Rng
from optim import AdamW, AdamWConfig, EarlyStopper, PlateauScheduler, clip_grad_norm, mse_loss


def test_mse_loss_value_and_gradient():
    loss, grad = mse_loss(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
    assert loss == 0.5
    assert_array_equal(grad, [-1.0, 0.0])
    with pytest.raises(ShapeError):
        mse_loss(np.zeros(2), np.zeros(3))


def test_zero_gradient_step_applies_only_decoupled_decay():
    theta = np.array([1.0, -2.0, 0.5])
    p = Parameter(theta.copy())
    opt = AdamW([p], AdamWConfig(lr=0.1, weight_decay=0.01))
    opt.step()
    assert_array_equal(p.data, theta - (0.1 * 0.01) * theta)


def test_no_decay_parameters_are_untouched_by_decay():
    p = Parameter(np.array([3.0]), decay=False)
    AdamW([p], AdamWConfig(lr=0.1, weight_decay=0.5)).step()
    assert_array_equal(p.data, [3.0])
    q = Parameter(np.array([3.0]), decay=False)
    AdamW([q], AdamWConfig(lr=0.1, weight_decay=0.5, decay_bn_and_bias=True)).step()
    assert q.data[0] < 3.0


def test_weight_decay_is_decoupled_from_the_adam_update():
    theta = np.array([0.7, -1.3])
    grad = np.array([0.2, -0.05])
    plain, decayed = Parameter(theta.copy()), Parameter(theta.copy())
    plain.grad[...] = grad
    decayed.grad[...] = grad
    AdamW([plain], AdamWConfig(lr=0.01, weight_decay=0.0)).step()
    AdamW([decayed], AdamWConfig(lr=0.01, weight_decay=0.1)).step()
    assert_allclose(plain.data - decayed.data, 0.01 * 0.1 * theta, rtol=1e-10)


def test_first_adam_step_moves_by_learning_rate():
    p = Parameter(np.array([0.0, 0.0]))
    p.grad[...] = [4.0, -0.5]
    AdamW([p], AdamWConfig(lr=0.001, weight_decay=0.0)).step()
    assert_allclose(p.data, [-0.001, 0.001], rtol=1e-6)


def test_optimizer_state_roundtrip_continues_identically():
    rng = Rng(0)
    a = Parameter(rng.normal_tensor((4,), precision="f64"))
    b = Parameter(a.data.copy())
    opt_a = AdamW([a], AdamWConfig(lr=0.01))
    for _ in range(3):
        a.grad[...] = a.data
        opt_a.step()
    b.data[...] = a.data
    opt_b = AdamW([b], AdamWConfig(lr=0.01))
    opt_b.load_state_dict(opt_a.state_dict())
    for p, opt in ((a, opt_a), (b, opt_b)):
        p.grad[...] = p.data
        opt.step()
    assert_array_equal(a.data, b.data)


def test_clip_to_unit_norm():
    g = np.array([3.0, 4.0])
    scale = clip_grad_norm([g], 1.0)
    assert scale == pytest.approx(0.2)
    assert_allclose(g, [0.6, 0.8])


def test_clip_leaves_small_gradients_and_spans_tensors():
    small = np.array([0.3, 0.4])
    assert clip_grad_norm([small], 1.0) == 1.0
    assert_array_equal(small, [0.3, 0.4])
    p, q = Parameter(np.zeros(1)), Parameter(np.zeros(1))
    p.grad[...] = 6.0
    q.grad[...] = 8.0
    clip_grad_norm([p, q], 5.0)
    assert_allclose([p.grad[0], q.grad[0]], [3.0, 4.0])
    with pytest.raises(ConfigError):
        clip_grad_norm([small], 0.0)


def test_plateau_scheduler_halves_after_patience():
    sched = PlateauScheduler(lr=1e-3, factor=0.5, patience=10)
    assert sched.step(1.0) == 1e-3
    for _ in range(9):
        assert sched.step(1.0) == 1e-3
    assert sched.step(1.0) == 5e-4
    assert sched.num_reductions == 1
    for _ in range(9):
        sched.step(2.0)
    assert sched.step(2.0) == 2.5e-4


def test_plateau_scheduler_improvement_resets_wait_and_min_lr_floor():
    sched = PlateauScheduler(lr=1.0, factor=0.5, patience=2, min_lr=0.4)
    sched.step(1.0)
    sched.step(1.0)
    sched.step(0.5)
    assert sched.lr == 1.0
    sched.step(0.5)
    sched.step(0.5)
    assert sched.lr == 0.5
    sched.step(0.5)
    sched.step(0.5)
    assert sched.lr == 0.4


def test_early_stopping_after_patience_and_restores_snapshot():
    model = Linear(2, 1, Rng(0), precision="f64")
    best = model.weight.data.copy()
    stopper = EarlyStopper(patience=20)
    assert stopper.update(1.0, model, epoch=1) is False
    model.weight.data[...] = 9.0
    for epoch in range(2, 21):
        assert stopper.update(1.0, model, epoch=epoch) is False
    assert stopper.update(1.5, model, epoch=21) is True
    assert stopper.should_stop and stopper.best_epoch == 1
    assert stopper.restore_best(model)
    assert_array_equal(model.weight.data, best)


def test_early_stopper_state_roundtrip():
    model = Linear(2, 1, Rng(0))
    stopper = EarlyStopper(patience=3)
    stopper.update(0.5, model, epoch=4)
    stopper.update(0.6, model, epoch=5)
    restored = EarlyStopper(patience=3)
    restored.load_state_dict(stopper.state_dict())
    assert (restored.best_val_loss, restored.counter, restored.best_epoch) == (0.5, 1, 4)
    assert list(restored.snapshot) == list(model.state_dict())
    assert EarlyStopper(patience=3).restore_best(model) is False
