# tests/test_mamba_block.py

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from errors import ShapeError
from mamba_block import MambaBlock, MambaBlockConfig
from nn.tensor import Rng


def _block(precision="f64", **overrides):
    cfg = MambaBlockConfig(**{"in_channels": 8, "out_channels": 8, "expansion_factor": 2, **overrides})
    return MambaBlock(cfg, Rng(0), precision)


@pytest.mark.parametrize(
    "in_channels,out_channels,stride,residual",
    [(8, 8, 1, True), (8, 8, 2, False), (4, 8, 1, False), (8, 4, 2, False)],
)
def test_residual_only_for_stride_one_and_equal_widths(in_channels, out_channels, stride, residual):
    block = _block(in_channels=in_channels, out_channels=out_channels, stride=stride)
    assert block.has_residual is residual


def test_output_shapes(rng):
    x = rng.normal_tensor((2, 8, 8, 8), precision="f64")
    assert _block()(x).shape == (2, 8, 8, 8)
    assert _block(out_channels=16, stride=2)(x).shape == (2, 16, 4, 4)


def test_gate_is_strictly_inside_unit_interval_and_shrinks_features(rng):
    block = _block()
    block(rng.normal_tensor((2, 8, 6, 6), precision="f64"))
    gate = block.last_gate
    assert gate.shape == (2, 16, 6, 6)
    assert np.all(gate > 0.0) and np.all(gate < 1.0)
    v = block._tape["v"]
    assert np.all(np.abs(v * gate) <= np.abs(v))
    assert 0.0 < block.gate_mean() < 1.0


def test_identity_when_projection_is_zero(rng):
    block = _block(use_batchnorm=False)
    block.project.weight.data[...] = 0.0
    x = rng.normal_tensor((1, 8, 5, 5), precision="f64")
    assert_array_equal(block(x), x)


def test_gate_parameter_count():
    gated = _block()
    assert gated.gate_parameter_count() == 16 * 9 + 16
    plain = _block(use_gate=False)
    assert plain.gate_parameter_count() == 0
    assert plain.gate_mean() is None
    total = lambda b: sum(p.size for p in b.parameters())
    assert total(gated) - total(plain) == gated.gate_parameter_count()


def test_ungated_block_has_no_gate_modules(rng):
    block = _block(use_gate=False)
    block(rng.normal_tensor((1, 8, 4, 4), precision="f64"))
    assert block.gate_conv is None and block.last_gate is None
    assert not any("gate" in name for name, _ in block.named_parameters())


def test_backward_returns_input_shaped_gradient(rng):
    block = _block(out_channels=16, stride=2)
    x = rng.normal_tensor((2, 8, 6, 6), precision="f64")
    out = block(x)
    dx = block.backward(np.ones_like(out))
    assert dx.shape == x.shape
    assert np.any(block.gate_conv.weight.grad != 0.0)


def test_invalid_geometry():
    with pytest.raises(ShapeError):
        _block(stride=3)
    with pytest.raises(ShapeError):
        _block()(np.zeros((1, 4, 4, 4)))


def test_saturated_open_gate_matches_the_ungated_block(rng):
    x = rng.normal_tensor((2, 8, 6, 6), precision="f64")
    gated = _block(gate_bias_init=20.0)
    plain = _block(use_gate=False)
    assert_allclose(gated(x), plain(x), atol=1e-3)
    assert gated.gate_mean() > 0.999


def test_closed_gate_passes_only_the_residual_gradient(rng):
    block = _block(use_batchnorm=False, gate_bias_init=-40.0)
    assert block.has_residual
    x = rng.normal_tensor((2, 8, 5, 5), precision="f64")
    dy = rng.normal_tensor(block(x).shape, precision="f64")
    dx = block.backward(dy)
    assert_allclose(dx, dy, rtol=0.0, atol=1e-12)
    assert_allclose(block.gate_conv.weight.grad, 0.0, atol=1e-12)
    assert_allclose(block.gate_conv.bias.grad, 0.0, atol=1e-12)
