# tests/test_gradcheck.py

import numpy as np
import pytest

import nn.functional
from errors import ConfigError
from gradcheck import (
    DEFAULT_TOLERANCE,
    block_cases,
    check_module,
    flatten_results,
    gradcheck,
    relative_error,
    run_preset,
    worst_error,
)
from mamba_block import MambaBlock
from nn.layers import Conv2d
from nn.tensor import Rng


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(2.0, 1.0) == 0.5
    assert relative_error(1e-7, 0.0) == pytest.approx(1e-2)


@pytest.mark.parametrize("preset", ["layers", "block"])
def test_presets_pass(preset):
    results = run_preset(preset, seed=0)
    assert results
    for case, result in results.items():
        assert result.passed, f"{case}: {dict(result.errors)}"
    assert worst_error(results) < DEFAULT_TOLERANCE


def test_every_block_tensor_is_checked():
    results = run_preset("block", seed=1)
    gated = results["gated_residual"].errors
    assert "input" in gated
    assert any(name.startswith("gate_conv.") for name in gated)
    assert not any(name.startswith("gate_conv.") for name in results["baseline_residual"].errors)
    assert len(flatten_results(results)) == sum(len(r.errors) for r in results.values())


def test_micro_model_passes(micro_config):
    result = gradcheck(micro_config, seed=2)
    assert result.passed, dict(result.errors)
    assert "stem.layers.0.weight" in result.errors


def test_tiny_preset_checks_full_and_baseline_variants():
    results = run_preset("tiny", seed=0)
    assert list(results) == ["variant_D", "variant_A"]
    for result in results.values():
        assert result.passed, dict(result.errors)


def test_detects_a_corrupted_conv_weight_gradient(monkeypatch):
    original = nn.functional.conv2d_backward

    def faulty(dy, cache):
        dx, dw, db = original(dy, cache)
        return dx, dw * 1.1, db

    monkeypatch.setattr(nn.functional, "conv2d_backward", faulty)
    conv = Conv2d(3, 4, 3, Rng(0), padding=1, precision="f64")
    result = check_module(conv, Rng(1).normal_tensor((2, 3, 5, 5), precision="f64"))
    assert result.errors["weight"] > 1e-2
    assert not result.passed


def test_detects_a_corrupted_block_input_gradient(monkeypatch):
    original = MambaBlock.backward
    monkeypatch.setattr(MambaBlock, "backward", lambda self, dy: original(self, dy) * 0.9)
    _, block, shape = block_cases(0)[0]
    result = check_module(block, Rng(3).normal_tensor(shape, precision="f64"))
    assert result.errors["input"] > 1e-2
    assert not result.passed


def test_unknown_preset():
    with pytest.raises(ConfigError):
        run_preset("huge")


def test_input_is_not_mutated():
    x = Rng(4).normal_tensor((2, 3, 5, 5), precision="f64")
    before = x.copy()
    check_module(Conv2d(3, 2, 3, Rng(0), precision="f64"), x)
    np.testing.assert_array_equal(x, before)
