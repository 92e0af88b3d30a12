# tests/conftest.py

import os
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from data.synth import synth_dataset  # noqa: E402
from monitoring.core import MonitoringContext  # noqa: E402
from nn.tensor import Rng  # noqa: E402
from state import ModelConfig, TrainConfig  # noqa: E402

SLOW_ENV = "MAMBA_CNN_SLOW_TESTS"


def pytest_configure(config):
    config.addinivalue_line("markers", f"slow: minutes-long acceptance runs (set {SLOW_ENV}=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv(SLOW_ENV, "").strip() in ("1", "true", "yes"):
        return
    skip = pytest.mark.skip(reason=f"slow acceptance test; set {SLOW_ENV}=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return Rng(0)


@pytest.fixture
def micro_config():
    """32x32 input, 2 block stages, no dropout: fast enough for many-epoch tests."""
    return ModelConfig(
        stage_channels=[4, 8, 8],
        stage_strides=[1, 2],
        blocks_per_stage=[1, 1],
        expansion_factor=2,
        pyramid_scales=[1, 2],
        head_widths=[8],
        head_dropout=[0.0],
        input_size=32,
    )


@pytest.fixture
def micro_train_config():
    return TrainConfig(epochs=3, batch_size=4, lr=3e-3, seed=11, precision="f64", augment=False)


@pytest.fixture
def synth_samples():
    return synth_dataset(12, 32, seed=3).samples


@pytest.fixture
def monitor():
    ctx = MonitoringContext("test", write_log=False, trace_steps=True).start()
    yield ctx
    ctx.finalize()
