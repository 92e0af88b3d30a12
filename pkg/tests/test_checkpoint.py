# tests/test_checkpoint.py

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from errors import CheckpointError
from model import build_model
from nn.tensor import Rng
from optim import AdamW, EarlyStopper, PlateauScheduler
from state import AugmentConfig, NormStats, TrainConfig
from training import make_checkpoint


@pytest.fixture
def trained_pieces(micro_config, rng):
    model = build_model(micro_config, Rng(0), "f64")
    x = rng.normal_tensor((2, 3, 32, 32), precision="f64")
    optimizer = AdamW(model.parameters())
    out = model.forward(x)
    model.backward(np.ones_like(out))
    optimizer.step()
    stopper = EarlyStopper(5)
    stopper.update(0.25, model, epoch=1)
    scheduler = PlateauScheduler(1e-4)
    scheduler.step(0.25)
    history = [{"epoch": 1, "train_loss": 0.5, "val_loss": 0.25, "lr": 1e-4}]
    ckpt = make_checkpoint(model, NormStats(1.2, 4.8), TrainConfig(seed=3), 1, "last", AugmentConfig(),
                           history, optimizer, scheduler, stopper)
    return model, ckpt


def test_save_load_save_is_byte_identical(tmp_path, trained_pieces):
    _, ckpt = trained_pieces
    first = save_checkpoint(tmp_path / "a.ckpt", ckpt)
    loaded = load_checkpoint(first)
    second = save_checkpoint(tmp_path / "b.ckpt", loaded)
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes()[:5] == MAGIC


def test_loaded_checkpoint_restores_the_model(tmp_path, trained_pieces, micro_config, rng):
    model, ckpt = trained_pieces
    save_checkpoint(tmp_path / "m.ckpt", ckpt)
    loaded = load_checkpoint(tmp_path / "m.ckpt")
    assert loaded.model_config == micro_config
    assert loaded.norm_stats == NormStats(1.2, 4.8)
    assert loaded.train_config.seed == 3 and loaded.kind == "last" and loaded.epoch == 1
    assert loaded.history == ckpt.history

    rebuilt = build_model(loaded.model_config, Rng(42), loaded.precision)
    rebuilt.load_state_dict(loaded.model_state)
    x = rng.normal_tensor((3, 3, 32, 32), precision="f64")
    assert_array_equal(rebuilt.eval().forward(x), model.eval().forward(x))

    for a, b in zip(loaded.optimizer["m"], ckpt.optimizer["m"]):
        assert_array_equal(a, b)
    assert loaded.optimizer["t"] == 1
    assert list(loaded.stopper["snapshot"]) == list(ckpt.stopper["snapshot"])
    assert loaded.scheduler == ckpt.scheduler


def test_best_checkpoint_without_optimizer_state(trained_pieces):
    model, _ = trained_pieces
    ckpt = make_checkpoint(model, NormStats(1.0, 5.0), TrainConfig(), 7, "best")
    decoded = decode_checkpoint(encode_checkpoint(ckpt))
    assert decoded.optimizer is None and decoded.stopper is None and decoded.scheduler is None
    assert decoded.epoch == 7


@pytest.mark.parametrize("cut", [3, 40, -1])
def test_truncated_files_are_rejected(tmp_path, trained_pieces, cut):
    data = encode_checkpoint(trained_pieces[1])
    path = tmp_path / "cut.ckpt"
    path.write_bytes(data[:cut])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_corruption_is_detected(trained_pieces):
    data = bytearray(encode_checkpoint(trained_pieces[1]))
    data[-10] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        decode_checkpoint(bytes(data))
    data = bytearray(encode_checkpoint(trained_pieces[1]))
    data[:5] = b"XXXXX"
    with pytest.raises(CheckpointError, match="magic"):
        decode_checkpoint(bytes(data))
    data = bytearray(encode_checkpoint(trained_pieces[1]))
    data[5] = 9
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(bytes(data))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "nothing.ckpt")
