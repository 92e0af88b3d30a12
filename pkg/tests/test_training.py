# tests/test_training.py

import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_array_equal

import training
from checkpoint import load_checkpoint
from config_run import load_run_config
from data.dataset import attach_norm_scores, compute_norm_stats, split_train_val
from data.synth import synth_dataset
from errors import ConfigError, DataError, TrainingAbort
from model import build_model
from nn.tensor import Rng
from reporter import read_history_csv
from state import AugmentConfig
from training import BEST_CHECKPOINT, HISTORY_CSV, LAST_CHECKPOINT, evaluate_loss, train


def _split(samples, seed=0):
    train_set, val_set = split_train_val(samples, 0.25, seed)
    stats = compute_norm_stats(s.score_raw for s in train_set)
    attach_norm_scores(samples, stats)
    return train_set, val_set, stats


def _fresh(config, seed=11):
    return build_model(config, Rng(seed).derive("init"), "f64")


def _assert_same_state(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    assert list(sa) == list(sb)
    for key in sa:
        assert_array_equal(sa[key], sb[key], err_msg=key)


def test_validation_loss_does_not_depend_on_batch_size(micro_config, synth_samples):
    stats = _split(synth_samples)[2]
    model = _fresh(micro_config)
    model.forward(np.stack([s.image for s in synth_samples[:4]]).astype(np.float64))
    whole = evaluate_loss(model, synth_samples, batch_size=len(synth_samples), stats=stats, precision="f64")
    single = evaluate_loss(model, synth_samples, batch_size=1, stats=stats, precision="f64")
    odd = evaluate_loss(model, synth_samples, batch_size=5, stats=stats, precision="f64")
    assert single == pytest.approx(whole, rel=1e-10)
    assert odd == pytest.approx(whole, rel=1e-10)
    with pytest.raises(DataError):
        evaluate_loss(model, [], stats=stats)


def test_training_is_deterministic(micro_config, micro_train_config, synth_samples):
    train_set, val_set, stats = _split(synth_samples)
    first = train(_fresh(micro_config), train_set, val_set, micro_train_config, stats=stats, verbose=False)
    second = train(_fresh(micro_config), train_set, val_set, micro_train_config, stats=stats, verbose=False)
    assert first.history == second.history
    assert first.epochs_run == 3
    assert [row["epoch"] for row in first.history] == [1, 2, 3]
    assert first.history[0]["lr"] == micro_train_config.lr
    _assert_same_state(first.model, second.model)


def test_thread_workers_do_not_change_augmented_batches(micro_config, micro_train_config, synth_samples):
    train_set, val_set, stats = _split(synth_samples)
    cfg = dataclasses.replace(micro_train_config, epochs=1, augment=True)
    augment = AugmentConfig(resize_to=36, crop_to=32)
    inline = train(_fresh(micro_config), train_set, val_set, cfg, augment, stats, verbose=False)
    pooled = train(_fresh(micro_config), train_set, val_set, cfg, augment, stats, verbose=False, workers=3)
    assert inline.history == pooled.history
    _assert_same_state(inline.model, pooled.model)


def test_resume_replays_the_uninterrupted_run(tmp_path, micro_config, micro_train_config, synth_samples):
    train_set, val_set, stats = _split(synth_samples)
    full_cfg = dataclasses.replace(micro_train_config, epochs=4)
    full = train(_fresh(micro_config), train_set, val_set, full_cfg, stats=stats,
                 out_dir=tmp_path / "full", verbose=False)

    short_cfg = dataclasses.replace(micro_train_config, epochs=2)
    train(_fresh(micro_config), train_set, val_set, short_cfg, stats=stats,
          out_dir=tmp_path / "short", verbose=False)
    ckpt = load_checkpoint(tmp_path / "short" / LAST_CHECKPOINT)
    assert ckpt.kind == "last" and ckpt.epoch == 2
    resumed = train(_fresh(micro_config, seed=99), train_set, val_set, full_cfg, stats=stats,
                    out_dir=tmp_path / "resumed", resume=ckpt, verbose=False)

    assert resumed.history == full.history
    assert resumed.best_epoch == full.best_epoch
    _assert_same_state(resumed.model, full.model)
    assert (tmp_path / "resumed" / LAST_CHECKPOINT).read_bytes() == \
        (tmp_path / "full" / LAST_CHECKPOINT).read_bytes()


def test_resume_continues_the_checkpoint_streams(tmp_path, micro_config, micro_train_config, synth_samples, capsys):
    train_set, val_set, stats = _split(synth_samples)
    full_cfg = dataclasses.replace(micro_train_config, epochs=4)
    full = train(_fresh(micro_config), train_set, val_set, full_cfg, stats=stats, verbose=False)

    short_cfg = dataclasses.replace(micro_train_config, epochs=2)
    train(_fresh(micro_config), train_set, val_set, short_cfg, stats=stats,
          out_dir=tmp_path / "short", verbose=False)
    ckpt = load_checkpoint(tmp_path / "short" / LAST_CHECKPOINT)
    assert ckpt.rng_state == Rng(micro_train_config.seed).get_state()

    reseeded = dataclasses.replace(full_cfg, seed=99)
    resumed = train(_fresh(micro_config), train_set, val_set, reseeded, stats=stats,
                    out_dir=tmp_path / "resumed", resume=ckpt, verbose=False)
    assert "[WARN] Config seed 99 ignored on resume" in capsys.readouterr().out
    assert resumed.history == full.history
    assert load_checkpoint(tmp_path / "resumed" / LAST_CHECKPOINT).rng_state == ckpt.rng_state


def test_resume_rejects_best_checkpoint(tmp_path, micro_config, micro_train_config, synth_samples):
    train_set, val_set, stats = _split(synth_samples)
    cfg = dataclasses.replace(micro_train_config, epochs=1)
    train(_fresh(micro_config), train_set, val_set, cfg, stats=stats, out_dir=tmp_path, verbose=False)
    best = load_checkpoint(tmp_path / BEST_CHECKPOINT)
    with pytest.raises(ConfigError):
        train(_fresh(micro_config), train_set, val_set, cfg, stats=stats, resume=best, verbose=False)


def test_outputs_written(tmp_path, micro_config, micro_train_config, synth_samples):
    train_set, val_set, stats = _split(synth_samples)
    result = train(_fresh(micro_config), train_set, val_set, micro_train_config, stats=stats,
                   out_dir=tmp_path, verbose=False)
    for name in (LAST_CHECKPOINT, BEST_CHECKPOINT, HISTORY_CSV):
        assert (tmp_path / name).is_file()
    assert read_history_csv(tmp_path / HISTORY_CSV) == result.history
    best = load_checkpoint(tmp_path / BEST_CHECKPOINT)
    assert best.epoch == result.best_epoch
    assert best.norm_stats == stats
    assert result.best_val_loss == min(row["val_loss"] for row in result.history)


def test_step_order_and_clip_scale(monitor, micro_config, micro_train_config, synth_samples):
    train_set, val_set, stats = _split(synth_samples)
    cfg = dataclasses.replace(micro_train_config, epochs=1, batch_size=4, clip_max_norm=1e-6)
    train(_fresh(micro_config), train_set, val_set, cfg, stats=stats, verbose=False)
    steps = [e for e in monitor.events()
             if e["event_type"] in ("forward", "backward", "clip", "optimizer_step")]
    n_batches = 3
    assert [e["event_type"] for e in steps] == ["forward", "backward", "clip", "optimizer_step"] * n_batches
    scales = [e["scale"] for e in steps if e["event_type"] == "clip"]
    assert all(0.0 < s < 1.0 for s in scales)
    assert len(monitor.events("epoch_end")) == 1


def test_plateau_and_early_stop_from_validation_losses(monitor, monkeypatch, micro_config,
                                                      micro_train_config, synth_samples):
    train_set, val_set, stats = _split(synth_samples)
    monkeypatch.setattr(training, "evaluate_loss", lambda *args, **kwargs: 1.0)
    cfg = dataclasses.replace(micro_train_config, epochs=10, scheduler_patience=1, early_stop_patience=3)
    result = train(_fresh(micro_config), train_set, val_set, cfg, stats=stats, verbose=False)
    assert result.stopped_early and result.epochs_run == 4
    assert result.best_epoch == 1
    lr = cfg.lr
    assert [row["lr"] for row in result.history] == [lr, lr, lr * 0.5, lr * 0.25]
    assert len(monitor.events("lr_reduced")) == 3
    assert monitor.events("early_stop")[0]["best_epoch"] == 1


def test_non_finite_loss_aborts(monkeypatch, micro_config, micro_train_config, synth_samples):
    train_set, val_set, stats = _split(synth_samples)
    model = _fresh(micro_config)
    monkeypatch.setattr(model, "forward", lambda x: np.full(x.shape[0], np.nan))
    with pytest.raises(TrainingAbort) as info:
        train(model, train_set, val_set, micro_train_config, stats=stats, verbose=False)
    assert (info.value.epoch, info.value.batch_index) == (1, 0)
    assert info.value.exit_code == 3


def test_argument_validation(tmp_path, micro_config, micro_train_config, synth_samples):
    train_set, val_set, stats = _split(synth_samples)
    model = _fresh(micro_config)
    with pytest.raises(DataError):
        train(model, [], val_set, micro_train_config, stats=stats, verbose=False)
    with pytest.raises(DataError):
        train(model, train_set, [], micro_train_config, stats=stats, verbose=False)
    augmenting = dataclasses.replace(micro_train_config, augment=True)
    with pytest.raises(ConfigError):
        train(model, train_set, val_set, augmenting, AugmentConfig(resize_to=54, crop_to=48),
              stats=stats, verbose=False)
    with pytest.raises(ConfigError):
        train(model, train_set, val_set, micro_train_config, out_dir=tmp_path, verbose=False)


@pytest.mark.slow
def test_memorizes_eight_samples_with_the_tiny_model():
    config = load_run_config(preset="tiny")
    samples = synth_dataset(8, config.model.input_size, seed=8).samples
    stats = compute_norm_stats(s.score_raw for s in samples)
    attach_norm_scores(samples, stats)
    cfg = dataclasses.replace(config.train, epochs=500, batch_size=8, weight_decay=0.0,
                              early_stop_patience=500, augment=False, seed=0)
    model = build_model(config.model, Rng(cfg.seed).derive("init"), cfg.precision)
    result = train(model, samples, samples, cfg, stats=stats, verbose=False)
    assert result.epochs_run <= 500
    assert result.best_val_loss < 1e-3
