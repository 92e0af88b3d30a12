# tests/test_pipeline.py

import dataclasses

import pytest

from config_run import load_run_config
from data.synth import synth_dataset
from errors import ConfigError, DataError
from pipeline import CrossvalOutcome, parse_variants, run_ablation
from state import EvalReport, RunConfig


@pytest.fixture
def micro_run(micro_config, micro_train_config):
    return RunConfig(model=micro_config, train=dataclasses.replace(micro_train_config, epochs=1))


def test_parse_variants_keeps_order_and_drops_duplicates():
    assert parse_variants(" d, a ,D,,b") == ["D", "A", "B"]
    with pytest.raises(ConfigError, match="Unknown variant"):
        parse_variants("A,E")
    with pytest.raises(ConfigError):
        parse_variants(" , ")


def test_crossval_mean_skips_undefined_pc():
    outcome = CrossvalOutcome(folds=[(1, EvalReport(mae=0.2, rmse=0.4, pc=0.8, n=5)),
                                     (2, EvalReport(mae=0.4, rmse=0.6, pc=None, n=5))])
    assert outcome.mean() == pytest.approx({"mae": 0.3, "rmse": 0.5, "pc": 0.8})


def test_ablation_rows_follow_the_variant_flags(tmp_path, micro_run, synth_samples):
    rows = run_ablation(micro_run, ["D", "A"], synth_samples, out_dir=tmp_path, verbose=False)
    assert [row["variant"] for row in rows] == ["D", "A"]
    flags = {row["variant"]: (row["use_gate"], row["use_pyramid"]) for row in rows}
    assert flags == {"A": (False, False), "D": (True, True)}
    params = {row["variant"]: row["parameters"] for row in rows}
    assert params["D"] > params["A"]
    for row in rows:
        assert row["report"].n == 2
        assert (tmp_path / f"variant_{row['variant']}" / "best.ckpt").is_file()


def test_ablation_is_repeatable(micro_run, synth_samples):
    first = run_ablation(micro_run, ["A"], synth_samples, verbose=False)[0]["report"]
    again = run_ablation(micro_run, ["A"], synth_samples, verbose=False)[0]["report"]
    assert first == again


def test_ablation_needs_samples(micro_run):
    with pytest.raises(DataError):
        run_ablation(micro_run, ["A"], [], verbose=False)


@pytest.mark.slow
def test_tiny_model_fits_synthetic_faces_and_full_variant_beats_baseline():
    config = load_run_config(preset="tiny")
    config.train.seed = 0
    samples = synth_dataset(500, config.model.input_size, seed=0).samples
    rows = run_ablation(config, ["A", "D"], samples, verbose=False)
    reports = {row["variant"]: row["report"] for row in rows}
    full, baseline = reports["D"], reports["A"]
    assert full.n == 100
    assert full.pc is not None and full.pc >= 0.85
    assert full.mae <= 0.35
    assert baseline.pc is not None
    assert full.pc >= baseline.pc
