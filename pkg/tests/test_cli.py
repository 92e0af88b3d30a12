# tests/test_cli.py

import json

import pandas as pd
import pytest

import main
from data.dataset import scores
from monitoring.writer import find_run_logs
from reporter import parse_key_values, read_history_csv


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    for name in ("MAMBA_CNN_OUTPUT_DIR", "MAMBA_CNN_LOG_DIR", "MAMBA_CNN_TRACE_STEPS"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def micro_config_file(tmp_path, micro_config):
    doc = {
        "model": {
            "stage_channels": micro_config.stage_channels,
            "stage_strides": micro_config.stage_strides,
            "blocks_per_stage": micro_config.blocks_per_stage,
            "expansion_factor": micro_config.expansion_factor,
            "pyramid_scales": micro_config.pyramid_scales,
            "head_widths": micro_config.head_widths,
            "head_dropout": micro_config.head_dropout,
            "input_size": micro_config.input_size,
        },
        "train": {"epochs": 2, "batch_size": 4, "lr": 0.003, "precision": "f64", "augment": False},
    }
    path = tmp_path / "micro.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path


@pytest.fixture
def trained_run(tmp_path, micro_config_file):
    out = tmp_path / "run"
    code = main.main(["train", "--config", str(micro_config_file), "--synthetic", "12",
                      "--seed", "3", "--out", str(out)])
    assert code == 0
    return out


def test_synth_is_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        assert main.main(["synth", "--n", "5", "--size", "32", "--seed", "9", "--out", str(tmp_path / name)]) == 0
    values = parse_key_values(capsys.readouterr().out)
    assert values["manifest"].endswith("manifest.json")
    for name in ("manifest.json", "labels.csv", "images.mtns"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_writes_run_directory(trained_run, capsys):
    for name in ("best.ckpt", "last.ckpt", "history.csv", "report.txt", "config.json"):
        assert (trained_run / name).is_file(), name
    assert len(read_history_csv(trained_run / "history.csv")) == 2
    report = parse_key_values((trained_run / "report.txt").read_text(encoding="utf-8"))
    assert set(report) == {"mae", "rmse", "pc", "n", "scale"}
    assert report["scale"] == "1-5"
    logs = find_run_logs(trained_run / "run_logs", "train")
    assert len(logs) == 1
    log = json.loads(logs[0].read_text(encoding="utf-8"))
    assert log["run_metadata"]["status"] == "completed"
    assert log["summary"]["epochs_run"] == 2


def test_train_resume_continues_history(tmp_path, trained_run, micro_config_file):
    out = tmp_path / "resumed"
    code = main.main(["train", "--config", str(micro_config_file), "--synthetic", "12", "--seed", "3",
                      "--epochs", "3", "--resume", str(trained_run / "last.ckpt"), "--out", str(out)])
    assert code == 0
    assert [row["epoch"] for row in read_history_csv(out / "history.csv")] == [1, 2, 3]


def test_eval_prints_metric_lines(trained_run, monkeypatch, capsys):
    monkeypatch.setattr(main, "predict_scores", lambda model, samples, *args, **kwargs: scores(samples))
    capsys.readouterr()
    code = main.main(["eval", "--checkpoint", str(trained_run / "best.ckpt"), "--synthetic", "6", "--seed", "4"])
    assert code == 0
    values = parse_key_values(capsys.readouterr().out)
    assert values["mae"] == "0.000000"
    assert values["rmse"] == "0.000000"
    assert values["pc"] == "1.000000"
    assert values["n"] == "6"


def test_predict_scores_one_image(tmp_path, trained_run, capsys):
    assert main.main(["synth", "--n", "2", "--size", "32", "--seed", "1", "--ppm",
                      "--out", str(tmp_path / "faces")]) == 0
    capsys.readouterr()
    code = main.main(["predict", "--checkpoint", str(trained_run / "best.ckpt"),
                      "--image", str(tmp_path / "faces" / "synth_00000.ppm")])
    assert code == 0
    values = parse_key_values(capsys.readouterr().out)
    assert 1.0 <= float(values["score"]) <= 5.0
    gates = {k: float(v) for k, v in values.items() if k.startswith("gate.")}
    assert sorted(gates) == ["gate.stage1.block1", "gate.stage2.block1"]
    assert all(0.0 < g < 1.0 for g in gates.values())


def test_gradcheck_command(capsys):
    assert main.main(["gradcheck", "--preset", "layers"]) == 0
    assert "max_rel_err" in parse_key_values(capsys.readouterr().out)


def test_gradcheck_fails_under_an_impossible_tolerance(capsys):
    assert main.main(["gradcheck", "--preset", "layers", "--tolerance", "0"]) == 3
    assert "[ERROR] Gradient check failed" in capsys.readouterr().out


def test_crossval_reports_the_mean(tmp_path, micro_config_file, capsys):
    code = main.main(["crossval", "--config", str(micro_config_file), "--synthetic", "12", "--epochs", "1",
                      "--make-folds", "3", "--split-dir", str(tmp_path / "splits"), "--out", str(tmp_path / "cv")])
    assert code == 0
    values = parse_key_values(capsys.readouterr().out)
    assert values["folds"] == "3"
    assert float(values["mean.mae"]) >= 0.0
    assert sorted(p.name for p in (tmp_path / "splits").glob("fold*.txt")) == ["fold1.txt", "fold2.txt", "fold3.txt"]


def test_missing_labels_exit_with_data_error(tmp_path, capsys):
    code = main.main(["train", "--data", str(tmp_path), "--labels", str(tmp_path / "absent.csv"),
                      "--out", str(tmp_path / "out")])
    assert code == 2
    assert "DataError" in capsys.readouterr().out


def test_unknown_variant_exits_with_config_error(tmp_path, capsys):
    code = main.main(["ablate", "--variants", "A,E", "--synthetic", "4", "--out", str(tmp_path)])
    assert code == 1
    assert "Unknown variant" in capsys.readouterr().out


def test_ablate_prints_the_table_and_writes_csv(tmp_path, capsys):
    out = tmp_path / "ablation"
    code = main.main(["ablate", "--preset", "tiny", "--synthetic", "10", "--epochs", "1",
                      "--variants", "A,D", "--out", str(out)])
    assert code == 0
    values = parse_key_values(capsys.readouterr().out)
    for label in ("A", "D"):
        assert float(values[f"variant_{label}.mae"]) >= 0.0
        assert f"variant_{label}.pc" in values
    frame = pd.read_csv(out / "ablation.csv")
    assert list(frame["variant"]) == ["A", "D"]


def test_data_source_is_required(tmp_path, capsys):
    assert main.main(["train", "--preset", "tiny", "--out", str(tmp_path)]) == 1
    assert "exactly one data source" in capsys.readouterr().out
    assert main.main(["train", "--preset", "tiny", "--synthetic", "4", "--synthetic-manifest", "x",
                      "--out", str(tmp_path)]) == 1


def test_missing_checkpoint_exit_code(tmp_path):
    assert main.main(["predict", "--checkpoint", str(tmp_path / "none.ckpt"), "--image", "x.ppm"]) == 1
