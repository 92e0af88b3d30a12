# main.py

"""
Mamba-CNN command line.

    python main.py train     --preset tiny --synthetic 500 --out runs/tiny
    python main.py eval      --checkpoint runs/tiny/best.ckpt --synthetic-manifest data/synth
    python main.py ablate    --preset tiny --variants A,B,C,D --synthetic 500
    python main.py gradcheck --preset tiny
    python main.py synth     --n 500 --size 48 --seed 7 --out data/synth
    python main.py predict   --checkpoint runs/tiny/best.ckpt --image face.ppm
    python main.py crossval  --preset tiny --data imgs/ --labels labels.csv --split-dir splits/

Exit codes: 0 ok, 1 usage/config/checkpoint, 2 data, 3 numeric abort.
"""

import argparse
import sys
import traceback
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from checkpoint import Checkpoint, load_checkpoint
from config_run import (
    env_log_dir,
    env_output_dir,
    env_trace_steps,
    load_env,
    load_run_config,
    save_run_config,
)
from data.dataset import attach_norm_scores, denormalize_score, load_dataset, scores
from data.ppm import load_image
from data.synth import load_synth, save_synth, synth_dataset
from data.transforms import transform_eval
from errors import ConfigError, MambaCnnError
from gradcheck import DEFAULT_TOLERANCE, GRADCHECK_PRESETS, flatten_results, run_preset
from metrics import predict_normalized, report_from_scores
from model import MambaCNN, build_model
from monitoring.core import MonitoringContext
from nn.tensor import Rng
from pipeline import (
    parse_variants,
    run_ablation,
    run_crossval,
    split_from_fold,
    split_with_stats,
    train_and_evaluate,
)
from presets import preset_names
from reporter import (
    eval_report_lines,
    format_ablation_table,
    format_eval_report,
    format_gradcheck_report,
    gate_statistics_lines,
    write_ablation_csv,
)
from split_manifest import make_folds, write_folds
from state import NormStats, RunConfig, Sample

REPORT_FILE = "report.txt"
CONFIG_FILE = "config.json"


# === Shared helpers ===

def resolve_config(args) -> RunConfig:
    config = load_run_config(getattr(args, "config", None), getattr(args, "preset", None))
    if getattr(args, "seed", None) is not None:
        config.train.seed = args.seed
    if getattr(args, "epochs", None) is not None:
        config.train.epochs = args.epochs
    if getattr(args, "data", None):
        config.data.image_dir = args.data
    if getattr(args, "labels", None):
        config.data.labels_csv = args.labels
    if getattr(args, "split_dir", None):
        config.data.split_dir = args.split_dir
    if getattr(args, "fold", None) is not None:
        config.data.fold = args.fold
    return config.validate()


def resolve_output_dir(args, config: RunConfig) -> Path:
    out = getattr(args, "out", None) or config.output_dir or env_output_dir()
    config.output_dir = str(out)
    return Path(out)


def load_samples(args, config: RunConfig, image_size: int) -> Tuple[List[Sample], str]:
    """
    Samples from exactly one source: --synthetic N, --synthetic-manifest PATH,
    or an image directory plus labels CSV.

    Raises:
        ConfigError: No source or more than one
    """
    synthetic = getattr(args, "synthetic", None)
    manifest = getattr(args, "synthetic_manifest", None)
    directory = config.data.image_dir is not None or config.data.labels_csv is not None
    chosen = sum([synthetic is not None, manifest is not None, directory])
    if chosen != 1:
        raise ConfigError(
            "Give exactly one data source:\n"
            "  --synthetic N | --synthetic-manifest PATH | --data DIR --labels CSV"
        )
    if synthetic is not None:
        dataset = synth_dataset(synthetic, image_size, config.train.seed)
        return dataset.samples, f"synthetic n={synthetic} seed={config.train.seed}"
    if manifest is not None:
        return load_synth(manifest).samples, f"synthetic manifest {manifest}"
    if config.data.image_dir is None or config.data.labels_csv is None:
        raise ConfigError("--data and --labels must be given together")
    samples, _ = load_dataset(config.data.image_dir, config.data.labels_csv)
    return samples, f"{config.data.labels_csv} ({config.data.image_dir})"


def model_from_checkpoint(ckpt: Checkpoint) -> MambaCNN:
    model = build_model(ckpt.model_config, Rng(0).derive("init"), ckpt.precision)
    model.load_state_dict(ckpt.model_state)
    return model.eval()


def predict_scores(model: MambaCNN, samples: Sequence[Sample], stats: NormStats,
                   batch_size: int = 32, precision: str = "f32") -> np.ndarray:
    """Denormalized 1-5 predictions in sample order."""
    return denormalize_score(predict_normalized(model, samples, batch_size, stats, precision), stats)


def write_report(out_dir: Path, title: str, report) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / REPORT_FILE).write_text("\n".join(eval_report_lines(report)) + "\n", encoding="utf-8")
    print(format_eval_report(report, title))


# === Commands ===

def cmd_train(args) -> int:
    config = resolve_config(args)
    out_dir = resolve_output_dir(args, config)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        if resume.train_config is None:
            raise ConfigError(f"{args.resume} carries no training config; cannot resume from it")
        epochs = config.train.epochs if args.epochs is not None else resume.train_config.epochs
        config.model = resume.model_config
        config.train = resume.train_config
        config.train.epochs = epochs
        if resume.augment_config is not None:
            config.augment = resume.augment_config

    if (config.data.split_dir is None) != (config.data.fold is None):
        raise ConfigError("--split-dir and --fold must be given together")

    monitor = MonitoringContext.get_instance()
    if monitor:
        monitor.record_config_snapshot("run_config", config)

    samples, source = load_samples(args, config, config.model.input_size)
    if config.data.split_dir is not None and config.data.fold is not None:
        train_set, val_set, stats = split_from_fold(samples, config.data.split_dir, config.data.fold)
    else:
        train_set, val_set, stats = split_with_stats(samples, config.data.val_fraction, config.train.seed)
    print(f"--- [Data] {source}: {len(train_set)} train / {len(val_set)} val ---")

    out_dir.mkdir(parents=True, exist_ok=True)
    save_run_config(out_dir / CONFIG_FILE, config)
    outcome = train_and_evaluate(config, train_set, val_set, stats, out_dir=out_dir, resume=resume)
    write_report(out_dir, "Validation split", outcome.report)
    if monitor:
        monitor.update_summary(best_epoch=outcome.result.best_epoch, epochs_run=outcome.result.epochs_run,
                               report=outcome.report)
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    config = resolve_config(args)
    samples, source = load_samples(args, config, ckpt.model_config.input_size)
    attach_norm_scores(samples, ckpt.norm_stats)
    model = model_from_checkpoint(ckpt)
    preds = predict_scores(model, samples, ckpt.norm_stats, args.batch_size, ckpt.precision)
    report = report_from_scores(scores(samples), preds, strict=False)
    print(format_eval_report(report, f"Evaluation on {source}"))
    return 0


def cmd_ablate(args) -> int:
    config = resolve_config(args)
    variants = parse_variants(args.variants)
    out_dir = Path(args.out) if args.out else None
    samples, source = load_samples(args, config, config.model.input_size)
    print(f"--- [Ablation] {source}; variants {','.join(variants)}; seed {config.train.seed} ---")
    rows = run_ablation(config, variants, samples, out_dir=out_dir, parallel=args.parallel)
    print(format_ablation_table(rows))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_ablation_csv(out_dir / "ablation.csv", rows)
    monitor = MonitoringContext.get_instance()
    if monitor:
        monitor.update_summary(variants=[{k: v for k, v in row.items()} for row in rows])
    return 0


def cmd_gradcheck(args) -> int:
    results = run_preset(args.preset, args.seed, args.eps, args.tolerance)
    flat = flatten_results(results)
    print(format_gradcheck_report(flat, args.tolerance))
    worst = max(flat.values()) if flat else 0.0
    print(f"max_rel_err={worst:.3e}")
    if worst >= args.tolerance:
        print(f"[ERROR] Gradient check failed: max relative error {worst:.3e} >= {args.tolerance:g}")
        return 3
    return 0


def cmd_synth(args) -> int:
    dataset = synth_dataset(args.n, args.size, args.seed)
    manifest = save_synth(dataset, args.out, ppm=args.ppm)
    print(f"--- [Synth] {args.n} samples at {args.size}x{args.size} (seed {args.seed}) ---")
    print(f"manifest={manifest}")
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    image = transform_eval(load_image(args.image), ckpt.model_config.input_size, ckpt.norm_stats)
    batch = image[np.newaxis].astype(np.float64 if ckpt.precision == "f64" else np.float32)
    score = float(denormalize_score(model.forward(batch).astype(np.float64), ckpt.norm_stats)[0])
    print(f"score={score:.6f}")
    print("\n".join(gate_statistics_lines(model.gate_statistics())))
    return 0


def cmd_crossval(args) -> int:
    config = resolve_config(args)
    if config.data.split_dir is None:
        raise ConfigError("crossval needs --split-dir (a directory of fold<k>.txt manifests)")
    out_dir = resolve_output_dir(args, config)
    samples, source = load_samples(args, config, config.model.input_size)
    if args.make_folds:
        paths = write_folds(config.data.split_dir,
                            make_folds([s.filename for s in samples], args.make_folds, config.train.seed))
        print(f"[INFO] Wrote {len(paths)} fold manifests to {config.data.split_dir}")
    print(f"--- [Crossval] {source}; folds from {config.data.split_dir} ---")
    outcome = run_crossval(config, samples, config.data.split_dir, out_dir=out_dir)
    for k, report in outcome.folds:
        print(format_eval_report(report, f"Fold {k} (held out)"))
    mean = outcome.mean()
    pc = "undefined" if mean["pc"] is None else f"{mean['pc']:.6f}"
    print("--- [Crossval] Mean over folds ---")
    print(f"mean.mae={mean['mae']:.6f}")
    print(f"mean.rmse={mean['rmse']:.6f}")
    print(f"mean.pc={pc}")
    print(f"folds={len(outcome.folds)}")
    return 0


# === Parser ===

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--preset", choices=preset_names(), help="Named preset (config file keys override it)")
    p.add_argument("--seed", type=int, help="Run seed (overrides train.seed)")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="Image directory")
    p.add_argument("--labels", help="Labels CSV (filename,score)")
    p.add_argument("--synthetic", type=int, metavar="N", help="Generate N synthetic faces")
    p.add_argument("--synthetic-manifest", metavar="PATH", help="Synthetic dataset written by `synth`")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py",
        description="Mamba-CNN facial beauty regression: train, evaluate, ablate and verify.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "Environment (.env):\n"
            "  MAMBA_CNN_OUTPUT_DIR   default output directory\n"
            "  MAMBA_CNN_LOG_DIR      run-log directory (default <out>/run_logs)\n"
            "  MAMBA_CNN_TRACE_STEPS  record per-batch events in the run log\n"
            "\n"
            "Exit codes: 0 ok, 1 config/checkpoint, 2 data, 3 numeric abort"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train one model")
    _add_config_flags(p)
    _add_data_flags(p)
    p.add_argument("--out", help="Output directory (checkpoints, history.csv, report.txt)")
    p.add_argument("--epochs", type=int, help="Override train.epochs")
    p.add_argument("--split-dir", help="Directory of fold<k>.txt manifests")
    p.add_argument("--fold", type=int, help="Use fold<k>.txt as the validation split")
    p.add_argument("--resume", metavar="CKPT", help="Continue from a last.ckpt")
    p.set_defaults(func=cmd_train, monitored=True)

    p = sub.add_parser("eval", help="Evaluate a checkpoint (MAE, RMSE, PC on the 1-5 scale)")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    p.add_argument("--seed", type=int, help="Seed for --synthetic")
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_eval, monitored=False)

    p = sub.add_parser("ablate", help="Train variants A-D under one seed and compare")
    _add_config_flags(p)
    _add_data_flags(p)
    p.add_argument("--variants", default="A,B,C,D", help="Comma list of variant labels")
    p.add_argument("--epochs", type=int, help="Override train.epochs")
    p.add_argument("--out", help="Output directory (per-variant checkpoints, ablation.csv)")
    p.add_argument("--parallel", action="store_true", help="One process per variant")
    p.set_defaults(func=cmd_ablate, monitored=True)

    p = sub.add_parser("gradcheck", help="Finite-difference gradient checks")
    p.add_argument("--preset", choices=GRADCHECK_PRESETS, default="tiny")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE)
    p.set_defaults(func=cmd_gradcheck, monitored=False)

    p = sub.add_parser("synth", help="Write a synthetic face dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--ppm", action="store_true", help="Also write PPM files for the directory+CSV loader")
    p.set_defaults(func=cmd_synth, monitored=False)

    p = sub.add_parser("predict", help="Score one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict, monitored=False)

    p = sub.add_parser("crossval", help="Train and evaluate once per fold manifest")
    _add_config_flags(p)
    _add_data_flags(p)
    p.add_argument("--split-dir", help="Directory of fold<k>.txt manifests")
    p.add_argument("--make-folds", type=int, metavar="K", help="First write K seeded fold manifests")
    p.add_argument("--epochs", type=int, help="Override train.epochs")
    p.add_argument("--out", help="Output directory")
    p.set_defaults(func=cmd_crossval, monitored=True)
    return parser


def _log_dir_for(args) -> str:
    return env_log_dir(getattr(args, "out", None) or env_output_dir())


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_env()
    parser = build_parser()
    args = parser.parse_args(argv)

    monitor = None
    try:
        if args.monitored:
            monitor = MonitoringContext(run_name=args.command, log_dir=_log_dir_for(args),
                                        trace_steps=env_trace_steps()).start()
        code = args.func(args)
        if monitor:
            monitor.finalize(status="completed" if code == 0 else "failed",
                             failure_reason=None if code == 0 else f"exit code {code}")
        return code

    except MambaCnnError as e:
        print("\n" + "=" * 80)
        print(f"[ERROR] {args.command} failed ({type(e).__name__}, exit code {e.exit_code})")
        print("=" * 80)
        print(str(e))
        print("=" * 80)
        if monitor:
            monitor.record_error(e, context=f"main.cmd_{args.command}")
            monitor.finalize(status="failed", failure_reason=str(e))
        return e.exit_code

    except Exception as e:
        print("\n" + "=" * 80)
        print(f"[ERROR] Unexpected error in {args.command}: {type(e).__name__}: {e}")
        print("=" * 80)
        traceback.print_exc()
        if monitor:
            monitor.record_error(e, context=f"main.cmd_{args.command}")
            monitor.finalize(status="failed", failure_reason=str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
