# pipeline.py

"""
Multi-run orchestration on top of training.train:

    train_and_evaluate  one model on one train/val split
    run_ablation        variants A-D under identical seed and data
    run_crossval        one run per fold manifest, then the mean metrics

Each stage is wrapped with monitor_stage so the run log shows its start,
end and duration.
"""

import copy
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from data.dataset import attach_norm_scores, compute_norm_stats, split_train_val
from errors import ConfigError, DataError
from metrics import evaluate
from model import VARIANT_FLAGS, VARIANT_NAMES, VARIANTS, MambaCNN, build_model, count_parameters, make_variant
from monitoring.decorators import monitor_stage
from nn.tensor import Rng
from reporter import format_parameter_breakdown
from split_manifest import fold_path, list_folds, partition_by_fold, read_fold
from state import EvalReport, NormStats, RunConfig, Sample
from training import TrainResult, train

# Fraction of each cross-validation training pool held back for early stopping
CROSSVAL_VAL_FRACTION = 0.1


@dataclass
class RunOutcome:
    result: TrainResult
    report: EvalReport
    stats: NormStats
    n_train: int
    n_val: int


@dataclass
class CrossvalOutcome:
    folds: List[Tuple[int, EvalReport]] = field(default_factory=list)

    def mean(self) -> Dict[str, Optional[float]]:
        """Mean MAE / RMSE over folds; PC averaged over folds where it is defined."""
        reports = [r for _, r in self.folds]
        pcs = [r.pc for r in reports if r.pc is not None]
        return {
            "mae": float(np.mean([r.mae for r in reports])),
            "rmse": float(np.mean([r.rmse for r in reports])),
            "pc": float(np.mean(pcs)) if pcs else None,
        }


def parse_variants(text: str) -> List[str]:
    """
    "A,B,D" -> ["A", "B", "D"] (order kept, duplicates dropped).

    Raises:
        ConfigError: Empty list or an unknown label
    """
    labels = []
    for raw in text.split(","):
        label = raw.strip().upper()
        if not label:
            continue
        if label not in VARIANT_FLAGS:
            raise ConfigError(f"Unknown variant {raw.strip()!r}; expected a comma list of {', '.join(VARIANTS)}")
        if label not in labels:
            labels.append(label)
    if not labels:
        raise ConfigError("No variants given; expected e.g. --variants A,B,C,D")
    return labels


def split_with_stats(samples: Sequence[Sample], val_fraction: float, seed: int) -> Tuple[List[Sample], List[Sample], NormStats]:
    """Seeded train/val split; NormStats come from the training part and are attached to every sample."""
    train_set, val_set = split_train_val(samples, val_fraction, seed)
    stats = compute_norm_stats(s.score_raw for s in train_set)
    attach_norm_scores(samples, stats)
    return train_set, val_set, stats


def split_from_fold(samples: Sequence[Sample], split_dir: Union[str, Path], fold: int) -> Tuple[List[Sample], List[Sample], NormStats]:
    """The fold's manifest is the validation set; every other sample trains."""
    train_set, val_set = partition_by_fold(samples, read_fold(fold_path(split_dir, fold)))
    stats = compute_norm_stats(s.score_raw for s in train_set)
    attach_norm_scores(samples, stats)
    return train_set, val_set, stats


def build_for_run(config: RunConfig, verbose: bool = True) -> MambaCNN:
    """Model initialized from Rng(train.seed).derive("init")."""
    model = build_model(config.model, Rng(config.train.seed).derive("init"), config.train.precision)
    if verbose:
        print(format_parameter_breakdown(*count_parameters(model)))
    return model


@monitor_stage(stage_name="train_and_evaluate", pipeline_name="train")
def train_and_evaluate(config: RunConfig, train_set: Sequence[Sample], val_set: Sequence[Sample],
                       stats: NormStats, out_dir: Optional[Union[str, Path]] = None,
                       model: Optional[MambaCNN] = None, resume=None, verbose: bool = True) -> RunOutcome:
    """Trains (or resumes) and evaluates the restored best model on the validation split."""
    model = model if model is not None else build_for_run(config, verbose)
    result = train(model, train_set, val_set, config.train, config.augment, stats,
                   out_dir=out_dir, resume=resume, verbose=verbose)
    report = evaluate(result.model, val_set, stats, config.train.batch_size, strict=False,
                      precision=config.train.precision)
    return RunOutcome(result=result, report=report, stats=stats,
                      n_train=len(train_set), n_val=len(val_set))


def _ablation_worker(args) -> dict:
    config, label, samples, out_dir, verbose = args
    variant_config = copy.deepcopy(config)
    variant_config.model = make_variant(config.model, label)
    train_set, val_set, stats = split_with_stats(samples, config.data.val_fraction, config.train.seed)
    started = time.time()
    outcome = train_and_evaluate(variant_config, train_set, val_set, stats,
                                 out_dir=Path(out_dir) / f"variant_{label}" if out_dir else None,
                                 verbose=verbose)
    use_gate, use_pyramid = VARIANT_FLAGS[label]
    return {
        "variant": label,
        "name": VARIANT_NAMES[label],
        "use_gate": use_gate,
        "use_pyramid": use_pyramid,
        "report": outcome.report,
        "best_epoch": outcome.result.best_epoch,
        "parameters": count_parameters(outcome.result.model)[0],
        "seconds": round(time.time() - started, 2),
    }


@monitor_stage(stage_name="ablation", pipeline_name="ablate")
def run_ablation(config: RunConfig, variants: Sequence[str], samples: Sequence[Sample],
                 out_dir: Optional[Union[str, Path]] = None, parallel: bool = False,
                 verbose: bool = True) -> List[dict]:
    """
    Trains each variant on the same seeded split with the same init seed.

    Args:
        parallel: One process per variant; results are identical to the
            sequential run because every stream derives from the seed

    Returns:
        list[dict]: One row per variant (variant, name, use_gate, use_pyramid, report, ...)
    """
    if not samples:
        raise DataError("Ablation needs a non-empty dataset")
    jobs = [(config, label, list(samples), str(out_dir) if out_dir else None, verbose and not parallel)
            for label in variants]
    if parallel and len(jobs) > 1:
        print(f"--- [Ablation] {len(jobs)} variants in parallel processes ---")
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            return list(pool.map(_ablation_worker, jobs))

    rows = []
    for i, job in enumerate(jobs):
        label = job[1]
        print(f"\n{'=' * 80}")
        print(f"[{i + 1}/{len(jobs)}] Variant ({label}) {VARIANT_NAMES[label]}")
        print(f"{'=' * 80}")
        rows.append(_ablation_worker(job))
    return rows


@monitor_stage(stage_name="crossval", pipeline_name="crossval")
def run_crossval(config: RunConfig, samples: Sequence[Sample], split_dir: Union[str, Path],
                 out_dir: Optional[Union[str, Path]] = None, verbose: bool = True) -> CrossvalOutcome:
    """
    For every fold<k>.txt (sorted by k) the listed files are the test fold;
    the rest is split 90/10 into train/val with the run seed.
    """
    outcome = CrossvalOutcome()
    folds = list_folds(split_dir)
    for k, manifest in folds:
        print(f"\n{'=' * 80}")
        print(f"[Fold {k}] held out: {manifest}")
        print(f"{'=' * 80}")
        pool, test = partition_by_fold(samples, read_fold(manifest))
        train_set, val_set, stats = split_with_stats(pool, CROSSVAL_VAL_FRACTION, config.train.seed)
        attach_norm_scores(test, stats)
        run = train_and_evaluate(config, train_set, val_set, stats,
                                 out_dir=Path(out_dir) / f"fold{k}" if out_dir else None,
                                 verbose=verbose)
        report = evaluate(run.result.model, test, stats, config.train.batch_size, strict=False,
                          precision=config.train.precision)
        outcome.folds.append((k, report))
    return outcome
