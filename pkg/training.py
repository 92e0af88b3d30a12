# training.py

"""
Training loop for Mamba-CNN regression.

Per batch: forward -> MSE -> zero grads -> backward -> clip global norm ->
AdamW step. Per epoch: validation loss (eval mode), ReduceLROnPlateau step,
early-stopping update, optional `last.ckpt`. At the end the best-epoch
weights are restored and written as `best.ckpt` with `history.csv`.

Every random stream is derived from the run seed:
    shuffle       Rng(seed).derive("shuffle", epoch)
    augmentation  Rng(seed).derive("augment", epoch).derive(sample_index)
    dropout       Rng(seed).derive("dropout", epoch, batch_index)
so a resumed run replays exactly the batches an uninterrupted run would see.
The root Rng(seed) state is stored in every checkpoint and resume continues
from it.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from checkpoint import Checkpoint, save_checkpoint
from data.loader import eval_transform, iterate_batches, train_transform
from errors import ConfigError, DataError, TrainingAbort
from metrics import predict_normalized
from model import MambaCNN
from monitoring.core import MonitoringContext
from optim import AdamW, EarlyStopper, PlateauScheduler, adamw_config_from, clip_grad_norm, mse_loss
from nn.tensor import Rng
from reporter import plot_history, write_history_csv
from state import AugmentConfig, EpochRecord, NormStats, Sample, TrainConfig

LAST_CHECKPOINT = "last.ckpt"
BEST_CHECKPOINT = "best.ckpt"
HISTORY_CSV = "history.csv"
HISTORY_PLOT = "history.png"


@dataclass
class TrainResult:
    model: MambaCNN
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_loss: float = float("inf")
    stopped_early: bool = False
    epochs_run: int = 0
    best_checkpoint: Optional[Path] = None


def _targets(samples: Sequence[Sample]) -> np.ndarray:
    missing = [s.filename for s in samples if s.score_norm is None]
    if missing:
        raise DataError(f"{len(missing)} sample(s) have no normalized score, e.g. {missing[0]}")
    return np.array([s.score_norm for s in samples], dtype=np.float64)


def evaluate_loss(model: MambaCNN, samples: Sequence[Sample], batch_size: int = 32,
                  stats: Optional[NormStats] = None, precision: str = "f32") -> float:
    """
    Sample-weighted mean MSE over all batches in eval mode; equal to the
    whole-set MSE whatever the batch size.

    Raises:
        DataError: Empty dataset
    """
    if not samples:
        raise DataError("Cannot evaluate the loss of an empty dataset")
    targets = _targets(samples)
    preds = predict_normalized(model, samples, batch_size, stats, precision)
    total = 0.0
    for start in range(0, len(samples), batch_size):
        stop = min(start + batch_size, len(samples))
        loss, _ = mse_loss(preds[start:stop], targets[start:stop])
        total += loss * (stop - start)
    return total / len(samples)


def make_checkpoint(model: MambaCNN, stats: NormStats, cfg: TrainConfig, epoch: int, kind: str,
                    augment_cfg: Optional[AugmentConfig] = None, history: Sequence[EpochRecord] = (),
                    optimizer: Optional[AdamW] = None, scheduler: Optional[PlateauScheduler] = None,
                    stopper: Optional[EarlyStopper] = None, rng: Optional[Rng] = None) -> Checkpoint:
    """
    Snapshot of the model (and, for kind "last", the optimizer state needed to resume).

    rng is the run's root stream; it defaults to Rng(cfg.seed).
    """
    return Checkpoint(
        model_config=model.config,
        model_state=model.state_dict(),
        norm_stats=stats,
        epoch=epoch,
        kind=kind,
        precision=model.precision,
        train_config=cfg,
        augment_config=augment_cfg,
        optimizer=optimizer.state_dict() if optimizer is not None else None,
        scheduler=scheduler.state_dict() if scheduler is not None else None,
        stopper=stopper.state_dict() if stopper is not None else None,
        rng_state=(rng if rng is not None else Rng(cfg.seed)).get_state(),
        history=[dict(row) for row in history],
    )


def _resume_from(ckpt: Checkpoint, model: MambaCNN, cfg: TrainConfig, optimizer: AdamW,
                 scheduler: PlateauScheduler, stopper: EarlyStopper) -> List[EpochRecord]:
    if ckpt.kind != "last" or ckpt.optimizer is None or ckpt.scheduler is None or ckpt.stopper is None:
        raise ConfigError(
            f"Cannot resume from a '{ckpt.kind}' checkpoint without optimizer state.\n"
            f"Resume from the {LAST_CHECKPOINT} written during training."
        )
    if ckpt.rng_state is not None and ckpt.rng_state.get("seed") != cfg.seed:
        print(f"[WARN] Config seed {cfg.seed} ignored on resume; continuing the checkpoint's "
              f"streams from seed {ckpt.rng_state.get('seed')}")
    model.load_state_dict(ckpt.model_state)
    optimizer.load_state_dict(ckpt.optimizer)
    scheduler.load_state_dict(ckpt.scheduler)
    stopper.load_state_dict(ckpt.stopper)
    return [EpochRecord(epoch=int(r["epoch"]), train_loss=float(r["train_loss"]),
                        val_loss=float(r["val_loss"]), lr=float(r["lr"])) for r in ckpt.history]


def train(model: MambaCNN, train_set: Sequence[Sample], val_set: Sequence[Sample], cfg: TrainConfig,
          augment_cfg: Optional[AugmentConfig] = None, stats: Optional[NormStats] = None,
          out_dir: Optional[Union[str, Path]] = None, resume: Optional[Checkpoint] = None,
          verbose: bool = True, workers: int = 0) -> TrainResult:
    """
    Trains model in place and returns it with the best-epoch weights restored.

    Args:
        model: Freshly built (or checkpoint-loaded) model
        train_set: Samples with score_norm set from the train-split NormStats
        val_set: Disjoint validation samples
        cfg: Optimizer, schedule and early-stopping settings
        augment_cfg: Training augmentation; used only when cfg.augment is set
        stats: NormStats (image mean/std for normalization, score range for checkpoints)
        out_dir: When set, writes last.ckpt every epoch plus best.ckpt and history.csv
        resume: A "last" checkpoint to continue from
        verbose: Print per-epoch progress lines
        workers: Thread count for batch transforms (0 = inline)

    Returns:
        TrainResult

    Raises:
        DataError: Empty train or validation set
        ConfigError: Augmentation crop size differs from the model input size
        TrainingAbort: Non-finite loss (carries epoch and batch index)
    """
    cfg.validate()
    if not train_set:
        raise DataError("Training set is empty")
    if not val_set:
        raise DataError("Validation set is empty")
    size = model.config.input_size
    augment = augment_cfg if cfg.augment and augment_cfg is not None else None
    if augment is not None:
        augment.validate()
        if augment.crop_to != size:
            raise ConfigError(
                f"augment.crop_to ({augment.crop_to}) must equal model.input_size ({size})"
            )
    if out_dir is not None and stats is None:
        raise ConfigError("Writing checkpoints needs the train-split NormStats")

    precision = cfg.precision
    optimizer = AdamW(model.parameters(), adamw_config_from(cfg))
    scheduler = PlateauScheduler(cfg.lr, cfg.scheduler_factor, cfg.scheduler_patience,
                                 cfg.scheduler_min_lr, cfg.scheduler_cooldown)
    stopper = EarlyStopper(cfg.early_stop_patience)
    history: List[EpochRecord] = []
    start_epoch = 1
    root = Rng(cfg.seed)
    if resume is not None:
        history = _resume_from(resume, model, cfg, optimizer, scheduler, stopper)
        start_epoch = resume.epoch + 1
        if resume.rng_state is not None:
            root = Rng.from_state(resume.rng_state)
        print(f"[INFO] Resuming at epoch {start_epoch} (lr={scheduler.lr:.3g}, best val={stopper.best_val_loss:.6g})")

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    monitor = MonitoringContext.get_instance()
    eval_tf = eval_transform(size, stats)
    stopped_early = stopper.should_stop

    if verbose:
        print(f"--- [Trainer] {len(train_set)} train / {len(val_set)} val samples, "
              f"epochs {start_epoch}..{cfg.epochs}, batch {cfg.batch_size}, precision {precision} ---")

    epoch = start_epoch - 1
    for epoch in range(start_epoch, cfg.epochs + 1):
        if stopped_early:
            break
        lr = scheduler.lr
        optimizer.lr = lr
        model.train()
        transform = train_transform(augment, root.seed, epoch, stats) if augment is not None else eval_tf

        total, count = 0.0, 0
        batches = iterate_batches(train_set, cfg.batch_size, transform, root.derive("shuffle", epoch),
                                  precision, workers)
        for b, batch in enumerate(batches):
            model.seed_dropout(root.derive("dropout", epoch, b))
            pred = model.forward(batch.images)
            if monitor:
                monitor.record_step("forward", epoch=epoch, batch=b)
            loss, grad = mse_loss(pred, batch.targets)
            if not math.isfinite(loss):
                raise TrainingAbort(
                    f"Non-finite training loss ({loss}) at epoch {epoch}, batch {b}.\n"
                    f"Batch sample indices: {batch.indices.tolist()}\n"
                    f"Try a lower lr or check the input data for NaNs.",
                    epoch=epoch, batch_index=b,
                )
            optimizer.zero_grad()
            model.backward(grad)
            if monitor:
                monitor.record_step("backward", epoch=epoch, batch=b)
            scale = clip_grad_norm(optimizer.params, cfg.clip_max_norm)
            if monitor:
                monitor.record_step("clip", epoch=epoch, batch=b, scale=scale)
            optimizer.step()
            if monitor:
                monitor.record_step("optimizer_step", epoch=epoch, batch=b, lr=lr)
            total += loss * len(batch.indices)
            count += len(batch.indices)

        train_loss = total / count
        val_loss = evaluate_loss(model, val_set, cfg.batch_size, stats, precision)
        if not math.isfinite(val_loss):
            raise TrainingAbort(f"Non-finite validation loss ({val_loss}) at epoch {epoch}", epoch=epoch)

        history.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=lr))
        new_lr = scheduler.step(val_loss)
        stopped_early = stopper.update(val_loss, model, epoch)

        if verbose:
            marker = " *" if stopper.best_epoch == epoch else ""
            print(f"[INFO] epoch {epoch:4d}  train {train_loss:.6f}  val {val_loss:.6f}  lr {lr:.3g}{marker}")
        if monitor:
            monitor.record_event("epoch_end", epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=lr)
        if new_lr < lr:
            if verbose:
                print(f"[INFO] Validation loss plateaued: lr {lr:.3g} -> {new_lr:.3g}")
            if monitor:
                monitor.record_event("lr_reduced", epoch=epoch, old_lr=lr, new_lr=new_lr)

        if out_path is not None:
            save_checkpoint(out_path / LAST_CHECKPOINT,
                            make_checkpoint(model, stats, cfg, epoch, "last", augment_cfg, history,
                                            optimizer, scheduler, stopper, root))
            if monitor:
                monitor.record_event("checkpoint_saved", epoch=epoch, kind="last")

        if stopped_early:
            if verbose:
                print(f"[INFO] Early stopping at epoch {epoch}: no improvement for "
                      f"{cfg.early_stop_patience} epochs (best epoch {stopper.best_epoch})")
            if monitor:
                monitor.record_event("early_stop", epoch=epoch, best_epoch=stopper.best_epoch)

    stopper.restore_best(model)
    result = TrainResult(
        model=model,
        history=history,
        best_epoch=stopper.best_epoch,
        best_val_loss=stopper.best_val_loss,
        stopped_early=stopped_early,
        epochs_run=len(history),
    )

    if out_path is not None:
        result.best_checkpoint = save_checkpoint(
            out_path / BEST_CHECKPOINT,
            make_checkpoint(model, stats, cfg, stopper.best_epoch or epoch, "best", augment_cfg, history,
                            rng=root),
        )
        write_history_csv(out_path / HISTORY_CSV, history)
        try:
            plot_history(out_path / HISTORY_PLOT, history)
        except Exception as e:
            print(f"[WARN] History plot skipped: {e}")
        if monitor:
            monitor.record_event("checkpoint_saved", epoch=stopper.best_epoch, kind="best")

    if verbose:
        print(f"--- [Trainer] Done: {result.epochs_run} epochs, best epoch {result.best_epoch} "
              f"(val {result.best_val_loss:.6f}) ---")
    return result
