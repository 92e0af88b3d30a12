# metrics.py

"""
Evaluation protocol: MAE, RMSE and Pearson correlation on the original 1-5
scale, computed in float64 after denormalizing the model's predictions.
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from data.dataset import denormalize_score, scores
from data.loader import eval_transform, iterate_batches
from errors import ShapeError, UndefinedCorrelationError
from nn.layers import Module
from state import EvalReport, NormStats, Sample


def _pair(y, yhat) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    yhat = np.asarray(yhat, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ShapeError("Metrics need at least one (y, yhat) pair")
    if y.shape != yhat.shape:
        raise ShapeError(f"Metric inputs differ in length: {y.size} vs {yhat.size}")
    return y, yhat


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    diff = y - yhat
    return float(np.sqrt(np.mean(diff * diff)))


def pearson(y, yhat) -> float:
    """
    Pearson correlation coefficient.

    Raises:
        UndefinedCorrelationError: Fewer than 2 pairs, or either series constant
    """
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise UndefinedCorrelationError(f"Pearson correlation needs n >= 2, got {y.size}")
    if np.ptp(y) == 0.0 or np.ptp(yhat) == 0.0:
        which = "targets" if np.ptp(y) == 0.0 else "predictions"
        raise UndefinedCorrelationError(f"Pearson correlation is undefined: {which} have zero variance")
    dy = y - y.mean()
    dh = yhat - yhat.mean()
    r = float(np.dot(dy, dh) / (np.sqrt(np.dot(dy, dy)) * np.sqrt(np.dot(dh, dh))))
    return min(1.0, max(-1.0, r))


def report_from_scores(y, yhat, strict: bool = True) -> EvalReport:
    """
    EvalReport from original-scale targets and predictions.

    With strict=False an undefined correlation is reported as pc=None
    instead of raising.
    """
    y, yhat = _pair(y, yhat)
    try:
        pc: Optional[float] = pearson(y, yhat)
    except UndefinedCorrelationError:
        if strict:
            raise
        pc = None
    return EvalReport(mae=mae(y, yhat), rmse=rmse(y, yhat), pc=pc, n=int(y.size))


def predict_normalized(model: Module, samples: Sequence[Sample], batch_size: int = 32,
                       stats: Optional[NormStats] = None, precision: str = "f32") -> np.ndarray:
    """Eval-mode forward over samples in order; returns the (0, 1) outputs as float64."""
    was_training = model.training
    model.eval()
    try:
        size = model.config.input_size
        outputs = [model.forward(batch.images).astype(np.float64)
                   for batch in iterate_batches(samples, batch_size, eval_transform(size, stats),
                                                precision=precision)]
    finally:
        model.train(was_training)
    return np.concatenate(outputs)


def evaluate(model: Module, samples: Sequence[Sample], stats: NormStats, batch_size: int = 32,
             strict: bool = True, precision: str = "f32") -> EvalReport:
    """
    Forwards every sample, denormalizes predictions with stats and compares
    them against the raw 1-5 scores.

    Raises:
        UndefinedCorrelationError: Zero-variance predictions or targets (strict mode)
    """
    preds = denormalize_score(predict_normalized(model, samples, batch_size, stats, precision), stats)
    return report_from_scores(scores(samples), preds, strict=strict)
