# data/dataset.py

"""
Directory + labels-CSV ingestion, score min-max scaling, ImageNet image
normalization and deterministic splits.

labels CSV: UTF-8, header `filename,score`, scores on the 1-5 scale.
"""

from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from data.ppm import load_image
from errors import DataError
from nn.tensor import Rng, Tensor
from state import NormStats, Sample

SCORE_MIN = 1.0
SCORE_MAX = 5.0


def read_labels(labels_csv: Union[str, Path]) -> List[Tuple[str, float]]:
    """
    Parses the labels CSV into (filename, score) pairs in file order.

    Raises:
        DataError: Missing file, empty table, bad header, malformed row,
            score outside [1, 5] or duplicate filename (row numbers count the
            header as row 1)
    """
    path = Path(labels_csv)
    if not path.is_file():
        raise DataError(f"Labels CSV not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise DataError(f"Labels CSV is empty: {path}") from None
    except pd.errors.ParserError as e:
        raise DataError(f"Malformed labels CSV {path}: {e}") from None

    if list(frame.columns) != ["filename", "score"]:
        raise DataError(
            f"Labels CSV {path} has header {list(frame.columns)}\n"
            f"Expected exactly: filename,score"
        )
    if frame.empty:
        raise DataError(f"Labels CSV has no rows: {path}")

    rows = []
    seen = {}
    for offset, (filename, raw_score) in enumerate(zip(frame["filename"], frame["score"])):
        row = offset + 2
        filename = filename.strip()
        if not filename:
            raise DataError(f"{path}, row {row}: empty filename")
        try:
            score = float(raw_score)
        except ValueError:
            raise DataError(f"{path}, row {row}: score {raw_score!r} is not a number") from None
        if not np.isfinite(score) or not SCORE_MIN <= score <= SCORE_MAX:
            raise DataError(f"{path}, row {row}: score {score} outside [{SCORE_MIN:g}, {SCORE_MAX:g}]")
        if filename in seen:
            raise DataError(f"{path}, row {row}: duplicate filename {filename!r} (first seen at row {seen[filename]})")
        seen[filename] = row
        rows.append((filename, score))
    return rows


def compute_norm_stats(scores: Iterable[float]) -> NormStats:
    """Train-split min/max; raises DataError when all scores are equal."""
    scores = list(scores)
    if not scores:
        raise DataError("Cannot compute score statistics from an empty training split")
    return NormStats(train_min=float(min(scores)), train_max=float(max(scores))).validate()


def normalize_score(score: float, stats: NormStats) -> float:
    stats.validate()
    return (score - stats.train_min) / (stats.train_max - stats.train_min)


def denormalize_score(value, stats: NormStats):
    """Exact inverse of normalize_score; works on scalars and arrays."""
    stats.validate()
    return value * (stats.train_max - stats.train_min) + stats.train_min


def normalize_image(image: Tensor, stats: Optional[NormStats] = None) -> Tensor:
    """Per-channel (x - mean[c]) / std[c] on a [3, H, W] image."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"normalize_image expects [3, H, W], got {tuple(image.shape)}")
    stats = stats or NormStats(SCORE_MIN, SCORE_MAX)
    mean = np.asarray(stats.image_mean, dtype=image.dtype).reshape(3, 1, 1)
    std = np.asarray(stats.image_std, dtype=image.dtype).reshape(3, 1, 1)
    return np.ascontiguousarray((image - mean) / std)


def attach_norm_scores(samples: Sequence[Sample], stats: NormStats) -> None:
    for sample in samples:
        sample.score_norm = normalize_score(sample.score_raw, stats)


def load_dataset(image_dir: Union[str, Path], labels_csv: Union[str, Path],
                 train_filenames: Optional[Iterable[str]] = None) -> Tuple[List[Sample], NormStats]:
    """
    Loads every labelled image and computes NormStats.

    Args:
        image_dir: Directory holding the images named in the CSV
        labels_csv: `filename,score` table
        train_filenames: Training-split members; the score range is taken
            from these only (all samples when None)

    Returns:
        (samples, stats): samples in CSV order with score_norm set

    Raises:
        DataError: Any per-row problem (see read_labels) or an image that is
            missing or does not decode
    """
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        raise DataError(f"Image directory not found: {image_dir}")
    rows = read_labels(labels_csv)
    samples = []
    for offset, (filename, score) in enumerate(rows):
        try:
            image = load_image(image_dir / filename)
        except DataError as e:
            raise DataError(f"{labels_csv}, row {offset + 2}: {e}") from None
        samples.append(Sample(filename=filename, image=image, score_raw=score))

    if train_filenames is None:
        train_scores = [s.score_raw for s in samples]
    else:
        by_name = {s.filename: s for s in samples}
        train_filenames = list(train_filenames)
        unknown = [f for f in train_filenames if f not in by_name]
        if unknown:
            raise DataError(f"Training split names files absent from {labels_csv}: {unknown[:5]}")
        train_scores = [by_name[f].score_raw for f in train_filenames]

    stats = compute_norm_stats(train_scores)
    attach_norm_scores(samples, stats)
    return samples, stats


def split_train_val(samples: Sequence[Sample], val_fraction: float, seed: int) -> Tuple[List[Sample], List[Sample]]:
    """
    Deterministic shuffle-and-split. Both parts keep their relative input
    order; the validation part has round(n * val_fraction) members (at least 1).
    """
    n = len(samples)
    if n < 2:
        raise DataError(f"Need at least 2 samples for a train/val split, got {n}")
    n_val = min(max(1, int(round(n * val_fraction))), n - 1)
    order = Rng(seed).derive("split").permutation(n)
    val_idx = set(int(i) for i in order[:n_val])
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    return train, val


def select(samples: Sequence[Sample], filenames: Iterable[str]) -> List[Sample]:
    """Samples named in filenames, in that order."""
    by_name = {s.filename: s for s in samples}
    filenames = list(filenames)
    missing = [f for f in filenames if f not in by_name]
    if missing:
        raise DataError(f"Split lists files absent from the dataset: {missing[:5]}")
    return [by_name[f] for f in filenames]


def scores(samples: Sequence[Sample], normalized: bool = False) -> np.ndarray:
    if normalized:
        if any(s.score_norm is None for s in samples):
            raise DataError("Normalized scores requested before NormStats were attached")
        return np.array([s.score_norm for s in samples], dtype=np.float64)
    return np.array([s.score_raw for s in samples], dtype=np.float64)
