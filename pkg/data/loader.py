# data/loader.py

"""
Mini-batch assembly.

Per-sample randomness is derived from (seed, epoch, sample index), never from
a shared stream, so transforms may run on a thread pool without changing the
batch contents.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence

import numpy as np

from data.transforms import augment_train, transform_eval
from errors import DataError
from nn.tensor import Rng, Tensor, resolve_dtype
from state import AugmentConfig, NormStats, Sample

# (sample, position in the dataset) -> [3, S, S]
SampleTransform = Callable[[Sample, int], Tensor]


@dataclass
class Batch:
    images: Tensor        # [B, 3, S, S]
    targets: np.ndarray   # [B] normalized scores
    raw_scores: np.ndarray  # [B] original-scale scores
    indices: np.ndarray   # dataset positions


def batch_indices(n: int, batch_size: int, rng: Optional[Rng] = None) -> List[np.ndarray]:
    """Splits range(n) (shuffled when rng is given) into batches; the last partial batch is kept."""
    if n < 1:
        raise DataError("Cannot batch an empty dataset")
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def collate(samples: Sequence[Sample], indices: np.ndarray, transform: SampleTransform,
            precision: str = "f32", workers: int = 0) -> Batch:
    chosen = [(samples[int(i)], int(i)) for i in indices]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            images = list(pool.map(lambda pair: transform(*pair), chosen))
    else:
        images = [transform(sample, i) for sample, i in chosen]
    for sample, _ in chosen:
        if sample.score_norm is None:
            raise DataError(f"Sample {sample.filename} has no normalized score")
    return Batch(
        images=np.ascontiguousarray(np.stack(images), dtype=resolve_dtype(precision)),
        targets=np.array([s.score_norm for s, _ in chosen], dtype=np.float64),
        raw_scores=np.array([s.score_raw for s, _ in chosen], dtype=np.float64),
        indices=np.asarray(indices),
    )


def iterate_batches(samples: Sequence[Sample], batch_size: int, transform: SampleTransform,
                    rng: Optional[Rng] = None, precision: str = "f32", workers: int = 0) -> Iterator[Batch]:
    for idx in batch_indices(len(samples), batch_size, rng):
        yield collate(samples, idx, transform, precision, workers)


def train_transform(cfg: AugmentConfig, seed: int, epoch: int, stats: Optional[NormStats] = None) -> SampleTransform:
    """Augmenting transform whose stream for sample i is Rng(seed).derive("augment", epoch, i)."""
    root = Rng(seed).derive("augment", epoch)

    def apply(sample: Sample, index: int) -> Tensor:
        return augment_train(sample.image, cfg, root.derive(index), stats)

    return apply


def eval_transform(size: int, stats: Optional[NormStats] = None) -> SampleTransform:
    def apply(sample: Sample, index: int) -> Tensor:
        return transform_eval(sample.image, size, stats)

    return apply
