"""
Data pipeline: PPM decoding, labels CSV ingestion, augmentation, synthetic
faces and batching.
"""

from .ppm import decode_ppm, encode_ppm, load_image
from .dataset import (
    compute_norm_stats,
    denormalize_score,
    load_dataset,
    normalize_image,
    normalize_score,
    read_labels,
    split_train_val,
)
from .transforms import augment_train, resize_bilinear, transform_eval
from .synth import load_synth, oracle_score, save_synth, synth_dataset
from .loader import Batch, batch_indices, iterate_batches

__all__ = [
    "decode_ppm",
    "encode_ppm",
    "load_image",
    "compute_norm_stats",
    "denormalize_score",
    "load_dataset",
    "normalize_image",
    "normalize_score",
    "read_labels",
    "split_train_val",
    "augment_train",
    "resize_bilinear",
    "transform_eval",
    "load_synth",
    "oracle_score",
    "save_synth",
    "synth_dataset",
    "Batch",
    "batch_indices",
    "iterate_batches",
]
