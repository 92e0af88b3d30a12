# data/synth.py

"""
Synthetic "face" dataset with a closed-form score.

Each image is an ellipse face on a plain background with two eyes and a
mouth. Three generator parameters, each uniform in [0, 1], control what the
score measures:

    symmetry    right-eye radius = left-eye radius * (1 - 0.6 * (1 - symmetry))
    smoothness  skin texture noise std = 0.15 * (1 - smoothness)
    spacing     eye half-separation = 0.18 + 0.22 * spacing   (in face units)

    score = 1 + 4 * (0.4 * symmetry + 0.3 * smoothness + 0.3 * spacing)

Background shade, skin tone and a small face offset vary as nuisances.

On disk a dataset is a directory holding:
    images.mtns            MTNS1 tensor [N, 3, S, S] float32
    labels.csv             filename,score
    generator_params.csv   filename,symmetry,smoothness,spacing,score
    manifest.json          canonical JSON description (no timestamps)
    <filename>.ppm         optional per-image PPM files
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd

from data.dataset import compute_norm_stats, attach_norm_scores
from data.ppm import write_ppm
from errors import DataError
from nn.mtns import load_tensor, save_tensor
from nn.tensor import Rng, Tensor
from state import NormStats, Sample

SYNTH_FORMAT = "mambacnn-synth/1"
ORACLE_FORMULA = "score = 1 + 4 * (0.4 * symmetry + 0.3 * smoothness + 0.3 * spacing)"
ORACLE_WEIGHTS = (0.4, 0.3, 0.3)

EYE_ROW = -0.22
EYE_RADIUS = 0.13
EYE_COLOR = (0.08, 0.06, 0.06)
MOUTH_COLOR = (0.7, 0.15, 0.2)


@dataclass
class SynthParams:
    symmetry: float
    smoothness: float
    spacing: float


@dataclass
class SynthDataset:
    samples: List[Sample]
    stats: NormStats
    params: List[SynthParams]
    seed: int
    image_size: int
    oracle: str = ORACLE_FORMULA


def oracle_score(symmetry: float, smoothness: float, spacing: float) -> float:
    ws, wm, wp = ORACLE_WEIGHTS
    return 1.0 + 4.0 * (ws * symmetry + wm * smoothness + wp * spacing)


def synth_filename(index: int) -> str:
    return f"synth_{index:05d}.ppm"


def render_face(params: SynthParams, size: int, rng: Rng) -> Tensor:
    """Draws one [3, size, size] float32 image in [0, 1]."""
    background = rng.uniform(0.1, 0.3)
    tone = rng.uniform(0.85, 1.0)
    cx = rng.uniform(-0.04, 0.04)
    cy = rng.uniform(-0.04, 0.04)
    noise = rng.normal_tensor((size, size), 0.0, 1.0, precision="f64")

    coords = (np.arange(size, dtype=np.float64) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(coords - cy, coords - cx, indexing="ij")

    image = np.empty((3, size, size), dtype=np.float64)
    image[...] = background

    face = (xx / 0.62) ** 2 + (yy / 0.8) ** 2 <= 1.0
    texture = 0.15 * (1.0 - params.smoothness) * noise
    for c, base in enumerate((0.85, 0.65, 0.5)):
        image[c][face] = base * tone + texture[face]

    half_sep = 0.18 + 0.22 * params.spacing
    right_radius = EYE_RADIUS * (1.0 - 0.6 * (1.0 - params.symmetry))
    left_eye = (xx + half_sep) ** 2 + (yy - EYE_ROW) ** 2 <= EYE_RADIUS ** 2
    right_eye = (xx - half_sep) ** 2 + (yy - EYE_ROW) ** 2 <= right_radius ** 2
    mouth = (xx / 0.3) ** 2 + ((yy - 0.42) / 0.07) ** 2 <= 1.0
    for c in range(3):
        image[c][left_eye | right_eye] = EYE_COLOR[c]
        image[c][mouth] = MOUTH_COLOR[c]

    return np.ascontiguousarray(np.clip(image, 0.0, 1.0).astype(np.float32))


def synth_dataset(n: int, image_size: int, seed: int) -> SynthDataset:
    """
    Generates n samples deterministically from seed.

    Raises:
        DataError: n < 1 or image_size < 8
    """
    if n < 1:
        raise DataError(f"Synthetic dataset size must be >= 1, got {n}")
    if image_size < 8:
        raise DataError(f"Synthetic image size must be >= 8, got {image_size}")
    root = Rng(seed).derive("synth")
    samples, params = [], []
    for i in range(n):
        rng = root.derive(i)
        p = SynthParams(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0))
        image = render_face(p, image_size, rng)
        score = oracle_score(p.symmetry, p.smoothness, p.spacing)
        samples.append(Sample(filename=synth_filename(i), image=image, score_raw=score))
        params.append(p)
    stats = compute_norm_stats(s.score_raw for s in samples) if n > 1 else NormStats(1.0, 5.0)
    attach_norm_scores(samples, stats)
    return SynthDataset(samples=samples, stats=stats, params=params, seed=seed, image_size=image_size)


def manifest_dict(dataset: SynthDataset, ppm: bool = False) -> dict:
    scores = [s.score_raw for s in dataset.samples]
    return {
        "format": SYNTH_FORMAT,
        "n": len(dataset.samples),
        "image_size": dataset.image_size,
        "seed": dataset.seed,
        "oracle": dataset.oracle,
        "images": "images.mtns",
        "labels": "labels.csv",
        "params": "generator_params.csv",
        "ppm": ppm,
        "score_min": min(scores),
        "score_max": max(scores),
    }


def save_synth(dataset: SynthDataset, out_dir: Union[str, Path], ppm: bool = False) -> Path:
    """Writes the dataset directory; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = np.stack([s.image for s in dataset.samples]).astype(np.float32)
    save_tensor(out_dir / "images.mtns", images)

    names = [s.filename for s in dataset.samples]
    pd.DataFrame({
        "filename": names,
        "score": [s.score_raw for s in dataset.samples],
    }).to_csv(out_dir / "labels.csv", index=False, float_format="%.17g", lineterminator="\n")
    pd.DataFrame({
        "filename": names,
        "symmetry": [p.symmetry for p in dataset.params],
        "smoothness": [p.smoothness for p in dataset.params],
        "spacing": [p.spacing for p in dataset.params],
        "score": [s.score_raw for s in dataset.samples],
    }).to_csv(out_dir / "generator_params.csv", index=False, float_format="%.17g", lineterminator="\n")

    if ppm:
        for sample in dataset.samples:
            write_ppm(out_dir / sample.filename, sample.image)

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest_dict(dataset, ppm), sort_keys=True, indent=2) + "\n",
                             encoding="utf-8")
    return manifest_path


def load_synth(path: Union[str, Path]) -> SynthDataset:
    """
    Loads a dataset written by save_synth (path is the directory or its manifest.json).

    Raises:
        DataError: Missing/unknown manifest, or images and labels that disagree
    """
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    if not manifest_path.is_file():
        raise DataError(f"Synthetic manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"Malformed synthetic manifest {manifest_path}: {e}") from None
    if manifest.get("format") != SYNTH_FORMAT:
        raise DataError(f"{manifest_path} is not a {SYNTH_FORMAT} manifest (format={manifest.get('format')!r})")

    root = manifest_path.parent
    images = load_tensor(root / manifest["images"])
    table = pd.read_csv(root / manifest["params"], dtype={"filename": str}, float_precision="round_trip")
    if images.ndim != 4 or images.shape[0] != len(table):
        raise DataError(
            f"{root}: images tensor {tuple(images.shape)} does not match {len(table)} label rows"
        )

    samples, params = [], []
    for i, row in enumerate(table.itertuples(index=False)):
        samples.append(Sample(filename=row.filename, image=np.ascontiguousarray(images[i]),
                              score_raw=float(row.score)))
        params.append(SynthParams(float(row.symmetry), float(row.smoothness), float(row.spacing)))
    stats = compute_norm_stats(s.score_raw for s in samples) if len(samples) > 1 else NormStats(1.0, 5.0)
    attach_norm_scores(samples, stats)
    return SynthDataset(samples=samples, stats=stats, params=params, seed=int(manifest["seed"]),
                        image_size=int(manifest["image_size"]), oracle=manifest["oracle"])
