# data/transforms.py

"""
Image transforms on [3, H, W] tensors in [0, 1].

Training pipeline (fixed order):
    resize -> random crop -> horizontal flip -> brightness -> contrast
    -> saturation -> hue -> rotation (bilinear, black fill) -> normalize

Resizing is bilinear with the corner-aligned convention: output pixel i
samples input coordinate i * (in - 1) / (out - 1), so the four corner pixels
are preserved exactly and resizing to the same size is the identity. A single
output row/column samples the input center.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy import ndimage

from data.dataset import normalize_image
from errors import DataError
from nn.tensor import Rng, Tensor
from state import AugmentConfig, NormStats

# ITU-R 601 luma weights
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


def _require_image(image: Tensor) -> None:
    if image.ndim != 3 or image.shape[0] != 3 or image.shape[1] < 1 or image.shape[2] < 1:
        raise DataError(f"Expected an image tensor [3, H, W] with H, W >= 1, got {tuple(image.shape)}")


def _sample_coords(n_in: int, n_out: int):
    if n_out == 1:
        src = np.array([(n_in - 1) / 2.0])
    else:
        src = np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(src).astype(np.int64), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(image: Tensor, out_h: int, out_w: int) -> Tensor:
    """Corner-aligned bilinear resize of a [C, H, W] tensor."""
    if out_h < 1 or out_w < 1:
        raise DataError(f"resize target must be >= 1x1, got {out_h}x{out_w}")
    if image.ndim != 3:
        raise DataError(f"resize_bilinear expects [C, H, W], got {tuple(image.shape)}")
    src = image.astype(np.float64, copy=False)
    r_lo, r_hi, r_frac = _sample_coords(image.shape[1], out_h)
    c_lo, c_hi, c_frac = _sample_coords(image.shape[2], out_w)
    rows = src[:, r_lo, :] * (1.0 - r_frac)[None, :, None] + src[:, r_hi, :] * r_frac[None, :, None]
    out = rows[:, :, c_lo] * (1.0 - c_frac)[None, None, :] + rows[:, :, c_hi] * c_frac[None, None, :]
    return np.ascontiguousarray(out.astype(image.dtype))


def crop(image: Tensor, top: int, left: int, size: int) -> Tensor:
    if top < 0 or left < 0 or top + size > image.shape[1] or left + size > image.shape[2]:
        raise DataError(f"Crop {size}x{size} at ({top}, {left}) exceeds image {image.shape[1]}x{image.shape[2]}")
    return np.ascontiguousarray(image[:, top:top + size, left:left + size])


def center_crop(image: Tensor, size: int) -> Tensor:
    return crop(image, (image.shape[1] - size) // 2, (image.shape[2] - size) // 2, size)


def hflip(image: Tensor) -> Tensor:
    return np.ascontiguousarray(image[:, :, ::-1])


def grayscale(image: Tensor) -> Tensor:
    r, g, b = GRAY_WEIGHTS
    return r * image[0] + g * image[1] + b * image[2]


def adjust_brightness(image: Tensor, factor: float) -> Tensor:
    return np.clip(image * factor, 0.0, 1.0).astype(image.dtype, copy=False)


def adjust_contrast(image: Tensor, factor: float) -> Tensor:
    mean = float(np.mean(grayscale(image)))
    return np.clip((image - mean) * factor + mean, 0.0, 1.0).astype(image.dtype, copy=False)


def adjust_saturation(image: Tensor, factor: float) -> Tensor:
    gray = grayscale(image)[None, :, :]
    return np.clip(gray + factor * (image - gray), 0.0, 1.0).astype(image.dtype, copy=False)


def adjust_hue(image: Tensor, shift: float) -> Tensor:
    """Rotates hue by shift (fraction of the hue circle) in HSV space."""
    hsv = rgb_to_hsv(np.clip(image.transpose(1, 2, 0), 0.0, 1.0))
    hsv[..., 0] = np.mod(hsv[..., 0] + shift, 1.0)
    rgb = hsv_to_rgb(hsv)
    return np.ascontiguousarray(np.clip(rgb.transpose(2, 0, 1), 0.0, 1.0).astype(image.dtype))


def rotate(image: Tensor, degrees: float) -> Tensor:
    """Rotation about the image center, bilinear, black outside the source."""
    out = ndimage.rotate(image, degrees, axes=(2, 1), reshape=False, order=1, mode="constant", cval=0.0)
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0).astype(image.dtype))


@dataclass
class AugmentParams:
    """One draw of every random choice in the training pipeline."""

    top: int
    left: int
    flip: bool
    brightness: float
    contrast: float
    saturation: float
    hue: float
    angle: float

    @classmethod
    def identity(cls, cfg: AugmentConfig) -> "AugmentParams":
        """Center crop with every other transform disabled."""
        offset = (cfg.resize_to - cfg.crop_to) // 2
        return cls(offset, offset, False, 1.0, 1.0, 1.0, 0.0, 0.0)


def sample_augment_params(cfg: AugmentConfig, rng: Rng) -> AugmentParams:
    """Draws every random choice from rng in a fixed order."""
    span = cfg.resize_to - cfg.crop_to + 1
    top = rng.integers(0, span)
    left = rng.integers(0, span)
    flip = rng.uniform(0.0, 1.0) < cfg.hflip_prob
    brightness = rng.uniform(*cfg.brightness)
    contrast = rng.uniform(*cfg.contrast)
    saturation = rng.uniform(*cfg.saturation)
    hue = rng.uniform(-cfg.hue, cfg.hue)
    angle = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
    return AugmentParams(top, left, flip, brightness, contrast, saturation, hue, angle)


def apply_augment(image: Tensor, cfg: AugmentConfig, params: AugmentParams) -> Tensor:
    """Runs the training pipeline with fixed draws; output is [3, crop, crop] in [0, 1]."""
    _require_image(image)
    out = resize_bilinear(image, cfg.resize_to, cfg.resize_to)
    out = crop(out, params.top, params.left, cfg.crop_to)
    if params.flip:
        out = hflip(out)
    if params.brightness != 1.0:
        out = adjust_brightness(out, params.brightness)
    if params.contrast != 1.0:
        out = adjust_contrast(out, params.contrast)
    if params.saturation != 1.0:
        out = adjust_saturation(out, params.saturation)
    if params.hue != 0.0:
        out = adjust_hue(out, params.hue)
    if params.angle != 0.0:
        out = rotate(out, params.angle)
    return out


def augment_train(image: Tensor, cfg: AugmentConfig, rng: Rng,
                  stats: Optional[NormStats] = None, normalize: bool = True) -> Tensor:
    """
    Random training view of an image; deterministic given rng.

    Args:
        image: [3, H, W] in [0, 1]
        cfg: Augmentation settings
        rng: Stream for this (epoch, sample) pair
        stats: Image mean/std for normalization (ImageNet when None)
        normalize: Apply per-channel normalization at the end

    Returns:
        Tensor: [3, crop_to, crop_to]
    """
    out = apply_augment(image, cfg, sample_augment_params(cfg, rng))
    return normalize_image(out, stats) if normalize else out


def transform_eval(image: Tensor, size: int, stats: Optional[NormStats] = None,
                   normalize: bool = True) -> Tensor:
    """Direct resize to size x size (no crop), then normalization."""
    _require_image(image)
    out = resize_bilinear(image, size, size)
    return normalize_image(out, stats) if normalize else out
