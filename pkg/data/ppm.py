# data/ppm.py

"""
Binary P6 PPM codec. Decoded images are float32 [3, H, W] in [0, 1].

Other formats (JPEG, PNG, ...) go through Pillow when it is installed.
"""

import re
from pathlib import Path
from typing import Union

import numpy as np

from errors import DataError
from nn.tensor import Tensor

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_header(buf: bytes):
    """Returns (width, height, maxval, payload_offset)."""
    fields = []
    pos = 0
    while len(fields) < 4:
        match = _TOKEN.match(buf, pos)
        if match is None:
            raise DataError("Truncated PPM header")
        fields.append(match.group(1))
        pos = match.end()
    if fields[0] != b"P6":
        raise DataError(f"Not a binary PPM: magic {fields[0][:8]!r}, expected b'P6'")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise DataError(f"Malformed PPM header fields: {fields[1:]}") from None
    if width < 1 or height < 1:
        raise DataError(f"PPM extents must be >= 1, got {width}x{height}")
    if not 1 <= maxval <= 255:
        raise DataError(f"Unsupported PPM maxval {maxval}; only 8-bit (<= 255) images are supported")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise DataError("Truncated PPM header")
    return width, height, maxval, pos + 1


def decode_ppm(buf: bytes) -> Tensor:
    """
    Decodes a binary P6 PPM into a [3, H, W] float32 tensor scaled to [0, 1].

    Raises:
        DataError: Bad magic, malformed header or truncated raster
    """
    width, height, maxval, offset = _read_header(buf)
    expected = width * height * 3
    raster = buf[offset:offset + expected]
    if len(raster) < expected:
        raise DataError(f"Truncated PPM raster: expected {expected} bytes, got {len(raster)}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return np.ascontiguousarray(pixels.transpose(2, 0, 1).astype(np.float32) / np.float32(maxval))


def encode_ppm(image: Tensor) -> bytes:
    """Encodes a [3, H, W] image in [0, 1] as a P6 PPM (maxval 255, values rounded)."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"encode_ppm expects [3, H, W], got {tuple(image.shape)}")
    _, height, width = image.shape
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(pixels.transpose(1, 2, 0)).tobytes()


def write_ppm(path: Union[str, Path], image: Tensor) -> None:
    Path(path).write_bytes(encode_ppm(image))


def load_image(path: Union[str, Path]) -> Tensor:
    """
    Loads an image file as [3, H, W] float32 in [0, 1].

    .ppm is decoded natively; any other extension is decoded through Pillow.

    Raises:
        DataError: Missing file, undecodable data, or Pillow unavailable for a
            non-PPM file
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Image file not found: {path}")
    if path.suffix.lower() == ".ppm":
        try:
            return decode_ppm(path.read_bytes())
        except DataError as e:
            raise DataError(f"{path}: {e}") from None

    try:
        from PIL import Image
    except ImportError:
        raise DataError(
            f"Cannot decode {path.name}: only .ppm is supported without Pillow.\n"
            f"Install Pillow or convert the image to binary PPM (P6)."
        ) from None
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / np.float32(255.0)
    except (OSError, ValueError) as e:
        raise DataError(f"Cannot decode image {path}: {e}") from None
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))

