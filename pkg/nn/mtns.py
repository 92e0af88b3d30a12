# nn/mtns.py

"""
MTNS1 raw tensor format.

Layout (all integers little-endian):
    magic      5 bytes  b"MTNS1"
    precision  1 byte   4 = f32, 8 = f64 (bytes per scalar)
    rank       u32
    extents    u32 x rank
    payload    product(extents) scalars, row-major, little-endian

Used standalone for synthetic image tensors and embedded in checkpoints.
"""

import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from errors import DataError
from nn.tensor import Tensor, precision_of

MAGIC = b"MTNS1"
_PRECISION_BYTES = {"f32": 4, "f64": 8}
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def encode_tensor(x: Tensor) -> bytes:
    """Serializes a tensor to an MTNS1 byte string."""
    width = _PRECISION_BYTES[precision_of(x)]
    header = MAGIC + struct.pack("<BI", width, x.ndim)
    header += struct.pack(f"<{x.ndim}I", *x.shape)
    payload = np.ascontiguousarray(x, dtype=_DTYPES[width]).tobytes(order="C")
    return header + payload


def decode_tensor(buf: bytes, offset: int = 0) -> Tuple[Tensor, int]:
    """
    Parses one MTNS1 tensor starting at offset.

    Returns:
        (tensor, offset just past the payload)

    Raises:
        DataError: Bad magic, unknown precision byte or truncated buffer
    """
    end = offset + len(MAGIC) + 5
    if len(buf) < end:
        raise DataError("Truncated MTNS1 header")
    if buf[offset:offset + len(MAGIC)] != MAGIC:
        raise DataError(f"Bad MTNS1 magic at byte {offset}")
    width, rank = struct.unpack_from("<BI", buf, offset + len(MAGIC))
    if width not in _DTYPES:
        raise DataError(f"Unknown MTNS1 precision byte {width}")
    if len(buf) < end + 4 * rank:
        raise DataError("Truncated MTNS1 extents")
    shape = struct.unpack_from(f"<{rank}I", buf, end)
    start = end + 4 * rank
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    stop = start + count * width
    if len(buf) < stop:
        raise DataError(
            f"Truncated MTNS1 payload: need {count * width} bytes, have {len(buf) - start}"
        )
    data = np.frombuffer(buf, dtype=_DTYPES[width], count=count, offset=start)
    native = np.float32 if width == 4 else np.float64
    return data.astype(native).reshape(shape), stop


def save_tensor(path: Union[str, Path], x: Tensor) -> None:
    Path(path).write_bytes(encode_tensor(x))


def load_tensor(path: Union[str, Path]) -> Tensor:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Tensor file not found: {path}")
    tensor, _ = decode_tensor(path.read_bytes())
    return tensor
