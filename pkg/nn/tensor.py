# nn/tensor.py

"""
Core tensor helpers.

A Tensor is a C-contiguous numpy.ndarray whose dtype is float32 ("f32") or
float64 ("f64"). Rank-4 tensors are NCHW. No broadcasting is performed by the
helpers in this module: shapes must match exactly.

Randomness flows through Rng, a thin wrapper around numpy's PCG64 bit
generator. PCG64 is a documented, platform-independent generator, so a given
seed and call sequence reproduces the same stream on every machine. Child
streams are derived with SeedSequence spawn keys, e.g. one stream per
(epoch, sample index) for augmentation.
"""

import zlib
from typing import Dict, Iterable, Sequence, Union

import numpy as np

from errors import ShapeError

Tensor = np.ndarray

PRECISIONS: Dict[str, type] = {
    "f32": np.float32,
    "f64": np.float64,
}


def resolve_dtype(precision: str) -> np.dtype:
    """Maps a precision label ("f32" / "f64") to its numpy dtype."""
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError:
        raise ShapeError(
            f"Unknown precision: {precision!r}\n"
            f"Expected one of: {', '.join(PRECISIONS)}"
        ) from None


def precision_of(x: Tensor) -> str:
    """Returns the precision label of a tensor, rejecting other dtypes."""
    if x.dtype == np.float32:
        return "f32"
    if x.dtype == np.float64:
        return "f64"
    raise ShapeError(f"Unsupported tensor dtype {x.dtype}; tensors are f32 or f64")


def require_rank(x: Tensor, rank: int, what: str = "input") -> None:
    """Raises ShapeError unless x has exactly the given rank."""
    if x.ndim != rank:
        raise ShapeError(
            f"{what} must be rank-{rank}, got shape {tuple(x.shape)}"
            + (" (expected NCHW)" if rank == 4 else "")
        )


def tensor_full(shape: Sequence[int], value: float, precision: str = "f32") -> Tensor:
    """
    Creates a tensor of the given shape with every element equal to value.

    Args:
        shape: Non-negative extents
        value: Fill value
        precision: "f32" or "f64"

    Returns:
        Tensor: Freshly allocated contiguous tensor
    """
    if any(int(extent) < 0 for extent in shape):
        raise ShapeError(f"Negative extent in shape {tuple(shape)}")
    return np.full(tuple(int(e) for e in shape), value, dtype=resolve_dtype(precision))


_ELEMENTWISE_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    """
    Applies add / sub / mul elementwise to two tensors of identical shape.

    Raises:
        ShapeError: On shape or precision mismatch, or unknown op
    """
    if op not in _ELEMENTWISE_OPS:
        raise ShapeError(f"Unknown elementwise op {op!r}; expected add, sub or mul")
    if a.shape != b.shape:
        raise ShapeError(f"Shape mismatch in {op}: {tuple(a.shape)} vs {tuple(b.shape)}")
    if precision_of(a) != precision_of(b):
        raise ShapeError(f"Precision mismatch in {op}: {a.dtype} vs {b.dtype}")
    return _ELEMENTWISE_OPS[op](a, b)


def global_l2_norm(tensors: Iterable[Tensor]) -> float:
    """
    Square root of the sum of squares of every element across all tensors.

    Accumulates in float64, tensor by tensor in list order.

    Raises:
        ShapeError: If the list is empty
    """
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("global_l2_norm needs at least one tensor")
    total = 0.0
    for t in tensors:
        flat = np.asarray(t, dtype=np.float64).ravel()
        total += float(np.dot(flat, flat))
    return float(np.sqrt(total))


def _key_to_int(key: Union[int, str]) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


class Rng:
    """
    Deterministic random stream (PCG64).

    Example:
        >>> a, b = Rng(7), Rng(7)
        >>> a.uniform(0.0, 1.0) == b.uniform(0.0, 1.0)
        True
    """

    def __init__(self, seed: int, spawn_key: Sequence[int] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.spawn_key = tuple(int(k) for k in spawn_key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self._bitgen = np.random.PCG64(seq)
        self._gen = np.random.Generator(self._bitgen)

    def derive(self, *keys: Union[int, str]) -> "Rng":
        """Independent child stream keyed by (parent key..., keys...); ignores parent draws."""
        return Rng(self.seed, self.spawn_key + tuple(_key_to_int(k) for k in keys))

    def uniform(self, lo: float, hi: float) -> float:
        """Uniform scalar in [lo, hi); returns lo when lo == hi."""
        if hi < lo:
            raise ValueError(f"uniform needs lo <= hi, got [{lo}, {hi}]")
        return lo + (hi - lo) * float(self._gen.random())

    def normal(self, mean: float, std: float) -> float:
        """Gaussian scalar; std == 0 returns mean."""
        if std < 0:
            raise ValueError(f"normal needs std >= 0, got {std}")
        return mean + std * float(self._gen.standard_normal())

    def random(self, shape: Sequence[int], precision: str = "f64") -> Tensor:
        """Uniform [0, 1) tensor."""
        return self._gen.random(tuple(shape)).astype(resolve_dtype(precision), copy=False)

    def uniform_tensor(self, shape: Sequence[int], lo: float, hi: float, precision: str = "f32") -> Tensor:
        u = self._gen.random(tuple(shape))
        return (lo + (hi - lo) * u).astype(resolve_dtype(precision), copy=False)

    def normal_tensor(self, shape: Sequence[int], mean: float = 0.0, std: float = 1.0,
                      precision: str = "f32") -> Tensor:
        z = self._gen.standard_normal(tuple(shape))
        return (mean + std * z).astype(resolve_dtype(precision), copy=False)

    def integers(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi)."""
        return int(self._gen.integers(lo, hi))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def get_state(self) -> dict:
        """JSON-serializable generator state (seed, spawn key and PCG64 counters)."""
        state = self._bitgen.state
        return {
            "seed": self.seed,
            "spawn_key": list(self.spawn_key),
            "pcg64": {
                "state": int(state["state"]["state"]),
                "inc": int(state["state"]["inc"]),
                "has_uint32": int(state["has_uint32"]),
                "uinteger": int(state["uinteger"]),
            },
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"], state.get("spawn_key", ()))
        pcg = state["pcg64"]
        rng._bitgen.state = {
            "bit_generator": "PCG64",
            "state": {"state": pcg["state"], "inc": pcg["inc"]},
            "has_uint32": pcg["has_uint32"],
            "uinteger": pcg["uinteger"],
        }
        return rng
