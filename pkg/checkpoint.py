# checkpoint.py

"""
MCKP1 checkpoint files.

Layout (integers little-endian):
    magic        5 bytes  b"MCKP1"
    version      u32
    crc32        u32      zlib.crc32 of everything after this field
    body_length  u64
    body:
        header_length  u32
        header         canonical JSON (sorted keys, compact separators)
        blocks         for each name in header["tensors"]:
                           name_length u32, name (UTF-8), MTNS1 tensor

The header carries the ModelConfig, TrainConfig, AugmentConfig, NormStats,
epoch, RNG state, optimizer / scheduler / early-stopper scalars and the
history. Tensor block names:
    model/<param or buffer>     current weights and BN running statistics
    adam_m/<i>, adam_v/<i>      AdamW moments, in parameter order
    best/<param or buffer>      early-stopping snapshot (when present)

Writes go to a temporary file that is renamed into place, so a reader never
sees a partial checkpoint.
"""

import dataclasses
import json
import os
import struct
import tempfile
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from config_run import augment_config_from_dict, model_config_from_dict, train_config_from_dict
from errors import CheckpointError, DataError
from nn.mtns import decode_tensor, encode_tensor
from nn.tensor import Tensor
from state import AugmentConfig, ModelConfig, NormStats, TrainConfig

MAGIC = b"MCKP1"
CHECKPOINT_VERSION = 1
_PREAMBLE = struct.Struct("<5sIIQ")


@dataclass
class Checkpoint:
    """Everything needed to rebuild a model for inference or resume training."""

    model_config: ModelConfig
    model_state: "OrderedDict[str, Tensor]"
    norm_stats: NormStats
    epoch: int = 0
    kind: str = "best"  # "best" | "last"
    precision: str = "f32"
    train_config: Optional[TrainConfig] = None
    augment_config: Optional[AugmentConfig] = None
    optimizer: Optional[Dict[str, Any]] = None   # AdamW.state_dict()
    scheduler: Optional[Dict[str, Any]] = None   # PlateauScheduler.state_dict()
    stopper: Optional[Dict[str, Any]] = None     # EarlyStopper.state_dict()
    rng_state: Optional[Dict[str, Any]] = None
    history: List[Dict[str, Any]] = field(default_factory=list)
    version: int = CHECKPOINT_VERSION


def _config_dict(config) -> Optional[Dict[str, Any]]:
    if config is None:
        return None
    doc = dataclasses.asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in doc.items()}


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    tensors: "OrderedDict[str, Tensor]" = OrderedDict()
    for name, value in ckpt.model_state.items():
        tensors[f"model/{name}"] = value

    optimizer_scalars = None
    if ckpt.optimizer is not None:
        optimizer_scalars = {"t": ckpt.optimizer["t"], "lr": ckpt.optimizer["lr"],
                             "n_params": len(ckpt.optimizer["m"])}
        for i, (m, v) in enumerate(zip(ckpt.optimizer["m"], ckpt.optimizer["v"])):
            tensors[f"adam_m/{i}"] = m
            tensors[f"adam_v/{i}"] = v

    stopper_scalars = None
    if ckpt.stopper is not None:
        stopper_scalars = {k: v for k, v in ckpt.stopper.items() if k != "snapshot"}
        stopper_scalars["has_snapshot"] = ckpt.stopper.get("snapshot") is not None
        for name, value in (ckpt.stopper.get("snapshot") or {}).items():
            tensors[f"best/{name}"] = value

    header = {
        "version": ckpt.version,
        "kind": ckpt.kind,
        "epoch": ckpt.epoch,
        "precision": ckpt.precision,
        "model_config": _config_dict(ckpt.model_config),
        "train_config": _config_dict(ckpt.train_config),
        "augment_config": _config_dict(ckpt.augment_config),
        "norm_stats": _config_dict(ckpt.norm_stats),
        "optimizer": optimizer_scalars,
        "scheduler": ckpt.scheduler,
        "stopper": stopper_scalars,
        "rng_state": ckpt.rng_state,
        "history": ckpt.history,
        "tensors": list(tensors),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    parts = [struct.pack("<I", len(header_bytes)), header_bytes]
    for name, value in tensors.items():
        encoded_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded_name)))
        parts.append(encoded_name)
        parts.append(encode_tensor(value))
    body = b"".join(parts)
    return _PREAMBLE.pack(MAGIC, ckpt.version, zlib.crc32(body), len(body)) + body


def decode_checkpoint(buf: bytes) -> Checkpoint:
    """
    Parses MCKP1 bytes.

    Raises:
        CheckpointError: Bad magic, unsupported version, truncation, checksum
            mismatch or malformed content
    """
    if len(buf) < _PREAMBLE.size:
        raise CheckpointError(f"Checkpoint truncated: {len(buf)} bytes is shorter than the header")
    magic, version, crc, body_length = _PREAMBLE.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError(f"Not a checkpoint file: magic {magic!r}, expected {MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint version {version}; this build reads version {CHECKPOINT_VERSION}"
        )
    body = buf[_PREAMBLE.size:]
    if len(body) != body_length:
        raise CheckpointError(
            f"Checkpoint truncated or padded: body is {len(body)} bytes, header says {body_length}"
        )
    if zlib.crc32(body) != crc:
        raise CheckpointError("Checkpoint checksum mismatch: the file is corrupted")

    try:
        (header_length,) = struct.unpack_from("<I", body, 0)
        header = json.loads(body[4:4 + header_length].decode("utf-8"))
        offset = 4 + header_length
        tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for name in header["tensors"]:
            (name_length,) = struct.unpack_from("<I", body, offset)
            offset += 4
            stored = body[offset:offset + name_length].decode("utf-8")
            offset += name_length
            if stored != name:
                raise CheckpointError(f"Tensor block order mismatch: expected {name!r}, found {stored!r}")
            tensors[name], offset = decode_tensor(body, offset)
        if offset != len(body):
            raise CheckpointError(f"Checkpoint has {len(body) - offset} trailing bytes")

        def prefixed(prefix: str) -> "OrderedDict[str, Tensor]":
            return OrderedDict((k[len(prefix):], v) for k, v in tensors.items() if k.startswith(prefix))

        optimizer = None
        if header["optimizer"] is not None:
            n = header["optimizer"]["n_params"]
            optimizer = {
                "t": header["optimizer"]["t"],
                "lr": header["optimizer"]["lr"],
                "m": [tensors[f"adam_m/{i}"] for i in range(n)],
                "v": [tensors[f"adam_v/{i}"] for i in range(n)],
            }

        stopper = None
        if header["stopper"] is not None:
            stopper = {k: v for k, v in header["stopper"].items() if k != "has_snapshot"}
            stopper["snapshot"] = prefixed("best/") if header["stopper"]["has_snapshot"] else None

        def optional(loader, doc):
            return None if doc is None else loader(doc)

        return Checkpoint(
            model_config=model_config_from_dict(header["model_config"]),
            model_state=prefixed("model/"),
            norm_stats=NormStats(**{k: tuple(v) if isinstance(v, list) else v
                                    for k, v in header["norm_stats"].items()}),
            epoch=header["epoch"],
            kind=header["kind"],
            precision=header["precision"],
            train_config=optional(train_config_from_dict, header["train_config"]),
            augment_config=optional(augment_config_from_dict, header["augment_config"]),
            optimizer=optimizer,
            scheduler=header["scheduler"],
            stopper=stopper,
            rng_state=header["rng_state"],
            history=header["history"],
            version=version,
        )
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError, struct.error, UnicodeDecodeError, DataError) as e:
        raise CheckpointError(f"Malformed checkpoint content: {e}") from None


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    """Atomically writes ckpt to path (temp file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode_checkpoint(ckpt)
    fd, tmp_name = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        return decode_checkpoint(path.read_bytes())
    except CheckpointError as e:
        raise CheckpointError(f"{path}: {e}") from None
