# errors.py

"""
Exception taxonomy for the Mamba-CNN toolkit.

Every error a CLI command can surface derives from MambaCnnError and carries
the exit code the command returns for it:
    0 ok, 1 usage/config, 2 data, 3 numeric abort
"""


class MambaCnnError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(MambaCnnError, ValueError):
    """Invalid RunConfig, preset, variant label or CLI flag combination."""

    exit_code = 1


class DataError(MambaCnnError, ValueError):
    """Dataset, CSV, manifest or image decoding problem."""

    exit_code = 2


class TrainingAbort(MambaCnnError, RuntimeError):
    """Training stopped on a non-finite loss."""

    exit_code = 3

    def __init__(self, message: str, epoch: int = None, batch_index: int = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index


class CheckpointError(MambaCnnError, ValueError):
    """Unreadable checkpoint: bad magic, version mismatch, checksum or truncation."""

    exit_code = 1


class ShapeError(MambaCnnError, ValueError):
    """Tensor shape, rank, precision or channel contract violated."""

    exit_code = 1


class BackwardBeforeForwardError(MambaCnnError, RuntimeError):
    """backward() called on a layer with no recorded forward pass."""

    exit_code = 1


class UndefinedCorrelationError(MambaCnnError, ValueError):
    """Pearson correlation requested for a series with zero variance."""

    exit_code = 3
