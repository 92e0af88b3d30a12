# split_manifest.py

"""
Fold Manifest Manager for cross-validation splits

A split directory holds one plain text manifest per fold, `fold<k>.txt`,
listing the held-out image filenames one per line. Everything not listed in
a fold belongs to that fold's training pool.

Features:
- Plain text manifests (blank lines ignored, duplicates rejected)
- Deterministic fold generation from a seed
- File locking so two writers never interleave
- Atomic writes (temp file + rename)
"""

import fcntl
import os
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from errors import DataError
from nn.tensor import Rng
from state import Sample

FOLD_PATTERN = re.compile(r"^fold(\d+)\.txt$")


def fold_path(split_dir: Union[str, Path], k: int) -> Path:
    return Path(split_dir) / f"fold{k}.txt"


def read_fold(path: Union[str, Path]) -> List[str]:
    """
    Reads a fold manifest.

    Returns:
        list[str]: Filenames in file order

    Raises:
        DataError: Missing file, empty manifest or a duplicated filename

    Example:
        >>> read_fold("splits/fold1.txt")[:2]
        ['AF1.jpg', 'AF10.jpg']
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Fold manifest not found: {path}")
    names: List[str] = []
    seen: Dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            name = line.strip()
            if not name:
                continue
            if name in seen:
                raise DataError(
                    f"{path}: line {line_no} repeats {name!r} (first seen on line {seen[name]})"
                )
            seen[name] = line_no
            names.append(name)
    if not names:
        raise DataError(f"Fold manifest is empty: {path}")
    return names


class _ManifestLock:
    """Exclusive advisory lock on `<split_dir>/.manifest.lock` (blocking)."""

    def __init__(self, split_dir: Path):
        self.lock_file = split_dir / ".manifest.lock"
        self.fd: Optional[int] = None

    def __enter__(self) -> "_ManifestLock":
        self.fd = os.open(str(self.lock_file), os.O_CREAT | os.O_RDWR)
        fcntl.flock(self.fd, fcntl.LOCK_EX)
        return self

    def __exit__(self, *exc) -> None:
        if self.fd is not None:
            try:
                fcntl.flock(self.fd, fcntl.LOCK_UN)
                os.close(self.fd)
            except OSError as e:
                print(f"[WARN] Failed to release manifest lock: {e}")
            self.fd = None


def write_fold(path: Union[str, Path], filenames: Iterable[str]) -> Path:
    """
    Atomically writes a fold manifest (one filename per line, trailing newline).

    Raises:
        DataError: Empty list, duplicate names or names containing newlines
    """
    path = Path(path)
    names = [str(n) for n in filenames]
    if not names:
        raise DataError(f"Refusing to write an empty fold manifest: {path}")
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise DataError(f"Fold manifest {path} would contain duplicates: {duplicates[:5]}")
    if any(not n.strip() or "\n" in n or n != n.strip() for n in names):
        raise DataError(f"Fold manifest {path}: filenames must be non-empty single-line names")

    path.parent.mkdir(parents=True, exist_ok=True)
    with _ManifestLock(path.parent):
        temp_file = path.with_suffix(".tmp")
        with open(temp_file, "w", encoding="utf-8") as f:
            f.write("\n".join(names) + "\n")
        temp_file.replace(path)
    return path


def list_folds(split_dir: Union[str, Path]) -> List[Tuple[int, Path]]:
    """
    Returns (k, path) for every fold<k>.txt in split_dir, sorted by k.

    Raises:
        DataError: Missing directory or no manifests in it
    """
    split_dir = Path(split_dir)
    if not split_dir.is_dir():
        raise DataError(f"Split directory not found: {split_dir}")
    folds = []
    for entry in split_dir.iterdir():
        match = FOLD_PATTERN.match(entry.name)
        if match and entry.is_file():
            folds.append((int(match.group(1)), entry))
    if not folds:
        raise DataError(
            f"No fold manifests in {split_dir}\n"
            f"Expected files named fold1.txt, fold2.txt, ... (one filename per line)"
        )
    return sorted(folds)


def make_folds(filenames: Sequence[str], k: int, seed: int) -> List[List[str]]:
    """
    Deterministic k-way partition: shuffles with Rng(seed).derive("folds") and
    deals round-robin, then sorts each fold.

    Raises:
        DataError: k < 2, more folds than files, or duplicate filenames
    """
    names = list(filenames)
    if k < 2:
        raise DataError(f"Cross-validation needs k >= 2 folds, got {k}")
    if len(names) < k:
        raise DataError(f"Cannot split {len(names)} files into {k} folds")
    if len(set(names)) != len(names):
        raise DataError("make_folds received duplicate filenames")
    order = Rng(seed).derive("folds").permutation(len(names))
    folds: List[List[str]] = [[] for _ in range(k)]
    for position, idx in enumerate(order):
        folds[position % k].append(names[int(idx)])
    return [sorted(fold) for fold in folds]


def write_folds(split_dir: Union[str, Path], folds: Sequence[Sequence[str]]) -> List[Path]:
    """Writes fold1.txt .. fold<k>.txt."""
    return [write_fold(fold_path(split_dir, i + 1), fold) for i, fold in enumerate(folds)]


def partition_by_fold(samples: Sequence[Sample], held_out: Sequence[str]) -> Tuple[List[Sample], List[Sample]]:
    """
    Splits samples into (training pool, held-out fold), preserving input order.

    Raises:
        DataError: A manifest filename that is not among the samples
    """
    known = {s.filename for s in samples}
    missing = [name for name in held_out if name not in known]
    if missing:
        raise DataError(
            f"{len(missing)} fold filename(s) are absent from the labels, e.g. {missing[0]!r}"
        )
    held = set(held_out)
    pool = [s for s in samples if s.filename not in held]
    test = [s for s in samples if s.filename in held]
    if not pool:
        raise DataError("Fold leaves no samples for training")
    return pool, test


# CLI utility for manual manifest management
if __name__ == "__main__":
    """
    Usage:
        python split_manifest.py status SPLIT_DIR    # List folds and their sizes
    """
    import sys

    if len(sys.argv) < 3 or sys.argv[1].lower() != "status":
        print("Usage:")
        print("  python split_manifest.py status SPLIT_DIR")
        sys.exit(1)

    try:
        for k, path in list_folds(sys.argv[2]):
            print(f"fold{k}: {len(read_fold(path))} files ({path})")
    except DataError as e:
        print(f"[ERROR] {e}")
        sys.exit(e.exit_code)
