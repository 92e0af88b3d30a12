# monitoring/writer.py

"""
Run-log persistence.

One JSON document per monitored CLI run, grouped in per-day folders:

    <log_dir>/2026-10-17/mambacnn_train_20261017_142345_a1b2c3d4.json

The document is written to a temp file in the same folder and renamed into
place, so a crashed run never leaves half a log behind.
"""

import json
import os
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

LOG_PREFIX = "mambacnn"


class MonitoringWriter:
    """Knows where one run's log goes and how to write it."""

    def __init__(self, log_dir: Union[str, Path], run_name: str, run_id: str,
                 now: Optional[datetime] = None):
        now = now or datetime.now()
        self.log_dir = Path(log_dir)
        self.run_name = run_name
        self.run_id = run_id
        self.output_dir = self.log_dir / now.strftime("%Y-%m-%d")
        self.filename = f"{LOG_PREFIX}_{run_name}_{now:%Y%m%d_%H%M%S}_{run_id.split('-')[0]}.json"
        self.filepath = self.output_dir / self.filename

    def write(self, data: Dict[str, Any]) -> Optional[Path]:
        """
        Atomically writes the log.

        Returns:
            Path of the written file, or None when writing failed (the run
            itself is not failed because of its log)
        """
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(prefix=".", suffix=".json.tmp", dir=self.output_dir)
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(data, f, ensure_ascii=False, indent=2)
                f.write("\n")
            os.replace(tmp, self.filepath)
        except (OSError, TypeError, ValueError) as e:
            print(f"[WARN] Run log not written to {self.filepath}: {type(e).__name__}: {e}")
            return None

        size_kb = self.filepath.stat().st_size / 1024
        print(f"[INFO] Run log saved: {self.filepath} ({size_kb:.1f} KB, run {self.run_id})")
        return self.filepath


def find_run_logs(log_dir: Union[str, Path], run_name: Optional[str] = None) -> List[Path]:
    """Run logs under log_dir (optionally for one command), oldest first."""
    pattern = f"{LOG_PREFIX}_{run_name}_*.json" if run_name else f"{LOG_PREFIX}_*.json"
    return sorted(Path(log_dir).glob(f"*/{pattern}"), key=lambda p: p.name.split("_", 2)[-1])
