# monitoring/core.py

"""
Run monitoring for Mamba-CNN commands.

A MonitoringContext collects what happened during one CLI run (stages,
epoch ends, lr reductions, early stops, errors and, with trace_steps, every
forward/backward/clip/optimizer_step) and writes it as one JSON log when the
run finalizes. Nothing here feeds back into the numbers being computed.

Only one context is active at a time; library code reaches it through
MonitoringContext.get_instance() and does nothing when it is None.
"""

import threading
import traceback
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from .serializers import to_jsonable
from .writer import MonitoringWriter


def _utc_stamp(moment: Optional[datetime] = None) -> str:
    moment = moment or datetime.now(timezone.utc)
    return moment.isoformat().replace("+00:00", "Z")


class MonitoringContext:
    """
    Event timeline plus config snapshots and a result summary for one run.

    Appends go through a lock because the batch loader and the ablation
    driver may record from worker threads.
    """

    _instance: Optional["MonitoringContext"] = None
    _lock = threading.Lock()

    def __init__(self, run_name: str, log_dir: str = "./run_logs", trace_steps: bool = False,
                 write_log: bool = True):
        """
        Args:
            run_name: Command being monitored ("train", "ablate", "crossval")
            log_dir: Root folder for run logs
            trace_steps: Keep per-batch step events
            write_log: Write the JSON log on finalize
        """
        self.run_id = str(uuid.uuid4())
        self.run_name = run_name
        self.trace_steps = trace_steps
        self.writer = MonitoringWriter(log_dir, run_name, self.run_id) if write_log else None
        self.log_path: Optional[Path] = None

        self._events_lock = threading.Lock()
        self._timeline: List[Dict[str, Any]] = []
        self._snapshots: List[Dict[str, Any]] = []
        self._summary: Dict[str, Any] = {}
        self._started: Optional[datetime] = None

    @classmethod
    def get_instance(cls) -> Optional["MonitoringContext"]:
        return cls._instance

    def start(self) -> "MonitoringContext":
        """Makes this the active context and opens the timeline."""
        with MonitoringContext._lock:
            MonitoringContext._instance = self
        self._started = datetime.now(timezone.utc)
        self.record_event("monitoring_start", status="initialized", run_name=self.run_name)
        return self

    def record_event(self, event_type: str, **fields):
        with self._events_lock:
            self._timeline.append({
                "sequence": len(self._timeline) + 1,
                "timestamp": _utc_stamp(),
                "thread_id": threading.current_thread().name,
                "event_type": event_type,
                **to_jsonable(fields),
            })

    def record_step(self, event_type: str, **fields):
        """Per-batch event; dropped unless trace_steps is on."""
        if self.trace_steps:
            self.record_event(event_type, **fields)

    def record_config_snapshot(self, name: str, config: Any):
        with self._events_lock:
            self._snapshots.append({"timestamp": _utc_stamp(), "name": name, "config": to_jsonable(config)})

    def update_summary(self, **fields):
        with self._events_lock:
            self._summary.update(to_jsonable(fields))

    def record_error(self, exception: Exception, context: str):
        """Error event with the active traceback (call from inside an except block)."""
        self.record_event("error", error={
            "error_type": type(exception).__name__,
            "error_message": str(exception),
            "exit_code": getattr(exception, "exit_code", None),
            "traceback": traceback.format_exc(),
            "context": context,
        })

    def events(self, event_type: Optional[str] = None) -> List[Dict[str, Any]]:
        """Copy of the timeline, optionally filtered by event type."""
        with self._events_lock:
            return [dict(e) for e in self._timeline if event_type is None or e["event_type"] == event_type]

    def finalize(self, status: str = "completed", failure_reason: Optional[str] = None) -> Dict[str, Any]:
        """
        Closes the run, writes the log (when enabled) and releases the
        active-context slot.

        Args:
            status: "completed" or "failed"
            failure_reason: Error text for a failed run

        Returns:
            The full log document
        """
        ended = datetime.now(timezone.utc)
        with self._events_lock:
            document = {
                "run_metadata": {
                    "run_id": self.run_id,
                    "run_name": self.run_name,
                    "start_time": _utc_stamp(self._started) if self._started else None,
                    "end_time": _utc_stamp(ended),
                    "duration_seconds": round((ended - self._started).total_seconds(), 3) if self._started else 0.0,
                    "status": status,
                    "failure_reason": failure_reason,
                    "trace_steps": self.trace_steps,
                },
                "summary": dict(self._summary),
                "execution_timeline": list(self._timeline),
                "config_snapshots": list(self._snapshots),
            }

        if self.writer is not None:
            self.log_path = self.writer.write(document)

        with MonitoringContext._lock:
            if MonitoringContext._instance is self:
                MonitoringContext._instance = None
        return document
