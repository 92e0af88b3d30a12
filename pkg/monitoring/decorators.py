# monitoring/decorators.py

"""
Stage instrumentation for pipeline functions.

    @monitor_stage(stage_name="crossval", pipeline_name="crossval")
    def run_crossval(...): ...

adds a stage_start event, then either stage_end (status "ok") or an error
event followed by stage_end (status "failed"). Both ends carry the stage
duration. Without an active MonitoringContext the function runs untouched.
"""

import functools
import time
from typing import Callable, Optional

from .core import MonitoringContext


def monitor_stage(stage_name: Optional[str] = None, pipeline_name: str = "run") -> Callable:
    """
    Args:
        stage_name: Event label; defaults to the wrapped function's name
        pipeline_name: Command the stage belongs to ("train", "ablate", "crossval")
    """
    def decorator(func: Callable) -> Callable:
        stage = stage_name or func.__name__

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            monitor = MonitoringContext.get_instance()
            if monitor is None:
                return func(*args, **kwargs)

            monitor.record_event("stage_start", pipeline_name=pipeline_name, stage_name=stage)
            started = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                elapsed = round((time.perf_counter() - started) * 1000, 2)
                monitor.record_error(e, context=f"{pipeline_name}.{stage}")
                monitor.record_event("stage_end", pipeline_name=pipeline_name, stage_name=stage,
                                     status="failed", duration_ms=elapsed)
                raise
            monitor.record_event("stage_end", pipeline_name=pipeline_name, stage_name=stage,
                                 status="ok", duration_ms=round((time.perf_counter() - started) * 1000, 2))
            return result

        return wrapper
    return decorator
