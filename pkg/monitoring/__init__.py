# monitoring/__init__.py

"""
Monitoring package for Mamba-CNN runs.

Provides the run timeline (stages, epochs, optional per-batch steps),
config snapshots and JSON run logs.
"""

from .core import MonitoringContext
from .decorators import monitor_stage

__all__ = [
    "MonitoringContext",
    "monitor_stage"
]

__version__ = "1.0.0"
