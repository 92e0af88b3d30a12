# monitoring/serializers.py

"""
Serialization utilities for run logs.
Converts dataclass configs, numpy values, histories and reports into
JSON-serializable structures.
"""

import dataclasses
import math
from typing import Any, Dict

import numpy as np


def to_jsonable(value: Any) -> Any:
    """
    Recursively converts value into plain JSON types.

    - dataclasses become dicts
    - numpy scalars become Python numbers
    - numpy arrays are summarized (shape, dtype) rather than dumped
    - non-finite floats become the strings "inf", "-inf", "nan"
    """
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return {"shape": list(value.shape), "dtype": str(value.dtype)}
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    return str(value)


def serialize_report(report: Any) -> Dict[str, Any]:
    """EvalReport as a dict; an undefined correlation stays None."""
    return to_jsonable(report)
