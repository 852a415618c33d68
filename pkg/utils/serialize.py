import math
from datetime import datetime

import numpy as np


def serialize_for_json(obj: dict) -> dict:
    """Convert a payload holding numpy values to a JSON-serializable dict"""
    result = {}
    for key, value in obj.items():
        if isinstance(value, np.ndarray):
            if value.size > 100:
                result[key] = f"<array of shape {list(value.shape)}>"
            else:
                result[key] = [_scalar(v) for v in value.ravel().tolist()]
        elif isinstance(value, (np.floating, float)):
            result[key] = _scalar(float(value))
        elif isinstance(value, np.integer):
            result[key] = int(value)
        elif isinstance(value, datetime):
            result[key] = value.isoformat()
        elif isinstance(value, bytes):
            result[key] = f"<binary data of size {len(value)} bytes>"
        elif isinstance(value, dict):
            result[key] = serialize_for_json(value)
        else:
            result[key] = value
    return result


def _scalar(v: float):
    # JSON has no inf/nan
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v
