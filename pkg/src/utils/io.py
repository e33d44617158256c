"""Atomic artifact writing: CSV tables with '#' metadata headers and JSON reports."""

import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


def atomic_write_text(path, text):
    """Write text to path via a temp file in the same directory and os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug("wrote %s", path)
    return path


def to_jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def dumps_json(obj):
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(obj, path):
    return atomic_write_text(path, dumps_json(obj))


def frame_to_csv_text(frame, metadata=None):
    """CSV text with one '# key=value' line per metadata item before the header."""
    buffer = io.StringIO()
    for key, value in sorted((metadata or {}).items()):
        buffer.write(f"# {key}={value}\n")
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def write_csv(frame, path, metadata=None):
    return atomic_write_text(path, frame_to_csv_text(frame, metadata))


def read_csv(path):
    """Read a CSV written by write_csv; returns (frame, metadata)."""
    metadata = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            metadata[key] = value
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    return frame, metadata
