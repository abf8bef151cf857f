"""Atomic file output and the flat key-value sidecar format."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path


def atomic_write_text(path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def format_value(value) -> str:
    if isinstance(value, float):
        return repr(float(value))  # plain-float repr even for numpy scalars
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def sidecar_text(fields: dict) -> str:
    """One `key = value` line per entry, skipping None values."""
    lines = [f"{key} = {format_value(value)}"
             for key, value in fields.items() if value is not None]
    return "\n".join(lines) + "\n"


def sidecar_path(out_path) -> Path:
    return Path(str(out_path) + ".meta")
