"""Atomic text output and float formatting for persisted artifacts.

All data files are written atomically (temp file in the target directory,
then ``os.replace``) so a crashed run never leaves a half-written artifact.
Floats are serialized with ``repr``, which round-trips every finite double
exactly; rereading a persisted file therefore reproduces results bit for
bit.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

__all__ = ["atomic_write_text", "fmt_float"]


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def fmt_float(x: float) -> str:
    """Shortest decimal string that parses back to exactly the same double."""
    return repr(float(x))
