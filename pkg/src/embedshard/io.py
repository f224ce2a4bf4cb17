"""Small file helpers."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path


def write_atomic(path: str | Path, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file + rename, so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def thread_cap(default: int | None = None) -> int:
    """Worker count from EMBEDSHARD_THREADS (falls back to the CPU count)."""
    raw = os.environ.get("EMBEDSHARD_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"EMBEDSHARD_THREADS must be an integer, got {raw!r}") from None
        return max(1, n)
    return default or (os.cpu_count() or 1)
