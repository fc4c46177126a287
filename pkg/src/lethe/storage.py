"""Small filesystem helpers: atomic snapshot writes.

Snapshots are committed with write-then-rename so a crash at any point
leaves either the previous file or the new one, never a torn write.
"""

from __future__ import annotations

import os
import tempfile

from .errors import StorageFailure


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write ``data`` to ``path`` atomically (tmp file + rename)."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    try:
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    except OSError as exc:
        raise StorageFailure(f"atomic write to {path} failed: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_path, path)
    except OSError as exc:
        try:
            os.unlink(tmp_path)
        except OSError:
            pass
        raise StorageFailure(f"atomic write to {path} failed: {exc}") from exc


def read_bytes(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise StorageFailure(f"cannot read {path}: {exc}") from exc
