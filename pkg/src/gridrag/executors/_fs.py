"""Atomic file replacement and an advisory single-writer lock."""
from __future__ import annotations

import contextlib
import os
import tempfile
from pathlib import Path

from ..errors import WriteConflict


def lock_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".lock")


@contextlib.contextmanager
def file_lock(path: str | Path):
    """Exclusive lock on ``path`` via an O_EXCL lockfile; fails fast if held."""
    lp = lock_path(path)
    try:
        fd = os.open(lp, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
    except FileExistsError:
        raise WriteConflict(f"{path} is locked by another writer ({lp} exists)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield lp
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(lp)


def stage_bytes(path: str | Path, data: bytes) -> Path:
    """Write ``data`` to a temp file next to ``path`` and return the temp path."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise
    return Path(tmp)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    tmp = stage_bytes(path, data)
    os.replace(tmp, path)
