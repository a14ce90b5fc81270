"""Small shared helpers."""

from __future__ import annotations

import hashlib
import os
import tempfile


def stable_digest(text: str, salt: str = "") -> int:
    """Platform-stable 64-bit digest (unlike hash(), which is randomized)."""
    h = hashlib.md5((salt + text).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


def atomic_write_text(path: str, data: str):
    """Write via a temp file in the target directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
