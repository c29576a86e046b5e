"""Small I/O helpers: transparent gzip text streams, atomic file writes,
content digests, and the canonical float formatting used in TSV outputs."""

from __future__ import annotations

import gzip
import hashlib
import math
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Iterator


class ConfigError(ValueError):
    """Bad or missing configuration; maps to exit code 2 at the CLI."""


def open_text(path: str | Path, mode: str = "rt") -> IO[str]:
    """Open a text file, decompressing transparently when the name ends in .gz."""
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode, encoding="utf-8")  # type: ignore[return-value]
    return open(path, mode, encoding="utf-8")


@contextmanager
def atomic_write(path: str | Path) -> Iterator[IO[str]]:
    """Write to a temp file in the target directory, then rename into place.

    Readers never observe a partially written file; on error the temp file
    is removed and the destination is left untouched.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    tmp = Path(tmp_name)
    try:
        if path.suffix == ".gz":
            os.close(fd)
            # mtime=0 keeps gzip output byte-identical across runs
            with open(tmp, "wb") as raw:
                with gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as gz:
                    import io

                    wrapper = io.TextIOWrapper(gz, encoding="utf-8", newline="")
                    yield wrapper
                    wrapper.flush()
                    wrapper.detach()
        else:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
                yield handle
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def fmt_float(x: float, places: int = 6) -> str:
    """Fixed canonical formatting so identical runs emit identical bytes."""
    if x != x:
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.{places}f}"
