"""Small file helpers: atomic writes and CSV tables."""
from __future__ import annotations

import contextlib
import csv
import os
import tempfile
from typing import Iterable, Sequence


@contextlib.contextmanager
def atomic_write(path, mode: str = "w", newline: str | None = ""):
    """Write to a temporary file next to ``path`` and rename on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, mode, newline=newline) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with atomic_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def fmt(x) -> str:
    """Deterministic float formatting for tables; NaN becomes ``NA``."""
    if x is None:
        return "NA"
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    xf = float(x)
    if xf != xf:
        return "NA"
    return "%.10g" % xf
