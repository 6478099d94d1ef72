"""Writer for the .geb store format.

Layout: magic b"GEB1", u32 LE row count, u32 LE dim, then rows of IEEE-754
binary32 little-endian values, row-major; ids in ``<path>.ids.json``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"GEB1"


def write_store(ids: list[str], data: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ValueError(f"data must be 2-D, got shape {data.shape}")
    if len(ids) != data.shape[0]:
        raise ValueError(f"{len(ids)} ids for {data.shape[0]} rows")
    if data.size and not np.isfinite(data).all():
        raise ValueError("embedding values must be finite")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.array(data.shape, dtype="<u4").tobytes())
        fh.write(data.tobytes())
    with open(f"{path}.ids.json", "w", encoding="utf-8") as fh:
        json.dump(list(ids), fh, ensure_ascii=False)
        fh.write("\n")
