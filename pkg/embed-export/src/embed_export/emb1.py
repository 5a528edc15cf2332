"""Writer for the EMB1 embedding container.

Layout: magic "EMB1", then format version, row count, and dimension as
little-endian u32, then float32 row-major data. The byte layout is the
interface to the downstream testing toolkit, so it must not drift.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"EMB1"
VERSION = 1
_HEADER = struct.Struct("<III")


def write_embeddings(path, rows) -> None:
    """Write a 2-d float array as an EMB1 file (float32 storage)."""
    with np.errstate(over="ignore"):  # overflow is caught by the check below
        rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {rows.shape}")
    n, d = rows.shape
    if n < 1 or d < 1:
        raise ValueError(f"refusing to write an empty embedding file: n={n}, d={d}")
    if not np.all(np.isfinite(rows)):
        bad = int(np.argwhere(~np.isfinite(rows))[0][0])
        raise ValueError(f"row {bad} is not finite in float32 storage")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(VERSION, n, d))
        fh.write(rows.tobytes(order="C"))
