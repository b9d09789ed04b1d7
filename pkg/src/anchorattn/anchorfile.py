"""Anchor matrix files.

Binary layout, little-endian::

    bytes 0-3   magic b"ANCH"
    bytes 4-7   uint32 m (rows)
    bytes 8-11  uint32 d (columns)
    bytes 12-   m*d float64, row-major

A CSV mirror holds one anchor per line, ``repr`` formatted, no header.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DataError

MAGIC = b"ANCH"
_HEADER = struct.Struct("<4sII")


def write_anchors(path, anchors: np.ndarray) -> None:
    anchors = np.ascontiguousarray(anchors, dtype="<f8")
    m, d = anchors.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, m, d))
        fh.write(anchors.tobytes())


def read_anchors(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header", offset=len(raw))
    magic, m, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}", offset=0)
    expected = _HEADER.size + 8 * m * d
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}", offset=min(len(raw), expected))
    return np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(m, d).astype(np.float64)


def write_anchors_csv(path, anchors: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in np.asarray(anchors, dtype=np.float64):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    """Numeric CSV without header (one matrix row per line)."""
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return arr
