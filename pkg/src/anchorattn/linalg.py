"""Dense float64 matrix primitives.

A "matrix" here is a 2-D, C-contiguous ``numpy.ndarray`` of float64. The
primitives validate shapes and finiteness, charge flops to any active
:func:`anchorattn.flops.count_flops` block, and otherwise defer to numpy.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericInputError, SingularMassError
from .flops import SOFTMAX_FLOPS_PER_ENTRY, tally

Matrix = np.ndarray


def as_matrix(x, name: str = "matrix", dtype=np.float64) -> Matrix:
    """Coerce ``x`` to a contiguous 2-D float array with at least one row and column."""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must have at least one row and column, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericInputError(f"{name} contains non-finite entries")
    return arr


def _check_2d(m, name):
    if getattr(m, "ndim", None) != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {np.shape(m)}")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    _check_2d(a, "left operand")
    _check_2d(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    tally("matmul", 2 * a.shape[0] * a.shape[1] * b.shape[1])
    return a @ b


def matmul_reference(a: Matrix, b: Matrix) -> Matrix:
    """Triple-loop product summing over the inner index left to right.

    Slow; exists as an independent check of :func:`matmul`.
    """
    _check_2d(a, "left operand")
    _check_2d(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    rows, inner = a.shape
    cols = b.shape[1]
    out = np.zeros((rows, cols))
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for k in range(inner):
                acc += float(a[i, k]) * float(b[k, j])
            out[i, j] = acc
    return out


def transpose(m: Matrix) -> Matrix:
    _check_2d(m, "matrix")
    return np.ascontiguousarray(m.T)


def softmax_rows(m: Matrix, scale: float = 1.0) -> Matrix:
    """Row-wise ``exp(scale*x)`` normalised to sum 1, with max subtraction."""
    _check_2d(m, "logits")
    if not scale > 0 or not np.isfinite(scale):
        raise NumericInputError(f"softmax scale must be positive and finite, got {scale}")
    if not np.isfinite(m).all():
        raise NumericInputError("softmax input contains non-finite entries")
    tally("softmax", SOFTMAX_FLOPS_PER_ENTRY * m.size)
    z = m * scale
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def scale_rows_by_inverse(m: Matrix, mass) -> Matrix:
    """Divide row ``i`` of ``m`` by ``mass[i]`` (i.e. ``diag(mass)^-1 @ m``)."""
    _check_2d(m, "matrix")
    mass = np.asarray(mass, dtype=np.float64)
    if mass.shape != (m.shape[0],):
        raise DimensionError(f"mass of shape {mass.shape} does not match {m.shape[0]} rows")
    if not np.isfinite(mass).all() or (mass <= 0).any():
        bad = int(np.flatnonzero(~(np.isfinite(mass) & (mass > 0)))[0])
        raise SingularMassError(f"mass entry {bad} is {float(mass[bad])!r}; every entry must be > 0")
    tally("diag_scale", m.size)
    return m / mass[:, None]


def column_sums(m: Matrix) -> np.ndarray:
    _check_2d(m, "matrix")
    return m.sum(axis=0)


def row_sums(m: Matrix) -> np.ndarray:
    _check_2d(m, "matrix")
    return m.sum(axis=1)


def max_abs(m) -> float:
    """Largest absolute entry (the entrywise infinity norm); 0.0 for empty input."""
    m = np.asarray(m)
    return float(np.abs(m).max()) if m.size else 0.0


def inf_norm(m: Matrix) -> float:
    """Induced infinity norm: maximum absolute row sum."""
    return float(np.abs(m).sum(axis=1).max())
