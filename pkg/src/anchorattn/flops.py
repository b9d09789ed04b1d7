"""Floating-point operation accounting.

Convention (shared by the closed-form counters and the instrumented
primitives): a multiply and an add are one flop each, so an
``(a x k) @ (k x b)`` product costs ``2*a*k*b``; a row softmax costs 3 flops
per entry (shift, exp, divide); a diagonal rescale costs 1 flop per entry.
The column mass of an affinity matrix is accumulated during the softmax
normalisation pass and is not charged separately.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field

SOFTMAX_FLOPS_PER_ENTRY = 3

_active: contextvars.ContextVar[tuple["FlopCounter", ...]] = contextvars.ContextVar(
    "anchorattn_flop_counters", default=()
)


@dataclass
class FlopCounter:
    total: int = 0
    by_op: dict[str, int] = field(default_factory=dict)

    def add(self, op: str, count: int) -> None:
        self.total += count
        self.by_op[op] = self.by_op.get(op, 0) + count


def tally(op: str, count: int) -> None:
    """Charge ``count`` flops to every active counter (no-op when none)."""
    for counter in _active.get():
        counter.add(op, count)


@contextlib.contextmanager
def count_flops():
    """Count flops of all linalg primitives executed inside the block.

    >>> import numpy as np
    >>> from anchorattn import linalg
    >>> with count_flops() as c:
    ...     _ = linalg.matmul(np.ones((2, 3)), np.ones((3, 4)))
    >>> c.total
    48
    """
    counter = FlopCounter()
    token = _active.set(_active.get() + (counter,))
    try:
        yield counter
    finally:
        _active.reset(token)
