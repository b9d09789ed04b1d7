"""Exact softmax self-attention, quadratic in sequence length.

This is the baseline the anchor mechanism approximates and the complexity
reference for benchmarks. The score matrix is ``Q @ K.T`` (query rows,
key columns), normalised over keys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DimensionError
from .flops import SOFTMAX_FLOPS_PER_ENTRY
from .linalg import Matrix


@dataclass(frozen=True)
class AttentionInputs:
    Q: Matrix
    K: Matrix
    V: Matrix

    def __post_init__(self):
        if not (self.Q.shape == self.K.shape == self.V.shape):
            raise DimensionError(
                f"Q, K, V must share a shape, got {self.Q.shape}, {self.K.shape}, {self.V.shape}"
            )
        if self.Q.ndim != 2 or self.Q.shape[1] < 1:
            raise DimensionError(f"head dimension must be >= 1, got shape {self.Q.shape}")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def d(self) -> int:
        return self.Q.shape[1]


@dataclass(frozen=True)
class ProjectionWeights:
    W_Q: Matrix
    W_K: Matrix
    W_V: Matrix

    def __post_init__(self):
        if not (self.W_Q.shape == self.W_K.shape == self.W_V.shape):
            raise DimensionError(
                "projection weights must share a shape, got "
                f"{self.W_Q.shape}, {self.W_K.shape}, {self.W_V.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.W_Q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.W_Q.shape[1]


def project_tokens(X: Matrix, w: ProjectionWeights) -> AttentionInputs:
    if X.shape[1] != w.in_dim:
        raise DimensionError(f"tokens of shape {X.shape} do not match weights of shape {w.W_Q.shape}")
    return AttentionInputs(
        Q=linalg.matmul(X, w.W_Q),
        K=linalg.matmul(X, w.W_K),
        V=linalg.matmul(X, w.W_V),
    )


def vanilla_attention(inp: AttentionInputs) -> Matrix:
    scores = linalg.matmul(inp.Q, linalg.transpose(inp.K))
    weights = linalg.softmax_rows(scores, 1.0 / math.sqrt(inp.d))
    del scores
    return linalg.matmul(weights, inp.V)


def vanilla_flops(n: int, d: int) -> int:
    """Closed-form flop count of :func:`vanilla_attention` (see :mod:`anchorattn.flops`)."""
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be >= 1, got n={n}, d={d}")
    return 2 * n * n * d + SOFTMAX_FLOPS_PER_ENTRY * n * n + 2 * n * n * d


def vanilla_memory_bytes(n: int, itemsize: int = 8) -> int:
    """Bytes of the dense n x n score matrix the exact path materialises."""
    return n * n * itemsize


def random_inputs(n: int, d: int, rng: np.random.Generator) -> AttentionInputs:
    return AttentionInputs(
        Q=rng.standard_normal((n, d)),
        K=rng.standard_normal((n, d)),
        V=rng.standard_normal((n, d)),
    )
