"""Anchor attention: token self-attention routed through m anchors.

Every token distributes probability over the anchors with a scaled softmax
of key/anchor inner products (the affinity ``A``, n x m). A two-step random
walk token -> anchor -> token on the bipartite graph gives the token
similarity ``S_t = A diag(delta)^-1 A.T`` where ``delta`` holds the column
sums of ``A``. ``S_t`` is symmetric, row-stochastic and positive
semidefinite, and ``S_t @ V`` can be evaluated as ``A @ (delta^-1 (A.T @ V))``
in O(nmd) time without ever forming an n x n matrix.

The softmax in the affinity normalises over the m anchors of each token.
Only keys and values feed the anchor path; the query projection is kept in
:class:`~anchorattn.reference.ProjectionWeights` for parity with the exact
baseline but is unused here.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import CapacityError, DimensionError, NumericInputError, SingularMassError
from .linalg import Matrix
from .reference import ProjectionWeights, project_tokens

DEFAULT_ANCHORS = 30
MAX_TRANSFER_SIZE = 4096
ROW_STOCHASTIC_TOL = 1e-10


class AnchorCountWarning(UserWarning):
    """Raised when m >= n, where the anchor path stops being cheaper."""


@dataclass(frozen=True)
class AnchorParams:
    W_S: Matrix

    def __post_init__(self):
        if self.W_S.ndim != 2 or self.W_S.shape[0] < 1 or self.W_S.shape[1] < 1:
            raise DimensionError(f"anchor matrix must be m x d with m, d >= 1, got {self.W_S.shape}")
        if not np.isfinite(self.W_S).all():
            raise NumericInputError("anchor matrix contains non-finite entries")

    @property
    def m(self) -> int:
        return self.W_S.shape[0]

    @property
    def d(self) -> int:
        return self.W_S.shape[1]


@dataclass(frozen=True)
class AffinityState:
    """Token-to-anchor probabilities ``A`` (n x m) and their column mass ``delta`` (m,)."""

    A: Matrix
    delta: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class TransferMatrix:
    """Row-stochastic walk matrix ``[[0, A], [delta^-1 A.T, 0]]`` of size (n+m)."""

    F: Matrix
    n: int
    m: int

    def square(self) -> Matrix:
        return linalg.matmul(self.F, self.F)


@dataclass
class MultiHeadParams:
    """Per-head anchors and projections plus the (l*d) x d output projection.

    With ``shared_anchors`` a single anchor matrix serves every head and
    ``anchors`` has length 1.
    """

    anchors: list[Matrix]
    projections: list[ProjectionWeights]
    W_out: Matrix
    shared_anchors: bool = False

    def __post_init__(self):
        heads = len(self.projections)
        if heads < 1:
            raise DimensionError("at least one head is required")
        expected = 1 if self.shared_anchors else heads
        if len(self.anchors) != expected:
            raise DimensionError(f"expected {expected} anchor matrices, got {len(self.anchors)}")
        d = self.projections[0].head_dim
        D = self.projections[0].in_dim
        for h, p in enumerate(self.projections):
            if (p.in_dim, p.head_dim) != (D, d):
                raise DimensionError(f"head {h} projections are {p.W_K.shape}, expected {(D, d)}")
        m = self.anchors[0].shape[0]
        for h, a in enumerate(self.anchors):
            if a.shape != (m, d):
                raise DimensionError(f"anchors of head {h} have shape {a.shape}, expected {(m, d)}")
        if self.W_out.shape[0] != heads * d:
            raise DimensionError(
                f"output projection has {self.W_out.shape[0]} rows, expected heads*d = {heads * d}"
            )

    @property
    def heads(self) -> int:
        return len(self.projections)

    @property
    def head_dim(self) -> int:
        return self.projections[0].head_dim

    @property
    def m(self) -> int:
        return self.anchors[0].shape[0]

    def anchors_for(self, head: int) -> Matrix:
        return self.anchors[0 if self.shared_anchors else head]


def anchor_affinity(anchors: AnchorParams | Matrix, K: Matrix) -> AffinityState:
    """Token-to-anchor probabilities from keys.

    ``A[i, j]`` is a softmax of ``k_i . u_j / sqrt(d)`` normalised over the m
    anchors (not over tokens), so every row of ``A`` sums to 1. ``delta`` holds
    the column sums of ``A``.
    """
    W_S = anchors.W_S if isinstance(anchors, AnchorParams) else anchors
    if W_S.shape[1] != K.shape[1]:
        raise DimensionError(f"anchors {W_S.shape} and keys {K.shape} disagree on d")
    n, m = K.shape[0], W_S.shape[0]
    if m >= n and n > 1:
        warnings.warn(
            f"m={m} anchors for n={n} tokens: no complexity advantage", AnchorCountWarning, stacklevel=2
        )
    logits = linalg.matmul(K, linalg.transpose(W_S))
    A = linalg.softmax_rows(logits, 1.0 / math.sqrt(K.shape[1]))
    return AffinityState(A=A, delta=linalg.column_sums(A))


def token_similarity(state: AffinityState) -> Matrix:
    """Materialise ``S_t = A diag(delta)^-1 A.T`` (n x n)."""
    scaled = linalg.scale_rows_by_inverse(linalg.transpose(state.A), state.delta)
    return linalg.matmul(state.A, scaled)


def anchor_similarity(state: AffinityState) -> Matrix:
    """Materialise ``S_u = diag(delta)^-1 A.T A`` (m x m)."""
    return linalg.scale_rows_by_inverse(linalg.matmul(linalg.transpose(state.A), state.A), state.delta)


def _check_values(state: AffinityState, V: Matrix) -> None:
    if V.ndim != 2 or V.shape[0] != state.n:
        raise DimensionError(f"values of shape {V.shape} do not match {state.n} tokens")


def anchor_attention_explicit(state: AffinityState, V: Matrix) -> Matrix:
    """``S_t @ V`` with ``S_t`` materialised. O(n^2 m); reference path only."""
    _check_values(state, V)
    S_t = token_similarity(state)
    deviation = float(np.abs(S_t.sum(axis=1) - 1.0).max())
    if deviation > ROW_STOCHASTIC_TOL:
        raise NumericInputError(f"token similarity rows deviate from 1 by {deviation:.3e}")
    return linalg.matmul(S_t, V)


def anchor_attention_fast(state: AffinityState, V: Matrix) -> Matrix:
    """``A @ (delta^-1 (A.T @ V))``; auxiliary memory O(nm + md)."""
    _check_values(state, V)
    M1 = linalg.matmul(linalg.transpose(state.A), V)
    M2 = linalg.scale_rows_by_inverse(M1, state.delta)
    return linalg.matmul(state.A, M2)


def build_transfer_matrix(state: AffinityState, max_size: int = MAX_TRANSFER_SIZE) -> TransferMatrix:
    n, m = state.n, state.m
    if n + m > max_size:
        raise CapacityError(f"transfer matrix of size {n + m} exceeds the limit of {max_size}")
    F = np.zeros((n + m, n + m))
    F[:n, n:] = state.A
    F[n:, :n] = linalg.scale_rows_by_inverse(linalg.transpose(state.A), state.delta)
    return TransferMatrix(F=F, n=n, m=m)


def anchor_fixed_point_step(state: AffinityState, K: Matrix) -> Matrix:
    """One soft k-means update: anchor j moves to the A-weighted mean of the keys."""
    if K.shape[0] != state.n:
        raise DimensionError(f"keys of shape {K.shape} do not match {state.n} tokens")
    return linalg.scale_rows_by_inverse(linalg.matmul(linalg.transpose(state.A), K), state.delta)


def surrogate_objective(W_S: Matrix, K: Matrix) -> float:
    """Expected squared anchor-key distance ``sum_ij A_ij ||u_j - k_i||^2``."""
    A = anchor_affinity(W_S, K).A
    sq = (K * K).sum(axis=1)[:, None] - 2.0 * (K @ W_S.T) + (W_S * W_S).sum(axis=1)[None, :]
    return float((A * np.maximum(sq, 0.0)).sum())


def refine_anchors(W_S: Matrix, K: Matrix, iterations: int) -> tuple[Matrix, list[float]]:
    """Iterate the fixed-point update; returns final anchors and the objective trace.

    The trace has ``iterations + 1`` entries, starting with the initial anchors.
    """
    objective = [surrogate_objective(W_S, K)]
    for _ in range(iterations):
        W_S = anchor_fixed_point_step(anchor_affinity(W_S, K), K)
        value = surrogate_objective(W_S, K)
        if not math.isfinite(value):
            raise NumericInputError("surrogate objective became non-finite")
        objective.append(value)
    return W_S, objective


def init_anchors(
    m: int,
    d: int,
    rng: np.random.Generator,
    method: str = "gaussian",
    K: Matrix | None = None,
    refine_steps: int = 5,
) -> Matrix:
    """Initial anchors.

    ``gaussian`` draws N(0, 1/d) entries. ``keys`` picks m distinct key rows
    (with replacement when m > n) and refines them with ``refine_steps``
    fixed-point updates.
    """
    if m < 1 or d < 1:
        raise DimensionError(f"m and d must be >= 1, got m={m}, d={d}")
    if method == "gaussian":
        return rng.standard_normal((m, d)) / math.sqrt(d)
    if method == "keys":
        if K is None:
            raise ValueError("the 'keys' initializer needs a key matrix")
        idx = rng.choice(K.shape[0], size=m, replace=m > K.shape[0])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AnchorCountWarning)
            W_S, _ = refine_anchors(np.ascontiguousarray(K[idx]), K, refine_steps)
        return W_S
    raise ValueError(f"unknown anchor initializer {method!r}")


def init_multi_head(
    in_dim: int,
    head_dim: int,
    m: int,
    heads: int,
    rng: np.random.Generator,
    shared_anchors: bool = False,
) -> MultiHeadParams:
    std = 1.0 / math.sqrt(in_dim)
    projections = [
        ProjectionWeights(*(rng.standard_normal((in_dim, head_dim)) * std for _ in range(3)))
        for _ in range(heads)
    ]
    anchors = [init_anchors(m, head_dim, rng) for _ in range(1 if shared_anchors else heads)]
    W_out = rng.standard_normal((heads * head_dim, head_dim)) / math.sqrt(heads * head_dim)
    return MultiHeadParams(anchors=anchors, projections=projections, W_out=W_out, shared_anchors=shared_anchors)


def single_head_attention(X: Matrix, anchors: Matrix, proj: ProjectionWeights) -> Matrix:
    inp = project_tokens(X, proj)
    return anchor_attention_fast(anchor_affinity(anchors, inp.K), inp.V)


def multi_head_attention(X: Matrix, params: MultiHeadParams) -> Matrix:
    """Concatenate per-head anchor attention along columns and project with ``W_out``."""
    if X.shape[1] != params.projections[0].in_dim:
        raise DimensionError(f"tokens of shape {X.shape} do not match input dim {params.projections[0].in_dim}")
    outs = [single_head_attention(X, params.anchors_for(h), p) for h, p in enumerate(params.projections)]
    return linalg.matmul(np.concatenate(outs, axis=1), params.W_out)


def is_non_increasing(trace, rtol: float = 1e-12) -> bool:
    """True when no step rises by more than ``rtol`` times the largest value (roundoff allowance)."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.size < 2:
        return True
    slack = rtol * float(np.abs(trace).max())
    return bool((np.diff(trace) <= slack).all())
