"""Randomised invariant suite for the anchor construction and the linalg substrate.

Each property reports the largest violation seen over all instances and the
instance that produced it, so a failure can be replayed from its seed.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .anchor import (
    AffinityState,
    AnchorCountWarning,
    anchor_affinity,
    anchor_attention_explicit,
    anchor_attention_fast,
    anchor_similarity,
    build_transfer_matrix,
    token_similarity,
)
from .errors import AnchorAttnError

# name -> (tolerance, description); the order here is the report order
PROPERTIES = {
    "affinity_rows": (1e-12, "rows of A sum to 1, entries > 0"),
    "column_mass": (1e-9, "delta equals column sums of A and sums to n"),
    "fast_equals_explicit": (1e-11, "fast path equals materialised S_t @ V"),
    "row_stochastic": (1e-10, "rows of S_t sum to 1"),
    "symmetry": (1e-12, "S_t equals its transpose"),
    "psd": (1e-9, "eigenvalues of S_t >= 0 (n <= 64)"),
    "markov_consistency": (1e-12, "S_t[i,j] = sum_l p(v_j|u_l) p(u_l|v_i) (n <= 16)"),
    "transfer_rows": (1e-12, "rows of F sum to 1, diagonal blocks zero"),
    "transfer_square_offdiag": (1e-14, "off-diagonal blocks of F^2 vanish"),
    "transfer_square_blocks": (1e-12, "diagonal blocks of F^2 equal S_t and S_u"),
    "convex_hull": (1e-12, "fast output rows lie within the range of V"),
    "matmul_assoc": (1e-9, "(AB)C = A(BC) relative to |A||B||C| (8x8)"),
    "softmax_rows": (1e-12, "softmax rows sum to 1, entries in (0, 1]"),
    "softmax_shift": (1e-14, "softmax is invariant to per-row shifts"),
    "determinism": (0.0, "repeated calls are bit-identical"),
}

PSD_MAX_N = 64
MARKOV_MAX_N = 16
TRANSFER_MAX_SIZE = 512
EDGE_SHAPES = [(1, 1, 1), (1, 5, 3), (7, 1, 4), (12, 12, 8), (5, 9, 2), (256, 32, 64), (2, 32, 1), (256, 1, 1)]


@dataclass(frozen=True)
class Instance:
    seed: int
    index: int
    n: int
    m: int
    d: int

    def describe(self) -> str:
        return f"seed={self.seed} instance={self.index} n={self.n} m={self.m} d={self.d}"


@dataclass
class PropertyResult:
    name: str
    tolerance: float
    max_error: float = 0.0
    checked: int = 0
    worst: Instance | None = None

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


@dataclass
class VerifyReport:
    results: list[PropertyResult] = field(default_factory=list)
    instances: int = 0
    errors: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.errors and all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        out = [f"instances: {self.instances}"]
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            line = f"{status} {r.name:<24} max_err={r.max_error:.3e} tol={r.tolerance:.0e} checked={r.checked}"
            if not r.passed and r.worst is not None:
                line += f" [{r.worst.describe()}]"
            out.append(line)
        for e in self.errors:
            out.append(f"ERROR {e}")
        out.append("verify: " + ("PASS" if self.passed else "FAIL"))
        return out


def make_instances(count: int, seed: int) -> list[Instance]:
    """Edge shapes first, then shapes drawn uniformly from n<=256, m<=32, d<=64."""
    rng = np.random.default_rng(seed)
    shapes = list(EDGE_SHAPES[:count])
    while len(shapes) < count:
        shapes.append((int(rng.integers(1, 257)), int(rng.integers(1, 33)), int(rng.integers(1, 65))))
    return [Instance(seed, i, n, m, d) for i, (n, m, d) in enumerate(shapes)]


def instance_tensors(inst: Instance):
    rng = np.random.default_rng([inst.seed, inst.index])
    spread = rng.uniform(0.5, 3.0)
    K = spread * rng.standard_normal((inst.n, inst.d))
    W_S = rng.standard_normal((inst.m, inst.d))
    V = rng.standard_normal((inst.n, inst.d))
    return K, W_S, V


def _markov_entrywise(A, delta):
    n, m = A.shape
    S = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            total = 0.0
            for l in range(m):
                total += (A[j, l] / delta[l]) * A[i, l]
            S[i, j] = total
    return S


def check_instance(inst: Instance, poison_delta: bool = False) -> dict[str, float]:
    """Violation per property for one instance (properties that do not apply are omitted)."""
    K, W_S, V = instance_tensors(inst)
    state = anchor_affinity(W_S, K)
    if poison_delta:
        delta = state.delta.copy()
        delta[0] = 0.0
        state = AffinityState(A=state.A, delta=delta)
    A, delta, n, m = state.A, state.delta, inst.n, inst.m
    err = {}
    err["affinity_rows"] = max(float(np.abs(A.sum(axis=1) - 1).max()), 0.0 if (A > 0).all() else math.inf)
    err["column_mass"] = max(float(np.abs(delta - A.sum(axis=0)).max()), abs(float(delta.sum()) - n))

    fast = anchor_attention_fast(state, V)
    explicit = anchor_attention_explicit(state, V)
    S_t = token_similarity(state)
    err["fast_equals_explicit"] = linalg.max_abs(fast - explicit)
    err["row_stochastic"] = float(np.abs(S_t.sum(axis=1) - 1).max())
    err["symmetry"] = linalg.max_abs(S_t - S_t.T)
    if n <= PSD_MAX_N:
        err["psd"] = max(0.0, -float(np.linalg.eigvalsh((S_t + S_t.T) / 2).min()))
    if n <= MARKOV_MAX_N:
        err["markov_consistency"] = linalg.max_abs(S_t - _markov_entrywise(A, delta))
    if n + m <= TRANSFER_MAX_SIZE:
        T = build_transfer_matrix(state)
        F = T.F
        diag_blocks = max(linalg.max_abs(F[:n, :n]), linalg.max_abs(F[n:, n:]))
        err["transfer_rows"] = max(float(np.abs(F.sum(axis=1) - 1).max()), diag_blocks)
        F2 = T.square()
        err["transfer_square_offdiag"] = max(linalg.max_abs(F2[:n, n:]), linalg.max_abs(F2[n:, :n]))
        err["transfer_square_blocks"] = max(
            linalg.max_abs(F2[:n, :n] - S_t), linalg.max_abs(F2[n:, n:] - anchor_similarity(state))
        )
    lo, hi = V.min(axis=0), V.max(axis=0)
    err["convex_hull"] = max(0.0, float((lo - fast).max()), float((fast - hi).max()))

    rng = np.random.default_rng([inst.seed, inst.index, 1])
    a, b, c = (rng.standard_normal((8, 8)) for _ in range(3))
    assoc = linalg.inf_norm(linalg.matmul(linalg.matmul(a, b), c) - linalg.matmul(a, linalg.matmul(b, c)))
    err["matmul_assoc"] = assoc / (linalg.inf_norm(a) * linalg.inf_norm(b) * linalg.inf_norm(c))
    logits = K @ W_S.T
    P = linalg.softmax_rows(logits, 1.0 / math.sqrt(inst.d))
    in_range = bool(((P > 0) & (P <= 1)).all())
    err["softmax_rows"] = max(float(np.abs(P.sum(axis=1) - 1).max()), 0.0 if in_range else math.inf)
    shift = rng.uniform(-5, 5, size=(inst.n, 1))
    err["softmax_shift"] = linalg.max_abs(linalg.softmax_rows(logits + shift, 1.0 / math.sqrt(inst.d)) - P)
    again = anchor_attention_fast(anchor_affinity(W_S, K), V) if not poison_delta else fast
    err["determinism"] = 0.0 if np.array_equal(again, fast) else math.inf
    return err


def run_verify(
    instances: int = 1000, seed: int = 0, poison_delta: bool = False, threads: int | None = None
) -> VerifyReport:
    if threads is None:
        threads = int(os.environ.get("ANCHORATTN_THREADS", "1") or 1)
    threads = max(1, threads)
    insts = make_instances(instances, seed)

    def safe(inst):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AnchorCountWarning)
            try:
                return check_instance(inst, poison_delta and inst.index == 0), None
            except AnchorAttnError as exc:
                return {}, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(safe, insts))
    else:
        outcomes = [safe(i) for i in insts]

    results = {name: PropertyResult(name, tol) for name, (tol, _) in PROPERTIES.items()}
    errors = []
    for inst, (errs, failure) in zip(insts, outcomes):
        if failure is not None:
            errors.append(f"{failure} [{inst.describe()}]")
            continue
        for name, value in errs.items():
            r = results[name]
            r.checked += 1
            if r.worst is None or value > r.max_error:
                r.max_error, r.worst = value, inst
    return VerifyReport(results=list(results.values()), instances=len(insts), errors=errors)
