"""Hand-derived reverse-mode gradients for anchor attention.

Forward (one head, scale ``s = 1/sqrt(d)``)::

    Z = K @ W_S.T            A = softmax_rows(Z, s)      delta = A.sum(0)
    M1 = A.T @ V             M2 = M1 / delta[:, None]    H = A @ M2

``delta`` is a function of ``A``, so its contribution to ``dA`` is kept:
``dA[:, j] += d(delta)_j``. Two backward passes are provided: one through the
reordered product above, one through the materialised ``S_t @ V``. They
share nothing except the softmax/affinity tail and must agree.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import linalg
from .anchor import (
    AffinityState,
    MultiHeadParams,
    anchor_affinity,
    anchor_attention_fast,
    token_similarity,
)
from .errors import DimensionError, NumericInputError
from .linalg import Matrix
from .reference import ProjectionWeights, project_tokens

FD_STEP_BAND = (1e-7, 1e-3)
REL_ERR_FLOOR = 1e-8


@dataclass(frozen=True)
class GradBundle:
    d_WS: Matrix
    d_K: Matrix
    d_V: Matrix


@dataclass(frozen=True)
class FDCheckReport:
    param: str
    max_rel_error: float
    count: int
    step: float
    worst_index: tuple[int, ...] = ()
    max_abs_error: float = 0.0

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_ERR_FLOOR)
    return np.abs(analytic - numeric) / denom


def softmax_rows_backward(P: Matrix, dP: Matrix, scale: float) -> Matrix:
    """Gradient w.r.t. the logits of ``P = softmax_rows(Z, scale)``."""
    return scale * P * (dP - (dP * P).sum(axis=1, keepdims=True))


def _affinity_backward(state, dA, d_delta, K, W_S):
    dA = dA + d_delta[None, :]
    scale = 1.0 / math.sqrt(K.shape[1])
    dZ = softmax_rows_backward(state.A, dA, scale)
    return dZ.T @ K, dZ @ W_S


def _check_backward_shapes(state, V, upstream, K, W_S):
    n, m = state.A.shape
    if V.shape[0] != n or upstream.shape != V.shape:
        raise DimensionError(f"upstream {upstream.shape} and values {V.shape} must be {n} x d")
    if K.shape[0] != n or W_S.shape != (m, K.shape[1]):
        raise DimensionError(f"keys {K.shape} / anchors {W_S.shape} inconsistent with A {state.A.shape}")


def backward_anchor_attention(
    state: AffinityState, V: Matrix, upstream: Matrix, K: Matrix, W_S: Matrix
) -> GradBundle:
    """Gradients of ``H = A @ (delta^-1 (A.T @ V))`` given ``upstream = dL/dH``."""
    _check_backward_shapes(state, V, upstream, K, W_S)
    A, delta = state.A, state.delta
    M1 = A.T @ V
    M2 = M1 / delta[:, None]
    dA = upstream @ M2.T
    dM2 = A.T @ upstream
    dM1 = dM2 / delta[:, None]
    d_delta = -(dM2 * M1).sum(axis=1) / delta**2
    dA += V @ dM1.T
    d_V = A @ dM1
    d_WS, d_K = _affinity_backward(state, dA, d_delta, K, W_S)
    return GradBundle(d_WS=d_WS, d_K=d_K, d_V=d_V)


def backward_anchor_attention_explicit(
    state: AffinityState, V: Matrix, upstream: Matrix, K: Matrix, W_S: Matrix
) -> GradBundle:
    """Same gradients, differentiating ``H = S_t @ V`` with ``S_t = B @ A.T``, ``B = A / delta``."""
    _check_backward_shapes(state, V, upstream, K, W_S)
    A, delta = state.A, state.delta
    S_t = token_similarity(state)
    B = A / delta[None, :]
    dS = upstream @ V.T
    d_V = S_t.T @ upstream
    dB = dS @ A
    dA = dB / delta[None, :] + dS.T @ B
    d_delta = -(dB * A).sum(axis=0) / delta**2
    d_WS, d_K = _affinity_backward(state, dA, d_delta, K, W_S)
    return GradBundle(d_WS=d_WS, d_K=d_K, d_V=d_V)


# -- multi-head block ---------------------------------------------------------


@dataclass(frozen=True)
class HeadCache:
    K: Matrix
    V: Matrix
    state: AffinityState


@dataclass(frozen=True)
class MultiHeadCache:
    heads: list[HeadCache]
    concat: Matrix


@dataclass(frozen=True)
class MultiHeadGrads:
    d_anchors: list[Matrix]
    d_projections: list[ProjectionWeights]
    d_Wout: Matrix
    d_X: Matrix


def multi_head_forward(X: Matrix, params: MultiHeadParams) -> tuple[Matrix, MultiHeadCache]:
    heads, outs = [], []
    for h, proj in enumerate(params.projections):
        inp = project_tokens(X, proj)
        state = anchor_affinity(params.anchors_for(h), inp.K)
        outs.append(anchor_attention_fast(state, inp.V))
        heads.append(HeadCache(K=inp.K, V=inp.V, state=state))
    concat = np.concatenate(outs, axis=1)
    return linalg.matmul(concat, params.W_out), MultiHeadCache(heads=heads, concat=concat)


def multi_head_backward(
    X: Matrix, params: MultiHeadParams, cache: MultiHeadCache, upstream: Matrix, explicit: bool = False
) -> MultiHeadGrads:
    backward = backward_anchor_attention_explicit if explicit else backward_anchor_attention
    d = params.head_dim
    d_Wout = cache.concat.T @ upstream
    d_concat = upstream @ params.W_out.T
    d_X = np.zeros_like(X)
    d_anchors = [np.zeros_like(a) for a in params.anchors]
    d_projections = []
    for h, (proj, hc) in enumerate(zip(params.projections, cache.heads)):
        g = backward(hc.state, hc.V, d_concat[:, h * d:(h + 1) * d], hc.K, params.anchors_for(h))
        d_anchors[0 if params.shared_anchors else h] += g.d_WS
        d_projections.append(ProjectionWeights(np.zeros_like(proj.W_Q), X.T @ g.d_K, X.T @ g.d_V))
        d_X += g.d_K @ proj.W_K.T + g.d_V @ proj.W_V.T
    return MultiHeadGrads(d_anchors=d_anchors, d_projections=d_projections, d_Wout=d_Wout, d_X=d_X)


def pack_multi_head(params: MultiHeadParams, prefix: str = "") -> dict[str, Matrix]:
    """Flatten to a name -> array mapping (arrays are shared, not copied)."""
    out = {f"{prefix}W_S[{h}]": a for h, a in enumerate(params.anchors)}
    for h, p in enumerate(params.projections):
        out[f"{prefix}W_Q[{h}]"] = p.W_Q
        out[f"{prefix}W_K[{h}]"] = p.W_K
        out[f"{prefix}W_V[{h}]"] = p.W_V
    out[f"{prefix}W_out"] = params.W_out
    return out


def pack_multi_head_grads(grads: MultiHeadGrads, prefix: str = "") -> dict[str, Matrix]:
    out = {f"{prefix}W_S[{h}]": a for h, a in enumerate(grads.d_anchors)}
    for h, p in enumerate(grads.d_projections):
        out[f"{prefix}W_Q[{h}]"] = p.W_Q
        out[f"{prefix}W_K[{h}]"] = p.W_K
        out[f"{prefix}W_V[{h}]"] = p.W_V
    out[f"{prefix}W_out"] = grads.d_Wout
    return out


def unpack_multi_head(arrays: Mapping[str, Matrix], template: MultiHeadParams, prefix: str = "") -> MultiHeadParams:
    heads = template.heads
    return MultiHeadParams(
        anchors=[arrays[f"{prefix}W_S[{h}]"] for h in range(len(template.anchors))],
        projections=[
            ProjectionWeights(arrays[f"{prefix}W_Q[{h}]"], arrays[f"{prefix}W_K[{h}]"], arrays[f"{prefix}W_V[{h}]"])
            for h in range(heads)
        ],
        W_out=arrays[f"{prefix}W_out"],
        shared_anchors=template.shared_anchors,
    )


# -- checking and optimisation ------------------------------------------------


def finite_difference_check(
    params: Mapping[str, np.ndarray],
    loss: Callable[[Mapping[str, np.ndarray]], float],
    analytic: Mapping[str, np.ndarray],
    step: float = 1e-5,
    atol: float = 0.0,
) -> list[FDCheckReport]:
    """Compare analytic gradients against central differences, entry by entry.

    ``loss`` is called with a copy of ``params`` in which one entry has been
    moved by ``+-step``. Relative error uses a denominator floored at 1e-8.
    Entries whose absolute disagreement is at most ``atol`` are left out of
    the relative maximum; with the default of 0 every entry counts.
    """
    if not step > 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    lo, hi = FD_STEP_BAND
    if not lo <= step <= hi:
        warnings.warn(f"step {step:g} is outside the recommended band [{lo:g}, {hi:g}]", stacklevel=2)
    reports = []
    for name, value in params.items():
        if not np.isfinite(value).all():
            raise NumericInputError(f"parameter {name} has non-finite entries")
        grad = np.asarray(analytic[name])
        if grad.shape != value.shape:
            raise DimensionError(f"gradient for {name} has shape {grad.shape}, expected {value.shape}")
        numeric = np.zeros(value.shape)
        for idx in np.ndindex(value.shape):
            vals = []
            for sign in (1.0, -1.0):
                perturbed = value.copy()
                perturbed[idx] += sign * step
                trial = dict(params)
                trial[name] = perturbed
                f = float(loss(trial))
                if not math.isfinite(f):
                    raise NumericInputError(f"non-finite loss perturbing {name}{list(idx)}")
                vals.append(f)
            numeric[idx] = (vals[0] - vals[1]) / (2.0 * step)
        abs_err = np.abs(grad - numeric)
        err = np.where(abs_err <= atol, 0.0, relative_error(grad, numeric)) if atol > 0 else relative_error(grad, numeric)
        worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
        reports.append(
            FDCheckReport(
                param=name,
                max_rel_error=float(err.max()) if err.size else 0.0,
                count=int(value.size),
                step=step,
                worst_index=tuple(int(i) for i in worst),
                max_abs_error=float(abs_err.max()) if abs_err.size else 0.0,
            )
        )
    return reports


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    """Return ``p - lr * g`` for every parameter; inputs are left untouched."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    return {name: p - lr * grads[name] for name, p in params.items()}
