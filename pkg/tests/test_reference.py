import math

import numpy as np
import pytest

from anchorattn.errors import DimensionError
from anchorattn.flops import count_flops
from anchorattn.reference import (
    AttentionInputs,
    ProjectionWeights,
    project_tokens,
    random_inputs,
    vanilla_attention,
    vanilla_flops,
)


def per_row_attention(Q, K, V):
    """Independent loop: h_t = sum_i exp(q_t.k_i/sqrt d) v_i / sum_j exp(q_t.k_j/sqrt d)."""
    n, d = Q.shape
    H = np.zeros_like(V)
    for t in range(n):
        logits = [sum(Q[t, c] * K[i, c] for c in range(d)) / math.sqrt(d) for i in range(n)]
        top = max(logits)
        w = [math.exp(z - top) for z in logits]
        total = math.fsum(w)
        for i in range(n):
            H[t] += (w[i] / total) * V[i]
    return H


class TestProjectTokens:
    def test_identity(self):
        X = np.eye(3)
        w = ProjectionWeights(np.eye(3), np.eye(3), np.eye(3))
        inp = project_tokens(X, w)
        for M in (inp.Q, inp.K, inp.V):
            assert np.array_equal(M, X)

    def test_composition(self, rng):
        X = rng.standard_normal((4, 3))
        w = ProjectionWeights(*(rng.standard_normal((3, 2)) for _ in range(3)))
        inp = project_tokens(X, w)
        assert np.array_equal(inp.Q, X @ w.W_Q)
        assert np.array_equal(inp.K, X @ w.W_K)
        assert np.array_equal(inp.V, X @ w.W_V)

    def test_zero_tokens(self, rng):
        w = ProjectionWeights(*(rng.standard_normal((3, 2)) for _ in range(3)))
        inp = project_tokens(np.zeros((5, 3)), w)
        assert not inp.Q.any() and not inp.K.any() and not inp.V.any()

    def test_shape_mismatch(self, rng):
        w = ProjectionWeights(*(rng.standard_normal((3, 2)) for _ in range(3)))
        with pytest.raises(DimensionError):
            project_tokens(np.zeros((5, 4)), w)

    def test_mismatched_weights(self):
        with pytest.raises(DimensionError):
            ProjectionWeights(np.zeros((3, 2)), np.zeros((3, 2)), np.zeros((2, 2)))


class TestVanillaAttention:
    def test_single_token(self, rng):
        inp = AttentionInputs(rng.standard_normal((1, 2)), rng.standard_normal((1, 2)), np.array([[5.0, 7.0]]))
        assert np.array_equal(vanilla_attention(inp), [[5.0, 7.0]])

    def test_zero_queries_give_column_mean(self, rng):
        V = rng.standard_normal((6, 3))
        inp = AttentionInputs(np.zeros((6, 3)), rng.standard_normal((6, 3)), V)
        np.testing.assert_allclose(vanilla_attention(inp), np.tile(V.mean(axis=0), (6, 1)), atol=1e-14)

    def test_per_row_oracle(self, rng):
        inp = random_inputs(3, 2, rng)
        assert np.abs(vanilla_attention(inp) - per_row_attention(inp.Q, inp.K, inp.V)).max() <= 1e-12

    def test_larger_oracle(self, rng):
        inp = random_inputs(17, 5, rng)
        assert np.abs(vanilla_attention(inp) - per_row_attention(inp.Q, inp.K, inp.V)).max() <= 1e-12

    def test_convex_hull(self, rng):
        for _ in range(20):
            inp = random_inputs(int(rng.integers(1, 40)), int(rng.integers(1, 8)), rng)
            H = vanilla_attention(inp)
            assert (H >= inp.V.min(axis=0) - 1e-12).all()
            assert (H <= inp.V.max(axis=0) + 1e-12).all()

    def test_permutation_equivariance(self, rng):
        inp = random_inputs(12, 4, rng)
        H = vanilla_attention(inp)
        perm = rng.permutation(12)
        permuted_q = AttentionInputs(inp.Q[perm], inp.K, inp.V)
        assert np.abs(vanilla_attention(permuted_q) - H[perm]).max() <= 1e-12
        permuted_kv = AttentionInputs(inp.Q, inp.K[perm], inp.V[perm])
        assert np.abs(vanilla_attention(permuted_kv) - H).max() <= 1e-12

    def test_unit_dimension_is_softmax_average(self, rng):
        q, k, v = (rng.standard_normal((5, 1)) for _ in range(3))
        H = vanilla_attention(AttentionInputs(q, k, v))
        w = np.exp(q * k.T)
        expected = (w / w.sum(axis=1, keepdims=True)) @ v
        np.testing.assert_allclose(H, expected, atol=1e-14)

    def test_not_symmetric_in_general(self, rng):
        # contrast with the anchor approximant, whose token similarity is symmetric
        inp = random_inputs(6, 3, rng)
        logits = inp.Q @ inp.K.T / math.sqrt(3)
        P = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        assert np.abs(P - P.T).max() > 1e-3


class TestVanillaFlops:
    def test_hand_count(self):
        assert vanilla_flops(1, 1) == 7

    @pytest.mark.parametrize("n,d", [(3, 1), (10, 7), (64, 64)])
    def test_quadratic_in_n(self, n, d):
        assert vanilla_flops(2 * n, d) == 4 * vanilla_flops(n, d)

    def test_instrumented_count(self, rng):
        inp = random_inputs(128, 64, rng)
        with count_flops() as c:
            vanilla_attention(inp)
        assert c.total == vanilla_flops(128, 64)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            vanilla_flops(0, 3)
