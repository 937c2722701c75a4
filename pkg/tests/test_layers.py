"""Attention, transformer block and MLP layers, including the masked
attention oracle and mask-isolation guarantees."""

import numpy as np
import pytest

from visrel.nn.gradcheck import grad_check
from visrel.nn.layers import (
    Linear,
    Mlp,
    ParamStore,
    TransformerBlock,
    mask_to_bias,
    masked_attention,
    trunc_normal,
)
from visrel.nn.tensor import Tensor
from visrel.rng import rng_for


def dense_attention_oracle(q, k, v, allow, n_heads, w, b):
    """Straight-line reimplementation: explicit per-head softmax loops."""
    t, d = q.shape
    dh = d // n_heads
    out = np.zeros((t, d))
    for h in range(n_heads):
        qs, ks, vs = (x[:, h * dh:(h + 1) * dh] for x in (q, k, v))
        for i in range(t):
            scores = np.array([
                qs[i] @ ks[j] / np.sqrt(dh) if allow[i, j] else -np.inf
                for j in range(t)
            ])
            e = np.exp(scores - scores[np.isfinite(scores)].max())
            e[~np.isfinite(scores)] = 0.0
            w_row = e / e.sum()
            out[i, h * dh:(h + 1) * dh] = w_row @ vs
    return out @ w + b


class TestMaskedAttention:
    def test_single_token_identity(self, rng):
        d = 8
        v = rng.normal(size=(1, d))
        w = rng.normal(size=(d, d))
        b = rng.normal(size=d)
        out = masked_attention(Tensor(v), Tensor(v), Tensor(v), np.ones((1, 1), bool), 2,
                               Tensor(w), Tensor(b))
        # softmax over one entry is 1, so the output is v projected
        assert np.allclose(out.data, v @ w + b, atol=1e-6)

    def test_forced_attention_row(self, rng):
        d = 4
        q = k = v = Tensor(rng.normal(size=(2, d)))
        allow = np.array([[True, False], [True, True]])
        capture = []
        masked_attention(q, k, v, allow, 1, Tensor(np.eye(d)), Tensor(np.zeros(d)),
                         capture=capture)
        weights = capture[0][0, 0]  # [T, T]
        assert np.allclose(weights[0], [1.0, 0.0], atol=1e-7)

    def test_matches_dense_oracle(self, rng):
        d, t, heads = 12, 4, 3
        q, k, v = (rng.normal(size=(t, d)) for _ in range(3))
        w, b = rng.normal(size=(d, d)), rng.normal(size=d)
        allow = rng.random((t, t)) < 0.6
        allow[np.arange(t), np.arange(t)] = True
        out = masked_attention(Tensor(q), Tensor(k), Tensor(v), allow, heads,
                               Tensor(w), Tensor(b))
        assert np.allclose(out.data, dense_attention_oracle(q, k, v, allow, heads, w, b),
                           atol=1e-6)

    def test_softmax_rows_sum_over_allowed(self, rng):
        t, d = 6, 8
        q = k = v = Tensor(rng.normal(size=(t, d)))
        allow = rng.random((t, t)) < 0.5
        allow[:, 0] = True
        capture = []
        masked_attention(q, k, v, allow, 2, Tensor(np.eye(d)), Tensor(np.zeros(d)), capture)
        weights = capture[0][0]  # [heads, T, T]
        assert np.allclose(weights.sum(-1), 1.0, atol=1e-6)
        assert np.all(weights[:, ~allow] < 1e-6)

    def test_all_masked_row_rejected(self, rng):
        d = 4
        x = Tensor(rng.normal(size=(2, d)))
        allow = np.array([[True, True], [False, False]])
        with pytest.raises(ValueError, match="all-masked"):
            masked_attention(x, x, x, allow, 1, Tensor(np.eye(d)), Tensor(np.zeros(d)))

    def test_shape_errors(self, rng):
        d = 6
        x = Tensor(rng.normal(size=(2, d)))
        y = Tensor(rng.normal(size=(3, d)))
        with pytest.raises(ValueError):
            masked_attention(x, y, x, np.ones((2, 2), bool), 2, Tensor(np.eye(d)), Tensor(np.zeros(d)))
        with pytest.raises(ValueError):
            masked_attention(x, x, x, np.ones((2, 2), bool), 4, Tensor(np.eye(d)), Tensor(np.zeros(d)))


class TestTransformerBlock:
    def _block(self, d=16, heads=4, dtype=np.float64, seed=0):
        store = ParamStore(dtype=dtype)
        blk = TransformerBlock(store, "blk", d, heads, 2, rng_for(seed, "blk"))
        return store, blk

    def test_zeroed_output_projections_make_identity(self, rng):
        store, blk = self._block()
        store["blk.attn.out.w"].data[:] = 0.0
        store["blk.mlp.fc2.w"].data[:] = 0.0
        x = rng.normal(size=(1, 5, 16))
        out = blk(Tensor(x), mask_to_bias(np.ones((5, 5), bool), np.float64))
        assert np.array_equal(out.data, x)

    def test_mask_isolation_bit_exact(self, rng):
        # token 2 may be attended by nobody else; perturbing it must leave
        # every other token's output bit-identical
        store, blk = self._block()
        t = 4
        allow = np.ones((t, t), bool)
        allow[:, 2] = False
        allow[2, 2] = True
        bias = mask_to_bias(allow, np.float64)
        x = rng.normal(size=(1, t, 16))
        base = blk(Tensor(x), bias).data
        x2 = x.copy()
        x2[0, 2] += rng.normal(size=16)
        pert = blk(Tensor(x2), bias).data
        keep = [0, 1, 3]
        assert np.array_equal(base[0, keep], pert[0, keep])
        assert not np.array_equal(base[0, 2], pert[0, 2])

    def test_gradients_match_finite_differences(self, rng):
        store, blk = self._block()
        x = Tensor(rng.normal(size=(1, 4, 16)))
        bias = mask_to_bias(np.ones((4, 4), bool), np.float64)

        def loss():
            out = blk(x, bias)
            return (out * out).mean()

        err = grad_check(loss, dict(store.items()), eps=1e-4, max_coords_per_param=4,
                         rng=rng_for(3, "gc"))
        assert err <= 1e-3

    def test_output_shape_preserved(self, rng):
        store, blk = self._block()
        x = Tensor(rng.normal(size=(2, 7, 16)))
        out = blk(x, mask_to_bias(np.ones((7, 7), bool), np.float64))
        assert out.shape == (2, 7, 16)


class TestMlp:
    def test_zero_weights_zero_output(self, rng):
        store = ParamStore()
        mlp = Mlp(store, "m", 6, 12, 3, rng_for(0, "mlp"))
        for name in ("m.fc1.w", "m.fc1.b", "m.fc2.w", "m.fc2.b"):
            store[name].data[:] = 0.0
        out = mlp(Tensor(rng.normal(size=(5, 6)).astype(np.float32)))
        assert np.array_equal(out.data, np.zeros((5, 3), dtype=np.float32))

    def test_matches_dense_oracle(self, rng):
        store = ParamStore(dtype=np.float64)
        mlp = Mlp(store, "m", 5, 8, 2, rng_for(1, "mlp"))
        x = rng.normal(size=(7, 5))
        w1, b1 = store["m.fc1.w"].data, store["m.fc1.b"].data
        w2, b2 = store["m.fc2.w"].data, store["m.fc2.b"].data
        h = x @ w1 + b1
        ref = (0.5 * h * (1 + np.tanh(np.sqrt(2 / np.pi) * (h + 0.044715 * h**3)))) @ w2 + b2
        assert np.allclose(mlp(Tensor(x)).data, ref, atol=1e-12)

    def test_linear_region_passthrough(self, rng):
        # with identity-constructed weights and inputs in the near-linear
        # region of the activation, the MLP reproduces its input slice
        store = ParamStore(dtype=np.float64)
        mlp = Mlp(store, "m", 3, 3, 3, rng_for(2, "mlp"))
        store["m.fc1.w"].data = np.eye(3)
        store["m.fc1.b"].data = np.full(3, 5.0)  # deep in the gelu identity region
        store["m.fc2.w"].data = np.eye(3)
        store["m.fc2.b"].data = np.full(3, -5.0)
        x = rng.normal(size=(4, 3)) * 0.05
        assert np.allclose(mlp(Tensor(x)).data, x, atol=1e-5)


class TestParamStore:
    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.add("w", np.zeros(3))
        with pytest.raises(ValueError):
            store.add("w", np.zeros(3))

    def test_digest_tracks_content(self):
        store = ParamStore()
        p = store.add("w", np.ones(4))
        d1 = store.digest()
        p.data[0] = 2.0
        assert store.digest() != d1

    def test_load_arrays_shape_checked(self):
        store = ParamStore()
        store.add("w", np.zeros((2, 3)))
        with pytest.raises(ValueError):
            store.load_arrays({"w": np.zeros((3, 2))})
        with pytest.raises(KeyError):
            store.load_arrays({})

    def test_trunc_normal_bounded(self):
        out = trunc_normal(rng_for(0, "tn"), (4096,), std=0.02)
        assert np.abs(out).max() <= 0.04 + 1e-12
