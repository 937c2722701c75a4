"""Predicate heads, gripper concatenation, direction regressor."""

import numpy as np
import pytest

from visrel.heads import (
    DirectionHead,
    PredicateHead,
    concat_gripper,
    direction_regress,
    predicate_count,
)
from visrel.nn.layers import ParamStore
from visrel.nn.tensor import Tensor, no_grad
from visrel.rng import rng_for
from visrel.scene.schema import PredicateSchema


@pytest.fixture
def head_setup():
    store = ParamStore(dtype=np.float64)
    head = PredicateHead(store, d_in=16, rng=rng_for(0, "head"), hidden=24)
    return store, head


def mlp_oracle(x, w1, b1, w2, b2):
    """Single 2-layer MLP evaluated with plain numpy."""
    h = x @ w1 + b1
    h = 0.5 * h * (1 + np.tanh(np.sqrt(2 / np.pi) * (h + 0.044715 * h**3)))
    return h @ w2 + b2


class TestUnaryLogits:
    def test_row_matches_single_row_oracle(self, head_setup, rng):
        store, head = head_setup
        emb = rng.normal(size=(2, 3, 16))
        out = head.unary_logits(Tensor(emb)).data
        assert out.shape == (2, 3, 7)
        w1, b1 = store["head.unary.w1"].data, store["head.unary.b1"].data
        w2, b2 = store["head.unary.w2"].data, store["head.unary.b2"].data
        for fam in range(7):
            ref = mlp_oracle(emb[1, 2], w1[fam], b1[fam, 0], w2[fam][:, 0], b2[fam, 0, 0])
            assert out[1, 2, fam] == pytest.approx(float(ref), rel=1e-10)

    def test_zero_objects_empty(self, head_setup):
        _, head = head_setup
        out = head.unary_logits(Tensor(np.zeros((2, 0, 16))))
        assert out.shape == (2, 0, 7)

    def test_duplicate_rows_duplicate_logits(self, head_setup, rng):
        _, head = head_setup
        row = rng.normal(size=16)
        emb = np.stack([row, row])[None]
        out = head.unary_logits(Tensor(emb)).data
        assert np.array_equal(out[0, 0], out[0, 1])

    def test_width_mismatch(self, head_setup):
        _, head = head_setup
        with pytest.raises(ValueError):
            head.unary_logits(Tensor(np.zeros((1, 2, 8))))


class TestBinaryLogits:
    def test_two_objects_two_ordered_rows(self, head_setup, rng):
        store, head = head_setup
        emb = rng.normal(size=(1, 2, 16))
        out = head.binary_logits(Tensor(emb)).data
        assert out.shape == (1, 2, 2)
        w1, b1 = store["head.binary.w1"].data, store["head.binary.b1"].data
        w2, b2 = store["head.binary.w2"].data, store["head.binary.b2"].data
        pair01 = np.concatenate([emb[0, 0], emb[0, 1]])
        ref = mlp_oracle(pair01, w1[0], b1[0, 0], w2[0][:, 0], b2[0, 0, 0])
        assert out[0, 0, 0] == pytest.approx(float(ref), rel=1e-10)

    def test_swapping_embeddings_selects_other_pair_row(self, head_setup, rng):
        _, head = head_setup
        emb = rng.normal(size=(1, 2, 16))
        swapped = emb[:, ::-1].copy()
        out = head.binary_logits(Tensor(emb)).data
        out_sw = head.binary_logits(Tensor(swapped)).data
        # pair (0,1) of the swapped input equals pair (1,0) of the original
        assert np.allclose(out_sw[0, 0], out[0, 1], atol=1e-12)
        assert not np.allclose(out[0, 0], out[0, 1])

    def test_four_objects_brute_force_enumeration(self, head_setup, rng):
        store, head = head_setup
        emb = rng.normal(size=(1, 4, 16))
        out = head.binary_logits(Tensor(emb)).data
        assert out.shape == (1, 12, 2)
        w1, b1 = store["head.binary.w1"].data, store["head.binary.b1"].data
        w2, b2 = store["head.binary.w2"].data, store["head.binary.b2"].data
        expected_pairs = [(i, j) for i in range(4) for j in range(4) if j != i]
        for p, (i, j) in enumerate(expected_pairs):
            feats = np.concatenate([emb[0, i], emb[0, j]])
            for fam in range(2):
                ref = mlp_oracle(feats, w1[fam], b1[fam, 0], w2[fam][:, 0], b2[fam, 0, 0])
                assert out[0, p, fam] == pytest.approx(float(ref), rel=1e-9)


class TestAssemble:
    @pytest.mark.parametrize("n", range(0, 9))
    def test_row_counts_match_formula(self, head_setup, rng, n):
        _, head = head_setup
        emb = Tensor(rng.normal(size=(2, n, 16)))
        with no_grad():
            out = head.assemble(emb)
        assert out.shape == (2, predicate_count(7, 2, n))

    def test_schema_order(self, head_setup, rng):
        _, head = head_setup
        emb = Tensor(rng.normal(size=(1, 3, 16)))
        with no_grad():
            full = head.assemble(emb).data[0]
            u = head.unary_logits(emb).data[0]
            b = head.binary_logits(emb).data[0]
        schema = PredicateSchema(["obj0", "obj1", "obj2"])
        fam = schema.family_indices
        assert np.array_equal(full[fam["on_surface"]], u[:, 0:4].reshape(-1))
        assert np.array_equal(full[fam["has_obj"]], u[:, 4])
        assert np.array_equal(full[fam["top_is_clear"]], u[:, 5])
        assert np.array_equal(full[fam["in_approach_region"]], u[:, 6])
        assert np.array_equal(full[fam["stacked"]], b[:, 0])
        assert np.array_equal(full[fam["aligned_with"]], b[:, 1])

    def test_parameters_independent_of_n(self, head_setup, rng):
        store, head = head_setup
        before = store.digest()
        for n in (1, 4, 7):
            with no_grad():
                head.assemble(Tensor(rng.normal(size=(1, n, 16))))
        assert store.digest() == before


class TestConcatGripper:
    def test_appends_width_and_value(self, rng):
        emb = Tensor(rng.normal(size=(2, 3, 8)).astype(np.float32))
        out = concat_gripper(emb, 0.0)
        assert out.shape == (2, 3, 9)
        assert np.array_equal(out.data[..., -1], np.zeros((2, 3), dtype=np.float32))
        out2 = concat_gripper(emb, np.array([0.25, 1.0]))
        assert np.allclose(out2.data[0, :, -1], 0.25)
        assert np.allclose(out2.data[1, :, -1], 1.0)

    def test_out_of_range_rejected(self, rng):
        emb = Tensor(rng.normal(size=(1, 2, 8)))
        with pytest.raises(ValueError):
            concat_gripper(emb, 1.5)
        with pytest.raises(ValueError):
            concat_gripper(emb, -0.1)


class TestDirectionHead:
    def _head(self, d=12):
        store = ParamStore(dtype=np.float64)
        return store, DirectionHead(store, d, rng_for(1, "dir"), hidden=16)

    def test_unit_norm_enforced(self, rng):
        _, head = self._head()
        with no_grad():
            direction, distance = head(Tensor(rng.normal(size=(40, 12))))
        norms = np.linalg.norm(direction.data, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-6)
        assert np.all(distance.data >= 0.0)

    def test_hand_computed_target(self):
        # gripper (0.4, 0, 0.3) -> block (0.5, 0.1, 0.025)
        vec = np.array([0.5 - 0.4, 0.1 - 0.0, 0.025 - 0.3])
        dist = float(np.linalg.norm(vec))
        unit = vec / dist
        assert dist == pytest.approx(0.30923292, abs=1e-8)
        assert np.allclose(unit, [0.3233808, 0.3233808, -0.8892973], atol=1e-6)

    def test_zero_raw_vector_rejected(self):
        store, head = self._head()
        for name in ("dir.w1", "dir.b1", "dir.w2", "dir.b2"):
            store[name].data[:] = 0.0
        with pytest.raises(FloatingPointError):
            head(Tensor(np.ones((2, 12))))

    def test_pair_and_single_modes(self, rng):
        store = ParamStore(dtype=np.float64)
        pair_head = DirectionHead(store, 24, rng_for(2, "dp"), hidden=16, name="pair")
        ee_head = DirectionHead(store, 12, rng_for(3, "de"), hidden=16, name="ee")
        a, b = Tensor(rng.normal(size=(5, 12))), Tensor(rng.normal(size=(5, 12)))
        with no_grad():
            d1, _ = direction_regress(pair_head, a, b)
            d2, _ = direction_regress(ee_head, a)
        assert d1.shape == (5, 3) and d2.shape == (5, 3)

    def test_random_unit_vector_floor_monte_carlo(self):
        # independent uniform unit vectors: E||p - g|| = 4/3
        r = rng_for(0, "mc-floor")
        n = 1_000_000
        p = r.normal(size=(n, 3))
        p /= np.linalg.norm(p, axis=1, keepdims=True)
        g = r.normal(size=(n, 3))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        err = np.linalg.norm(p - g, axis=1).mean()
        assert err == pytest.approx(4.0 / 3.0, abs=5e-3)
