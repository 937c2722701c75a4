"""SGD-with-momentum semantics and the finite-difference gradient checker."""

import numpy as np
import pytest

from visrel.nn.gradcheck import grad_check
from visrel.nn.layers import ParamStore
from visrel.nn.optim import SgdMomentum
from visrel.nn.tensor import Tensor


def _store_with(value, requires=True):
    store = ParamStore(dtype=np.float64)
    store.add("p", np.asarray(value, dtype=np.float64))
    return store


class TestSgdMomentum:
    def test_zero_momentum_is_plain_gradient_descent(self):
        store = _store_with([1.0, 2.0])
        opt = SgdMomentum(store, lr=0.1, momentum=0.0)
        store["p"].grad = np.array([1.0, -2.0])
        opt.step()
        assert np.allclose(store["p"].data, [0.9, 2.2])

    def test_two_steps_constant_gradient_unrolled(self):
        # v1 = g, p1 = p0 - g; v2 = 0.9 g + g, p2 = p1 - 1.9 g
        # total displacement = g * (1 + 1.9)
        store = _store_with([0.0])
        opt = SgdMomentum(store, lr=1.0, momentum=0.9)
        for _ in range(2):
            store["p"].grad = np.array([1.0])
            opt.step()
        assert store["p"].data[0] == pytest.approx(-(1.0 + 1.9))

    def test_zero_gradient_never_moves(self):
        store = _store_with([3.0, -1.0])
        opt = SgdMomentum(store, lr=0.5, momentum=0.9)
        for _ in range(10):
            store["p"].grad = np.zeros(2)
            opt.step()
        assert np.array_equal(store["p"].data, [3.0, -1.0])

    def test_missing_gradient_rejected(self):
        store = _store_with([1.0])
        opt = SgdMomentum(store, lr=0.1)
        with pytest.raises(RuntimeError, match="no gradient"):
            opt.step()

    def test_state_round_trip_continues_identically(self):
        def run(steps, reload_at=None):
            store = _store_with([1.0, 1.0])
            opt = SgdMomentum(store, lr=0.1, momentum=0.9)
            for k in range(steps):
                if reload_at is not None and k == reload_at:
                    state = opt.state()
                    params = store.arrays()
                    store = _store_with(params["p"])
                    opt = SgdMomentum(store, lr=0.1, momentum=0.9)
                    opt.load_state(state)
                store["p"].grad = store["p"].data * 0.5
                opt.step()
            return store["p"].data.copy(), opt.step_count

        a, sa = run(6)
        b, sb = run(6, reload_at=3)
        assert np.array_equal(a, b)
        assert sa == sb

    def test_velocity_shapes_match_parameters(self):
        store = ParamStore()
        store.add("a", np.zeros((3, 4)))
        store.add("b", np.zeros(7))
        opt = SgdMomentum(store, lr=0.1)
        assert opt.velocity["a"].shape == (3, 4)
        assert opt.velocity["b"].shape == (7,)


class TestGradCheck:
    def test_quadratic_loss_tight(self):
        store = _store_with(np.linspace(-1, 1, 9))
        p = store["p"]
        err = grad_check(lambda: (p * p).sum(), {"p": p}, eps=1e-6)
        assert err <= 1e-8

    def test_eps_zero_rejected(self):
        store = _store_with([1.0])
        with pytest.raises(ValueError):
            grad_check(lambda: (store["p"] * store["p"]).sum(), dict(store.items()), eps=0.0)

    def test_nonfinite_loss_rejected(self):
        store = _store_with([1.0])

        def loss():
            return Tensor(np.array(np.inf))

        with pytest.raises(FloatingPointError):
            grad_check(loss, dict(store.items()), eps=1e-4)

    def test_detects_wrong_gradient(self):
        # an op with a deliberately broken backward must produce a large error
        store = _store_with(np.array([0.7, -0.3]))
        p = store["p"]

        def loss():
            out = p * p
            broken = Tensor(out.data)
            broken._parents = (p,)
            broken._backward = lambda g: ((p, 3.0 * g * p.data),)  # truth: 2p
            return broken.sum()

        err = grad_check(loss, {"p": p}, eps=1e-6)
        assert err > 0.2
