"""Stochastic gradient descent with classical momentum."""

from __future__ import annotations

import numpy as np

from .layers import ParamStore


class SgdMomentum:
    """v <- mu * v + g;  p <- p - lr * v.

    Velocity buffers are created lazily at zero and always match their
    parameter's shape. ``state()``/``load_state()`` expose the buffers and
    step counter so training can resume bit-exactly.
    """

    def __init__(self, store: ParamStore, lr: float, momentum: float = 0.9):
        if lr < 0:
            raise ValueError("learning rate must be >= 0")
        self.store = store
        self.lr = lr
        self.momentum = momentum
        self.step_count = 0
        self.velocity: dict[str, np.ndarray] = {
            name: np.zeros_like(p.data) for name, p in store.items()
        }

    def zero_grad(self) -> None:
        self.store.zero_grad()

    def step(self) -> None:
        for name, p in self.store.items():
            if p.grad is None:
                raise RuntimeError(f"parameter {name} has no gradient")
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            p.data = p.data - self.lr * v
        self.step_count += 1

    def state(self) -> dict[str, np.ndarray]:
        out = {f"velocity.{k}": v.copy() for k, v in self.velocity.items()}
        out["step_count"] = np.array([self.step_count], dtype=np.float32)
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name in self.velocity:
            key = f"velocity.{name}"
            if key not in state:
                raise KeyError(f"optimizer state missing {key}")
            arr = np.asarray(state[key], dtype=self.velocity[name].dtype)
            if arr.shape != self.velocity[name].shape:
                raise ValueError(f"velocity shape mismatch for {name}")
            self.velocity[name] = arr.copy()
        self.step_count = int(state["step_count"][0])
