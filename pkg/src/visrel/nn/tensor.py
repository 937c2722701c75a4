"""Reverse-mode autodiff over numpy arrays.

Deliberately small: only the operations the encoder, the readout heads and
the losses actually use. Gradients of every primitive are verified against
central finite differences in the test suite. Float32 is the working
precision for training; float64 is supported throughout so that gradient
checking is meaningful.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
_STRICT_FINITE = False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def set_strict_finite(enabled: bool) -> None:
    """When enabled, every op output is checked for NaN/Inf immediately."""
    global _STRICT_FINITE
    _STRICT_FINITE = bool(enabled)


class Tensor:
    """A dense n-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def assert_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"non-finite values in {what}")
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this tensor through the recorded graph."""
        if grad is None:
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if not (parent.requires_grad or parent._parents):
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    if _STRICT_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by an op")
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or bool(t._parents)


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    data = a.data + b.data
    need_a, need_b = _needs_grad(a), _needs_grad(b)

    def backward(g):
        out = []
        if need_a:
            out.append((a, _unbroadcast(g, a.shape)))
        if need_b:
            out.append((b, _unbroadcast(g, b.shape)))
        return out

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    data = a.data * b.data
    need_a, need_b = _needs_grad(a), _needs_grad(b)

    def backward(g):
        out = []
        if need_a:
            out.append((a, _unbroadcast(g * b.data, a.shape)))
        if need_b:
            out.append((b, _unbroadcast(g * a.data, b.shape)))
        return out

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    data = a.data / b.data
    need_a, need_b = _needs_grad(a), _needs_grad(b)

    def backward(g):
        out = []
        if need_a:
            out.append((a, _unbroadcast(g / b.data, a.shape)))
        if need_b:
            out.append((b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))
        return out

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch axes."""
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have ndim >= 2")
    data = a.data @ b.data
    need_a, need_b = _needs_grad(a), _needs_grad(b)

    def backward(g):
        out = []
        if need_a:
            ga = g @ np.swapaxes(b.data, -1, -2)
            out.append((a, _unbroadcast(ga, a.shape)))
        if need_b:
            if b.ndim == 2 and a.ndim > 2:
                # collapse batch axes: one GEMM instead of a batched
                # product followed by a large reduction
                k = a.shape[-1]
                n = g.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            out.append((b, gb))
        return out

    return _make(data, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    data = x.data.reshape(shape)

    def backward(g):
        return ((x, g.reshape(old)),)

    return _make(data, (x,), backward)


def swapaxes(x: Tensor, a: int, b: int) -> Tensor:
    data = np.swapaxes(x.data, a, b)

    def backward(g):
        return ((x, np.swapaxes(g, a, b)),)

    return _make(data, (x,), backward)


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    data = x.data[idx]

    if _is_basic_index(idx):
        # basic indexing selects each element at most once
        def backward(g):
            full = np.zeros_like(x.data)
            full[idx] = g
            return ((x, full),)
    else:
        def backward(g):
            full = np.zeros_like(x.data)
            np.add.at(full, idx, g)
            return ((x, full),)

    return _make(data, (x,), backward)


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [t for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def backward(g):
        out = []
        start = 0
        for t, n in zip(ts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            out.append((t, g[tuple(sl)]))
            start += n
        return tuple(out)

    return _make(data, tuple(ts), backward)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return ((x, np.broadcast_to(g, x.shape).copy()),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((x, np.broadcast_to(g, x.shape).copy()),)

    return _make(data, (x,), backward)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= x.shape[ax]
    return mul(tensor_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def power(x: Tensor, p: float) -> Tensor:
    data = x.data**p

    def backward(g):
        return ((x, g * p * x.data ** (p - 1)),)

    return _make(data, (x,), backward)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(x: Tensor) -> Tensor:
    """GELU activation (tanh approximation)."""
    x2 = x.data * x.data
    u = _GELU_C * (x.data + _GELU_A * x2 * x.data)
    t = np.tanh(u)
    data = 0.5 * x.data * (1.0 + t)

    def backward(g):
        # fused in-place evaluation; closures run at most once per graph
        du = x2
        du *= 3.0 * _GELU_A
        du += 1.0
        du *= _GELU_C
        tt = t * t
        np.subtract(1.0, tt, out=tt)
        tt *= x.data
        tt *= du
        tt += 1.0 + t
        tt *= 0.5
        tt *= g
        return ((x, tt),)

    return _make(data, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)) in overflow-safe form."""
    data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))

    def backward(g):
        sig = 1.0 / (1.0 + np.exp(-x.data))
        return ((x, g * sig),)

    return _make(data, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((x, y * (g - dot)),)

    return _make(y, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def backward(g):
        d = x.shape[-1]
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        reduce_axes = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=reduce_axes)
        dbeta = g.sum(axis=reduce_axes)
        return ((x, dx), (gamma, dgamma), (beta, dbeta))

    return _make(data, (x, gamma, beta), backward)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on raw logits.

    Computed as mean(softplus(-(2t - 1) * z)) in the overflow-safe
    log-sum-exp form, so extreme logits never produce NaN/Inf.
    """
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    t = t.astype(logits.dtype)
    if t.shape != logits.shape:
        raise ValueError(f"logits shape {logits.shape} != targets shape {t.shape}")
    if t.size and not np.all((t == 0) | (t == 1)):
        raise ValueError("targets must be binary")
    u = -(2.0 * t - 1.0) * logits.data
    per = np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))
    data = np.asarray(per.mean(), dtype=logits.dtype)
    n = logits.size

    def backward(g):
        sig = 1.0 / (1.0 + np.exp(-logits.data))
        return ((logits, g * (sig - t) / n),)

    return _make(data, (logits,), backward)
