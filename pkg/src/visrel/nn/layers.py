"""Layers used by the encoder and heads, built on the autodiff core.

Parameters live in a :class:`ParamStore` keyed by dotted names, which is
also the unit of checkpointing and optimization.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .tensor import Tensor, concat, gelu, layer_norm, matmul, softmax, tensor_sum

MASK_NEG = -1e9  # additive stand-in for -inf before softmax


class ParamStore:
    """Ordered name -> parameter tensor registry."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_values(self) -> int:
        return sum(p.size for p in self._params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in self._params.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def digest(self) -> str:
        """Content hash over all parameter values (float32, name order)."""
        h = hashlib.sha256()
        for name in sorted(self._params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self._params[name].data, dtype=np.float32).tobytes())
        return h.hexdigest()


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal samples with |x| <= 2*std enforced by redrawing."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 rng: np.random.Generator, std: float = 0.02, zero_init: bool = False):
        w = np.zeros((d_in, d_out)) if zero_init else trunc_normal(rng, (d_in, d_out), std)
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int, eps: float = 1e-5):
        self.g = store.add(f"{name}.g", np.ones(d))
        self.b = store.add(f"{name}.b", np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.g, self.b, self.eps)


def mask_to_bias(allow: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Boolean permission matrix -> additive score bias (0 / MASK_NEG)."""
    allow = np.asarray(allow, dtype=bool)
    if allow.ndim != 2 or allow.shape[0] != allow.shape[1]:
        raise ValueError("attention mask must be a square matrix")
    if not allow.any(axis=1).all():
        raise ValueError("attention mask has an all-masked row")
    return np.where(allow, 0.0, MASK_NEG).astype(dtype)


def _heads_split(x: Tensor, n_heads: int) -> Tensor:
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).swapaxes(1, 2)


def _heads_merge(x: Tensor) -> Tensor:
    b, h, t, dh = x.shape
    return x.swapaxes(1, 2).reshape(b, t, h * dh)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, bias: np.ndarray,
                         capture: list | None = None) -> Tensor:
    """Core attention over [batch, heads, tokens, head_dim] tensors."""
    dh = q.shape[-1]
    scores = matmul(q, k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    scores = scores + Tensor(bias)
    att = softmax(scores, axis=-1)
    if capture is not None:
        capture.append(att.data.copy())
    return matmul(att, v)


def split_dot_attention(q: Tensor, k: Tensor, v: Tensor, n_ctx: int,
                        capture: list | None = None) -> Tensor:
    """Attention specialized to the query-conditioning mask structure.

    Tokens [0, n_ctx) are context (attend to all context); the rest are
    object queries (attend to context plus themselves). Computing the two
    groups separately keeps every output row's reduction length fixed
    regardless of how many object tokens are present, so adding, removing
    or permuting queries cannot change any other row even at the level of
    floating-point rounding.
    """
    b, h, t, dh = q.shape
    n_obj = t - n_ctx
    scale = 1.0 / np.sqrt(dh)
    qc, kc, vc = q[:, :, :n_ctx], k[:, :, :n_ctx], v[:, :, :n_ctx]
    att_cc = softmax(matmul(qc, kc.swapaxes(-1, -2)) * scale, axis=-1)
    out_ctx = matmul(att_cc, vc)
    if n_obj == 0:
        if capture is not None:
            capture.append(att_cc.data.copy())
        return out_ctx
    qo, ko, vo = q[:, :, n_ctx:], k[:, :, n_ctx:], v[:, :, n_ctx:]
    scores_oc = matmul(qo, kc.swapaxes(-1, -2)) * scale  # [B, h, O, C]
    score_self = tensor_sum(qo * ko, axis=-1, keepdims=True) * scale
    att_o = softmax(concat([scores_oc, score_self], axis=-1), axis=-1)
    out_obj = matmul(att_o[:, :, :, :n_ctx], vc) + att_o[:, :, :, n_ctx:] * vo
    if capture is not None:
        full = np.zeros((b, h, t, t), dtype=att_cc.dtype)
        full[:, :, :n_ctx, :n_ctx] = att_cc.data
        full[:, :, n_ctx:, :n_ctx] = att_o.data[:, :, :, :n_ctx]
        idx = np.arange(n_obj)
        full[:, :, n_ctx + idx, n_ctx + idx] = att_o.data[:, :, idx, n_ctx]
        capture.append(full)
    return concat([out_ctx, out_obj], axis=2)


def masked_attention(q: Tensor, k: Tensor, v: Tensor, allow: np.ndarray, n_heads: int,
                     proj_w: Tensor, proj_b: Tensor, capture: list | None = None) -> Tensor:
    """Multi-head attention over already-projected q/k/v of shape [T, d].

    Disallowed (i, j) pairs get a large negative additive bias before the
    softmax; each softmax row therefore normalizes over allowed entries
    only. Heads are concatenated and passed through the output projection.
    """
    if q.shape != k.shape or q.shape != v.shape:
        raise ValueError("q, k, v must share a shape")
    t, d = q.shape
    if d % n_heads != 0:
        raise ValueError(f"width {d} not divisible by {n_heads} heads")
    if np.asarray(allow).shape != (t, t):
        raise ValueError("mask shape must be [T, T]")
    bias = mask_to_bias(allow, dtype=q.dtype)
    q3, k3, v3 = (_heads_split(x.reshape(1, t, d), n_heads) for x in (q, k, v))
    ctx = scaled_dot_attention(q3, k3, v3, bias, capture)
    out = _heads_merge(ctx).reshape(t, d)
    return matmul(out, proj_w) + proj_b


class SplitMask:
    """Marker selecting the structured context/object attention pattern."""

    __slots__ = ("n_ctx",)

    def __init__(self, n_ctx: int):
        self.n_ctx = n_ctx


class MultiHeadAttention:
    def __init__(self, store: ParamStore, name: str, d: int, n_heads: int,
                 rng: np.random.Generator):
        if d % n_heads != 0:
            raise ValueError(f"width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q = Linear(store, f"{name}.q", d, d, rng)
        self.k = Linear(store, f"{name}.k", d, d, rng)
        self.v = Linear(store, f"{name}.v", d, d, rng)
        self.out = Linear(store, f"{name}.out", d, d, rng)

    def __call__(self, x: Tensor, mask: "np.ndarray | SplitMask",
                 capture: list | None = None) -> Tensor:
        q = _heads_split(self.q(x), self.n_heads)
        k = _heads_split(self.k(x), self.n_heads)
        v = _heads_split(self.v(x), self.n_heads)
        if isinstance(mask, SplitMask):
            ctx = split_dot_attention(q, k, v, mask.n_ctx, capture)
        else:
            ctx = scaled_dot_attention(q, k, v, mask, capture)
        return self.out(_heads_merge(ctx))


class Mlp:
    """Two-layer GELU MLP, the only feed-forward shape used anywhere."""

    def __init__(self, store: ParamStore, name: str, d_in: int, hidden: int, d_out: int,
                 rng: np.random.Generator):
        self.fc1 = Linear(store, f"{name}.fc1", d_in, hidden, rng)
        self.fc2 = Linear(store, f"{name}.fc2", hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class TransformerBlock:
    """Pre-norm residual block: LN -> masked MHA -> +x, LN -> MLP -> +x."""

    def __init__(self, store: ParamStore, name: str, d: int, n_heads: int,
                 mlp_ratio: int, rng: np.random.Generator):
        self.ln1 = LayerNorm(store, f"{name}.ln1", d)
        self.attn = MultiHeadAttention(store, f"{name}.attn", d, n_heads, rng)
        self.ln2 = LayerNorm(store, f"{name}.ln2", d)
        self.mlp = Mlp(store, f"{name}.mlp", d, mlp_ratio * d, d, rng)

    def __call__(self, x: Tensor, mask: "np.ndarray | SplitMask",
                 capture: list | None = None) -> Tensor:
        x = x + self.attn(self.ln1(x), mask, capture)
        return x + self.mlp(self.ln2(x))
