"""Readout heads over object embeddings.

The predicate head is a collection of independent 2-layer MLPs, one per
predicate type (7 unary, 2 binary by default), each with its own hidden
layer and a single scalar output. They are stored stacked along a leading
family axis so all families evaluate in one batched matmul, but no
weights are shared between families. Head parameters are independent of
the number of objects: unary MLPs map each object embedding to that
object's predicates, binary MLPs map each ordered concatenated pair.

The direction head regresses a 3D unit vector (normalized structurally)
plus a nonnegative distance (softplus) from an embedding or embedding
pair.
"""

from __future__ import annotations

import numpy as np

from .nn.layers import ParamStore, trunc_normal
from .nn.tensor import Tensor, concat, gelu, matmul, power, softplus, tensor_sum
from .scene.schema import PredicateSchema, predicate_count  # noqa: F401  (re-export)

UNARY_COLUMNS = (
    "on_surface_left", "on_surface_right", "on_surface_far", "on_surface_center",
    "has_obj", "top_is_clear", "in_approach_region",
)
BINARY_COLUMNS = ("stacked", "aligned_with")
VIEW_COLUMNS = ("left_of", "right_of", "front_of", "behind_of")


class _FamilyMlps:
    """m independent 2-layer MLPs (d_in -> hidden -> 1), stacked on axis 0."""

    def __init__(self, store: ParamStore, name: str, m: int, d_in: int, hidden: int,
                 rng: np.random.Generator):
        self.m = m
        self.w1 = store.add(f"{name}.w1", trunc_normal(rng, (m, d_in, hidden)))
        self.b1 = store.add(f"{name}.b1", np.zeros((m, 1, hidden)))
        self.w2 = store.add(f"{name}.w2", trunc_normal(rng, (m, hidden, 1)))
        self.b2 = store.add(f"{name}.b2", np.zeros((m, 1, 1)))

    def __call__(self, x: Tensor) -> Tensor:
        """x: [rows, d_in] -> logits [rows, m]."""
        rows = x.shape[0]
        h = gelu(matmul(x.reshape(1, rows, x.shape[1]), self.w1) + self.b1)
        out = matmul(h, self.w2) + self.b2  # [m, rows, 1]
        return out.reshape(self.m, rows).swapaxes(0, 1)


class PredicateHead:
    def __init__(self, store: ParamStore, d_in: int, rng: np.random.Generator,
                 hidden: int = 512, view_relations: bool = False, name: str = "head"):
        self.d_in = d_in
        self.view_relations = view_relations
        self.m_unary = len(UNARY_COLUMNS)
        self.binary_columns = BINARY_COLUMNS + (VIEW_COLUMNS if view_relations else ())
        self.m_binary = len(self.binary_columns)
        self.unary = _FamilyMlps(store, f"{name}.unary", self.m_unary, d_in, hidden, rng)
        self.binary = _FamilyMlps(store, f"{name}.binary", self.m_binary, 2 * d_in, hidden, rng)

    def unary_logits(self, emb: Tensor) -> Tensor:
        """[B, N, d_in] -> [B, N, m_unary], same MLPs applied to every row."""
        b, n, d = emb.shape
        if d != self.d_in:
            raise ValueError(f"embedding width {d} != head width {self.d_in}")
        if n == 0:
            return Tensor(np.zeros((b, 0, self.m_unary), dtype=emb.dtype))
        out = self.unary(emb.reshape(b * n, d))
        return out.reshape(b, n, self.m_unary)

    def binary_logits(self, emb: Tensor, pairs: list[tuple[int, int]] | None = None) -> Tensor:
        """[B, N, d_in] -> [B, N(N-1), m_binary] over ordered pairs.

        Pair p of the output is head(concat(e_i, e_j)) for the p-th pair
        (i, j) in schema enumeration order (i outer, j inner, j != i).
        """
        b, n, d = emb.shape
        if d != self.d_in:
            raise ValueError(f"embedding width {d} != head width {self.d_in}")
        if pairs is None:
            pairs = [(i, j) for i in range(n) for j in range(n) if j != i]
        if not pairs:
            return Tensor(np.zeros((b, 0, self.m_binary), dtype=emb.dtype))
        src = np.array([p[0] for p in pairs])
        dst = np.array([p[1] for p in pairs])
        pair_emb = concat([emb[:, src, :], emb[:, dst, :]], axis=2)
        out = self.binary(pair_emb.reshape(b * len(pairs), 2 * d))
        return out.reshape(b, len(pairs), self.m_binary)

    def assemble(self, emb: Tensor) -> Tensor:
        """Full logit vector [B, 7N + m_binary*N(N-1)] in schema order."""
        b, n, _ = emb.shape
        u = self.unary_logits(emb)
        parts = [
            u[:, :, 0:4].reshape(b, 4 * n),  # on_surface, object-major region-minor
            u[:, :, 4], u[:, :, 5], u[:, :, 6],
        ]
        if n >= 2:
            bl = self.binary_logits(emb)
            parts.extend(bl[:, :, k] for k in range(self.m_binary))
        return concat(parts, axis=1) if n >= 1 else Tensor(np.zeros((b, 0), dtype=emb.dtype))

    def expected_size(self, n: int) -> int:
        return predicate_count(self.m_unary, self.m_binary, n)


def concat_gripper(emb: Tensor, opening) -> Tensor:
    """Append the gripper opening scalar to every embedding row.

    ``opening`` is a scalar (shared by the batch) or an array [B]; each
    value must lie in [0, 1]. Output width is d + 1.
    """
    b, n, d = emb.shape
    op = np.asarray(opening, dtype=emb.dtype).reshape(-1)
    if np.any(op < 0) or np.any(op > 1):
        raise ValueError("gripper opening must lie in [0, 1]")
    if op.size == 1:
        col = np.full((b, n, 1), float(op[0]), dtype=emb.dtype)
    elif op.size == b:
        col = np.repeat(op[:, None, None], n, axis=1)
    else:
        raise ValueError(f"opening must be scalar or length {b}")
    return concat([emb, Tensor(col)], axis=2)


class DirectionHead:
    """2-layer MLP regressor -> (unit direction [.., 3], distance [..])."""

    def __init__(self, store: ParamStore, d_in: int, rng: np.random.Generator,
                 hidden: int = 512, name: str = "dir"):
        self.d_in = d_in
        self.w1 = store.add(f"{name}.w1", trunc_normal(rng, (d_in, hidden)))
        self.b1 = store.add(f"{name}.b1", np.zeros(hidden))
        self.w2 = store.add(f"{name}.w2", trunc_normal(rng, (hidden, 4)))
        self.b2 = store.add(f"{name}.b2", np.zeros(4))

    def __call__(self, x: Tensor) -> tuple[Tensor, Tensor]:
        if x.shape[-1] != self.d_in:
            raise ValueError(f"input width {x.shape[-1]} != head width {self.d_in}")
        h = gelu(matmul(x, self.w1) + self.b1)
        raw = matmul(h, self.w2) + self.b2
        vec = raw[:, 0:3]
        sq = tensor_sum(vec * vec, axis=-1, keepdims=True)
        if np.any(sq.data < 1e-20):
            raise FloatingPointError("direction head produced a zero raw vector")
        direction = vec * power(sq, -0.5)
        distance = softplus(raw[:, 3])
        return direction, distance


def direction_regress(head: DirectionHead, source_emb: Tensor,
                      target_emb: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Regress relative direction and distance from embeddings.

    With both arguments the head consumes concat(source, target) - the
    object-to-object protocol. With only ``source_emb`` the head consumes
    the single embedding - the end-effector-to-object protocol, where the
    gripper context is already part of the embedding.
    """
    feats = source_emb if target_emb is None else concat([source_emb, target_emb], axis=-1)
    return head(feats)
