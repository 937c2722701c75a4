"""View-conditioned transformer encoder.

The scene image is cut into fixed-size context patches; small standalone
object views of the same size act as visual queries. All patches are
flattened, linearly projected and tagged with positional embeddings:
per-position learned vectors for context patches, one shared learned
vector for every object token (which, together with the attention mask,
makes the output embeddings permutation-equivariant in the views).

The attention mask lets context attend to context, object tokens attend
to context and to themselves, and nothing else - so each object row is a
pure readout of the scene conditioned on its own query, unaffected by
which other queries are present.

A fixed-class-token variant (``class_tokens=k``) replaces the object
queries with k learned tokens over an unmasked sequence - the
non-conditioned baseline for comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nn.layers import (
    LayerNorm,
    Linear,
    ParamStore,
    SplitMask,
    TransformerBlock,
    trunc_normal,
)
from ..nn.tensor import Tensor, concat

_ANY = object()


@dataclass
class ModelConfig:
    image_size: int = 128
    patch_size: int = 16
    width: int = 128
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    class_tokens: int = 0  # 0 = view-conditioned; k > 0 = class-token baseline
    gripper_concat: bool = False
    head_hidden: int = 512
    view_relations: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ValueError("image size must be divisible by patch size")
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by the head count")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def n_ctx(self) -> int:
        return self.grid * self.grid

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_size * self.patch_size

    def to_meta(self) -> dict:
        return dict(self.__dict__)

    @staticmethod
    def from_meta(meta: dict) -> "ModelConfig":
        return ModelConfig(**meta)


@dataclass
class TokenSequence:
    """Projected tokens plus provenance, for a single sample."""

    tokens: Tensor  # [n_ctx + n_obj, d]
    n_ctx: int
    n_obj: int
    grid: tuple[int, int]

    @property
    def length(self) -> int:
        return self.n_ctx + self.n_obj


def build_attention_mask(n_ctx: int, n_obj: int) -> np.ndarray:
    """Boolean permission matrix: entry (i, j) true iff i may attend to j.

    Context rows see all context and no object tokens; object rows see
    all context plus themselves only. Every row has a true entry, so the
    masked softmax is always well-defined.
    """
    if n_ctx < 1:
        raise ValueError("need at least one context token")
    if n_obj < 0:
        raise ValueError("n_obj must be >= 0")
    t = n_ctx + n_obj
    allow = np.zeros((t, t), dtype=bool)
    allow[:, :n_ctx] = True
    obj = np.arange(n_ctx, t)
    allow[obj, obj] = True
    return allow


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """uint8 images [B, H, W, 3] -> float patch rows [B, n_ctx, 3*p*p] in [0, 1]."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    b, h, w, c = images.shape
    if h % patch or w % patch or c != 3:
        raise ValueError(f"image shape {images.shape[1:]} incompatible with patch {patch}")
    gh, gw = h // patch, w // patch
    x = images.reshape(b, gh, patch, gw, patch, c)
    x = x.transpose(0, 1, 3, 2, 4, 5).reshape(b, gh * gw, patch * patch * c)
    return x.astype(np.float32) / 255.0


def flatten_views(views, patch: int) -> np.ndarray:
    """Object views [B, n, p, p, 3] (or list of [p, p, 3]) -> [B, n, 3*p*p]."""
    if isinstance(views, (list, tuple)) and len(views) == 0:
        return np.zeros((1, 0, 3 * patch * patch), dtype=np.float32)
    arr = np.asarray(views)
    if arr.ndim == 4:  # list of views for one sample
        arr = arr[None]
    if arr.ndim == 5 and arr.shape[1] == 0:
        return np.zeros((arr.shape[0], 0, 3 * patch * patch), dtype=np.float32)
    b, n, ph, pw, c = arr.shape
    if (ph, pw, c) != (patch, patch, 3):
        raise ValueError(f"object views must be {patch}x{patch}x3, got {ph}x{pw}x{c}")
    return arr.reshape(b, n, 3 * patch * patch).astype(np.float32) / 255.0


class Encoder:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator,
                 store: ParamStore | None = None, prefix: str = "enc"):
        self.cfg = cfg
        self.store = store if store is not None else ParamStore(dtype=cfg.dtype)
        d = cfg.width
        self.patch_proj = Linear(self.store, f"{prefix}.patch_proj", cfg.patch_dim, d, rng)
        self.pos_ctx = self.store.add(f"{prefix}.pos_ctx", trunc_normal(rng, (cfg.n_ctx, d)))
        if cfg.class_tokens > 0:
            self.cls_tokens = self.store.add(
                f"{prefix}.cls_tokens", trunc_normal(rng, (cfg.class_tokens, d)))
        else:
            self.pos_obj = self.store.add(f"{prefix}.pos_obj", trunc_normal(rng, (d,)))
        self.blocks = [
            TransformerBlock(self.store, f"{prefix}.block{i}", d, cfg.heads, cfg.mlp_ratio, rng)
            for i in range(cfg.depth)
        ]
        self.ln_f = LayerNorm(self.store, f"{prefix}.ln_f", d)

    # -- tokenization ------------------------------------------------------

    def _project(self, flat: np.ndarray) -> Tensor:
        # The projection is affine in the [0, 1]-scaled patch values; the
        # -0.5 shift only reparameterizes its bias, but gives SGD
        # zero-centered inputs to work with.
        x = flat.astype(self.store.dtype)
        x -= 0.5
        return self.patch_proj(Tensor(x))

    def tokenize_batch(self, images: np.ndarray, views) -> tuple[Tensor, int]:
        """Project context patches and object views; add positional terms.

        Returns tokens [B, n_ctx + n_obj, d] and n_obj. Every object token
        receives the same shared positional vector; context tokens receive
        their per-position vectors.
        """
        cfg = self.cfg
        ctx_tok = self._project(patchify(images, cfg.patch_size)) + self.pos_ctx
        obj = flatten_views(views, cfg.patch_size)
        n_obj = obj.shape[1]
        if n_obj == 0:
            return ctx_tok, 0
        obj_tok = self._project(obj) + self.pos_obj
        return concat([ctx_tok, obj_tok], axis=1), n_obj

    def tokenize(self, image: np.ndarray, views: list[np.ndarray]) -> TokenSequence:
        """Single-sample tokenization, exposing provenance."""
        tokens, n_obj = self.tokenize_batch(image[None], list(views))
        return TokenSequence(tokens[0], self.cfg.n_ctx, n_obj, (self.cfg.grid, self.cfg.grid))

    # -- encoding ----------------------------------------------------------

    def encode_batch(self, tokens: Tensor, n_obj: int,
                     capture: list | None = None) -> Tensor:
        """Run the masked transformer; return object rows [B, n_obj, d].

        The blocks use the structured attention pattern matching
        :func:`build_attention_mask`, computed in a form whose per-row
        arithmetic is independent of the number of object tokens.
        """
        t = tokens.shape[1]
        mask = SplitMask(t - n_obj)
        x = tokens
        for blk in self.blocks:
            x = blk(x, mask, capture)
        x = self.ln_f(x)
        return x[:, t - n_obj:, :]

    def encode(self, seq: TokenSequence, capture: list | None = None) -> Tensor:
        """Single-sample encode -> object embeddings [n_obj, d]."""
        out = self.encode_batch(seq.tokens.reshape(1, seq.length, self.cfg.width),
                                seq.n_obj, capture)
        return out[0]

    def forward(self, images: np.ndarray, views, capture: list | None = None) -> Tensor:
        tokens, n_obj = self.tokenize_batch(images, views)
        return self.encode_batch(tokens, n_obj, capture)

    # -- class-token baseline ----------------------------------------------

    def class_token_encode(self, images: np.ndarray, capture: list | None = None) -> Tensor:
        """Unmasked ViT with k learned class tokens -> [B, k, d]."""
        cfg = self.cfg
        if cfg.class_tokens <= 0:
            raise RuntimeError("model was not built with class tokens")
        ctx_tok = self._project(patchify(images, cfg.patch_size)) + self.pos_ctx
        b = ctx_tok.shape[0]
        k = cfg.class_tokens
        cls = self.cls_tokens.reshape(1, k, cfg.width)
        cls = concat([cls] * b, axis=0) if b > 1 else cls
        x = concat([ctx_tok, cls], axis=1)
        t = cfg.n_ctx + k
        bias = np.zeros((t, t), dtype=self.store.dtype)
        for blk in self.blocks:
            x = blk(x, bias, capture)
        x = self.ln_f(x)
        return x[:, cfg.n_ctx:, :]


def attention_heatmap(captured: list[np.ndarray], object_index: int, layer: int,
                      n_ctx: int, grid: tuple[int, int], out_size: int,
                      sample: int = 0) -> np.ndarray:
    """Attention of one object token over context patches as a [H, W] map.

    Head-averaged weights are reshaped to the patch grid, min-max
    normalized to [0, 1] (an all-equal row maps to all zeros), and
    upsampled by pixel repetition to the requested output size.
    """
    if not 0 <= layer < len(captured):
        raise IndexError(f"layer {layer} out of range (depth {len(captured)})")
    att = captured[layer]
    if att.ndim == 3:  # single-sample capture [heads, T, T]
        att = att[None]
    t = att.shape[-1]
    row = n_ctx + object_index
    if not n_ctx <= row < t:
        raise IndexError(f"object index {object_index} out of range")
    weights = att[sample, :, row, :n_ctx].mean(axis=0)
    lo, hi = float(weights.min()), float(weights.max())
    if hi - lo < 1e-12:
        norm = np.zeros_like(weights)
    else:
        norm = (weights - lo) / (hi - lo)
    gh, gw = grid
    heat = norm.reshape(gh, gw)
    rep = out_size // gh
    return np.repeat(np.repeat(heat, rep, axis=0), rep, axis=1)
