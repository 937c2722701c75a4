"""Encoder + predicate head bundled behind one parameter store.

This is the trainable unit: it owns tokenization through logits in schema
order, and (de)serializes itself through the checkpoint container with
enough header metadata to rebuild the architecture.
"""

from __future__ import annotations

import numpy as np

from ..heads import PredicateHead, concat_gripper
from ..nn import checkpoint
from ..nn.tensor import Tensor
from ..rng import rng_for
from .encoder import Encoder, ModelConfig


class PredicateModel:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else rng_for(0, "model-init")
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.store = self.encoder.store
        d_in = cfg.width + (1 if cfg.gripper_concat else 0)
        self.head = PredicateHead(
            self.store, d_in, rng, hidden=cfg.head_hidden,
            view_relations=cfg.view_relations,
        )

    @property
    def is_baseline(self) -> bool:
        return self.cfg.class_tokens > 0

    def embeddings(self, images, views, opening=None, capture=None) -> Tensor:
        """Object (or class-token) embeddings, gripper-augmented if configured."""
        if self.is_baseline:
            emb = self.encoder.class_token_encode(images, capture)
        else:
            emb = self.encoder.forward(images, views, capture)
        if self.cfg.gripper_concat:
            if opening is None:
                raise ValueError("model was built with gripper_concat; pass opening")
            emb = concat_gripper(emb, opening)
        return emb

    def logits(self, images, views, opening=None, capture=None) -> Tensor:
        """Schema-ordered predicate logits [B, 7N + m_b*N(N-1)]."""
        return self.head.assemble(self.embeddings(images, views, opening, capture))

    def save(self, path, extra_meta: dict | None = None) -> None:
        meta = {"model": self.cfg.to_meta()}
        if extra_meta:
            meta.update(extra_meta)
        checkpoint.save(path, self.store.arrays(), meta)

    def digest(self) -> str:
        return self.store.digest()


def load_predicate_model(path) -> tuple[PredicateModel, dict]:
    arrays, meta = checkpoint.load(path)
    cfg = ModelConfig.from_meta(meta["model"])
    model = PredicateModel(cfg)
    model.store.load_arrays({k: v for k, v in arrays.items() if k in model.store.names()})
    return model, meta
