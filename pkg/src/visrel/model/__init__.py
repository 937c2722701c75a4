from .encoder import (
    Encoder,
    ModelConfig,
    TokenSequence,
    attention_heatmap,
    build_attention_mask,
)
from .bundle import PredicateModel, load_predicate_model

__all__ = [
    "Encoder",
    "ModelConfig",
    "TokenSequence",
    "attention_heatmap",
    "build_attention_mask",
    "PredicateModel",
    "load_predicate_model",
]
