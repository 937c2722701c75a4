from .tensor import (
    Tensor,
    add,
    bce_with_logits,
    concat,
    gelu,
    grad_enabled,
    layer_norm,
    matmul,
    no_grad,
    set_strict_finite,
    softmax,
    softplus,
)
from .layers import Linear, LayerNorm, Mlp, MultiHeadAttention, ParamStore, TransformerBlock
from .optim import SgdMomentum
from .gradcheck import grad_check
from . import checkpoint

__all__ = [
    "Tensor",
    "add",
    "bce_with_logits",
    "concat",
    "gelu",
    "grad_enabled",
    "layer_norm",
    "matmul",
    "no_grad",
    "set_strict_finite",
    "softmax",
    "softplus",
    "Linear",
    "LayerNorm",
    "Mlp",
    "MultiHeadAttention",
    "ParamStore",
    "TransformerBlock",
    "SgdMomentum",
    "grad_check",
    "checkpoint",
]
