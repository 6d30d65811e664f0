from .gradcheck import grad_check, numeric_gradient
from .layers import (
    TransformerBlockParams,
    dropout,
    init_transformer_block,
    layer_norm,
    linear,
    multi_head_attention,
    transformer_block,
)
from .tensor import (
    Tensor,
    concat,
    log_softmax,
    matmul,
    no_grad,
    softmax,
    stack,
    tensor,
    zero_grad,
)

__all__ = [
    "Tensor", "tensor", "matmul", "concat", "stack", "softmax", "log_softmax",
    "no_grad", "zero_grad", "linear", "layer_norm", "dropout",
    "multi_head_attention", "transformer_block", "init_transformer_block",
    "TransformerBlockParams", "grad_check", "numeric_gradient",
]
