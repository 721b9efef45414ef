"""Dense tensor arithmetic with reverse-mode autodiff and an Adam optimizer."""

from .adam import AdamState, adam_step
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    cosine_similarity,
    cross_entropy,
    gelu,
    l2_normalize,
    layer_norm,
    log,
    exp,
    scaled_dot_product_attention,
    softmax,
    take_at,
    take_rows,
)
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    add,
    concat,
    div,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    sub,
    tensor_sum,
    transpose,
    zero_grads,
)

__all__ = [
    "AdamState",
    "GradCheckReport",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "adam_step",
    "add",
    "concat",
    "cosine_similarity",
    "cross_entropy",
    "div",
    "exp",
    "gelu",
    "grad_check",
    "l2_normalize",
    "layer_norm",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "reshape",
    "scaled_dot_product_attention",
    "softmax",
    "sub",
    "take_at",
    "take_rows",
    "tensor_sum",
    "transpose",
    "zero_grads",
]
