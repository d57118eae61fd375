from .tensor import (
    Tensor,
    as_tensor,
    default_dtype,
    epsilon,
    grad_enabled,
    no_grad,
    set_default_dtype,
    set_epsilon,
)
from .ops import (
    add,
    affine,
    clamp,
    conv3d,
    div,
    log,
    masked_select,
    mean,
    mul,
    neg,
    relu,
    softmax,
    sub,
    tanh,
    tensor_sum,
    upsample_nearest,
)
from .rng import kaiming_uniform, seeded_rng, zeros_param
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "Tensor", "as_tensor", "epsilon", "set_epsilon", "default_dtype",
    "set_default_dtype", "no_grad", "grad_enabled",
    "add", "sub", "mul", "div", "neg", "log", "clamp", "relu", "tanh",
    "softmax", "tensor_sum", "mean", "masked_select", "affine", "conv3d",
    "upsample_nearest",
    "seeded_rng", "kaiming_uniform", "zeros_param",
    "grad_check", "GradCheckReport",
]
