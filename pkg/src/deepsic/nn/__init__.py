from .tensor import (
    Tensor,
    UsageError,
    ShapeError,
    backward,
    clamp,
    cross_entropy_logits,
    cumsum_last,
    exp,
    gather_channel_bins,
    leaky_relu,
    log,
    matmul,
    softmax,
    softplus,
    straight_through,
)
from . import functional
from .layers import BatchNorm2d, Conv2d, Linear
from .optim import Adam, OptimizerState, adam_step
from .gradcheck import gradcheck, max_rel_error, numerical_gradient
from . import checkpoint

__all__ = [
    "Tensor",
    "UsageError",
    "ShapeError",
    "backward",
    "clamp",
    "cross_entropy_logits",
    "cumsum_last",
    "exp",
    "gather_channel_bins",
    "leaky_relu",
    "log",
    "matmul",
    "softmax",
    "softplus",
    "straight_through",
    "functional",
    "BatchNorm2d",
    "Conv2d",
    "Linear",
    "Adam",
    "OptimizerState",
    "adam_step",
    "gradcheck",
    "max_rel_error",
    "numerical_gradient",
    "checkpoint",
]
