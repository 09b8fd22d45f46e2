"""Self-contained tensor core: float64 arrays, gradient tape, Adam."""

from .adam import AdamState, adam_step
from .gradcheck import DEFAULT_FD_STEP, check_gradients, numeric_gradient, relative_error
from .tensor import (
    LAYER_NORM_EPS,
    MacCounter,
    Tape,
    Tensor,
    add,
    add_scalar,
    average_pool_spatial,
    backward,
    concat,
    conv2d,
    count_macs,
    crop2d,
    gelu,
    layer_norm,
    matmul,
    mse,
    mul,
    no_tape,
    pad_reflect2d,
    position_bias,
    reduce_mean,
    reduce_sum,
    reshape,
    roll2d,
    scale,
    sigmoid,
    slice_axis,
    softmax,
    sub,
    take_channels,
    transpose,
    zero_grads,
)

__all__ = [
    "AdamState",
    "DEFAULT_FD_STEP",
    "LAYER_NORM_EPS",
    "MacCounter",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "add_scalar",
    "average_pool_spatial",
    "backward",
    "check_gradients",
    "concat",
    "conv2d",
    "count_macs",
    "crop2d",
    "gelu",
    "layer_norm",
    "matmul",
    "mse",
    "mul",
    "no_tape",
    "numeric_gradient",
    "pad_reflect2d",
    "position_bias",
    "reduce_mean",
    "reduce_sum",
    "relative_error",
    "reshape",
    "roll2d",
    "scale",
    "sigmoid",
    "slice_axis",
    "softmax",
    "sub",
    "take_channels",
    "transpose",
    "zero_grads",
]
