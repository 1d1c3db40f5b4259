"""Framework-free tensors, layers and reverse-mode autodiff."""

from .checkpoint import decode_arrays, encode_arrays, load_arrays, save_arrays
from .nn import (
    conv2d,
    conv_output_size,
    depthwise_conv1d,
    layer_norm,
    max_pool2d,
    transposed_conv2d,
)
from .tensor import (
    ConfigError,
    GradientError,
    ShapeError,
    Tape,
    Tensor,
    add,
    apply,
    as_tensor,
    backward,
    concat,
    current_tape,
    div,
    exp,
    flip,
    gelu,
    getitem,
    grad_enabled,
    linear,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    sigmoid,
    silu,
    softmax,
    softplus,
    split,
    sqrt,
    sub,
    sum_,
    swapaxes,
    tanh,
    tensor,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
