from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    bce_with_logits,
    broadcast_to,
    channel_norm,
    concat,
    div,
    exp,
    getitem,
    is_grad_enabled,
    log,
    matmul,
    max_reduce,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    sqrt,
    sub,
    sum_,
    vjp,
)
from .nn import CondScaleShift, Linear, Module, Parameter, cond_scale_shift, linear
from .optim import Adam, adam_step
from .serialize import FORMAT_VERSION, load_arrays, save_arrays
