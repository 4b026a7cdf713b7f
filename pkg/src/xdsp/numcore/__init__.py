from .gradcheck import grad_check
from .optim import AdamState, adam_step, clip_global_norm, global_norm
from .tensor import (
    UNARY_OPS,
    Tape,
    Tensor,
    active_tape,
    add,
    apply_unary,
    backward,
    concat,
    div,
    exp,
    getitem,
    log,
    log_softmax_rows,
    matmul,
    mul,
    neg,
    pick,
    reshape,
    seq_sum,
    sigmoid,
    softmax_rows,
    stack,
    sub,
    take_rows,
    tanh,
    transpose,
    where,
)

__all__ = [
    "AdamState", "Tape", "Tensor", "UNARY_OPS", "active_tape", "adam_step", "add",
    "apply_unary", "backward", "clip_global_norm", "concat", "div", "exp", "getitem",
    "global_norm", "grad_check", "log", "log_softmax_rows", "matmul", "mul", "neg", "pick",
    "reshape", "seq_sum", "sigmoid", "softmax_rows", "stack", "sub", "take_rows", "tanh",
    "transpose", "where",
]
