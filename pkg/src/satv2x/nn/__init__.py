from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import (
    DimensionError,
    GRUCell,
    Linear,
    Module,
    MultiHeadAttention,
    affine,
    gru_cell,
    multi_head_attention,
)
from .optim import Adam, clip_grad_norm
from .tensor import (
    ContractError,
    OpCounter,
    Parameter,
    Tape,
    Tensor,
    add,
    backward,
    concat,
    count_ops,
    dropout,
    exp,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    square,
    stack,
    sub,
    take_rows,
    tanh,
    transpose,
    tsum,
)
