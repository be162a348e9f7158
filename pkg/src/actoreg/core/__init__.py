from actoreg.core.errors import (
    ActoregError,
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    NumericError,
)
from actoreg.core.optim import AdamState, adam_step, cosine_lr
from actoreg.core.rng import Rng, rng_normal
from actoreg.core.tensor import (
    Graph,
    Tensor,
    abs_,
    affine,
    add,
    as_tensor,
    backward,
    check_finite,
    clip,
    concat,
    div,
    exp,
    index,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    minimum,
    mul,
    neg,
    no_grad,
    precision,
    relu,
    reshape,
    softmax_cross_entropy,
    softmax_expectation,
    sqrt,
    square,
    standardize,
    sub,
    tanh,
    tsum,
    var,
)

__all__ = [name for name in dir() if not name.startswith("_")]
