"""Minimal reverse-mode autodiff over numpy arrays.

Randomness (dropout masks, initialisation) always comes from an explicit
``numpy.random.Generator`` (PCG64), so a fixed seed gives bit-identical runs.
"""

from . import functional
from .functional import (
    additive_score,
    bce_with_logits,
    concat,
    cross_entropy,
    dropout,
    embedding,
    exp,
    linear,
    log,
    log_sigmoid,
    lstm_cell,
    masked_mean,
    masked_softmax,
    matmul,
    sigmoid,
    softmax,
    stack,
    tanh,
    unstack,
    weighted_sum,
)
from .gradcheck import GradCheckReport, grad_check, relative_error
from .tensor import Function, Record, Tape, Tensor, active_tape, backward

__all__ = [
    "Function",
    "GradCheckReport",
    "Record",
    "Tape",
    "Tensor",
    "active_tape",
    "additive_score",
    "backward",
    "bce_with_logits",
    "concat",
    "cross_entropy",
    "dropout",
    "embedding",
    "exp",
    "functional",
    "grad_check",
    "linear",
    "log",
    "log_sigmoid",
    "lstm_cell",
    "masked_mean",
    "masked_softmax",
    "matmul",
    "relative_error",
    "sigmoid",
    "softmax",
    "stack",
    "tanh",
    "unstack",
    "weighted_sum",
]
