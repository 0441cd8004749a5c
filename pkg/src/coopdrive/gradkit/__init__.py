"""Minimal numpy tensor core with reverse-mode autodiff."""
from . import checkpoint, ops
from .distributions import categorical_sample, entropy, log_probs, sample_batch
from .nn import Conv2d, Linear, Module, glorot_uniform
from .ops import conv2d
from .optim import OptimizerState, adam_step, zero_grad
from .tensor import (
    ComputationTape,
    ContractError,
    DimensionError,
    NumericError,
    Tensor,
    backward,
    current_tape,
    no_grad,
)

__all__ = [
    "ComputationTape", "ContractError", "Conv2d", "DimensionError", "Linear", "Module",
    "NumericError", "OptimizerState", "Tensor", "adam_step", "backward", "categorical_sample",
    "checkpoint", "conv2d", "current_tape", "entropy", "glorot_uniform", "log_probs", "no_grad",
    "ops", "sample_batch", "zero_grad",
]
