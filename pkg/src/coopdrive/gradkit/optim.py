"""Adam optimizer with bias-corrected moments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "OptimizerState":
        m = [np.zeros(p.shape, dtype=np.float64) for p in params]
        v = [np.zeros(p.shape, dtype=np.float64) for p in params]
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps, m=m, v=v)


def adam_step(params: list[Tensor], state: OptimizerState, max_grad_norm: float | None = None) -> None:
    """Apply one Adam update in place; advances ``state.step`` by one.

    With ``max_grad_norm`` the gradients are rescaled jointly so their global
    L2 norm does not exceed it.
    """
    if len(params) != len(state.m):
        raise ContractError(f"optimizer state tracks {len(state.m)} params, got {len(params)}")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {i} ({p.name or p.shape}) has no gradient")
        if state.m[i].shape != p.shape:
            raise ContractError(f"parameter {i}: accumulator shape {state.m[i].shape} != {p.shape}")
    scale = 1.0
    if max_grad_norm is not None:
        norm = np.sqrt(np.sum([np.sum(np.square(p.grad, dtype=np.float64)) for p in params]))
        if norm > max_grad_norm:
            scale = max_grad_norm / (norm + 1e-12)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad.astype(np.float64) * scale
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)


def zero_grad(params: list[Tensor]) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)
