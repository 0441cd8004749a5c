"""Categorical policy distribution helpers."""
from __future__ import annotations

import numpy as np

from . import ops
from .tensor import NumericError, Tensor, as_tensor


def _finite_logits(logits) -> np.ndarray:
    arr = np.asarray(logits.data if isinstance(logits, Tensor) else logits, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("need at least one logit")
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite logits")
    return arr


def log_probs(logits) -> np.ndarray:
    arr = _finite_logits(logits)
    shifted = arr - arr.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def categorical_sample(logits, rng: np.random.Generator) -> tuple[int, float]:
    """Draw one action from softmax(logits); return (index, its log-probability)."""
    lp = log_probs(logits).reshape(-1)
    cdf = np.cumsum(np.exp(lp))
    u = rng.random() * cdf[-1]
    a = int(min(np.searchsorted(cdf, u, side="right"), lp.size - 1))
    return a, float(lp[a])


def sample_batch(logits, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise sampling for an (N, K) logit array."""
    lp = log_probs(logits)
    cdf = np.cumsum(np.exp(lp), axis=-1)
    u = rng.random(lp.shape[0])[:, None] * cdf[:, -1:]
    a = np.minimum((cdf <= u).sum(axis=-1), lp.shape[-1] - 1)
    return a, lp[np.arange(lp.shape[0]), a]


def entropy(logits) -> Tensor:
    """Shannon entropy (nats) of softmax over the last axis.

    Accepts (K,) or (N, K); returns a scalar or an (N,) tensor. Differentiable
    when ``logits`` requires grad.
    """
    logits = as_tensor(logits)
    _finite_logits(logits)
    flat = logits if logits.ndim == 2 else ops.reshape(logits, (1, -1))
    lp = ops.log_softmax(flat, axis=-1)
    h = ops.mul(ops.sum(ops.mul(ops.exp(lp), lp), axis=-1), -1.0)
    return h if logits.ndim == 2 else ops.reshape(h, ())
