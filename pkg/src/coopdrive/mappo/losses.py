"""Clipped PPO objectives.

Per-sample helpers work on plain arrays (for fixtures and assertions); the
``*_loss`` functions build differentiable graphs.
"""
from __future__ import annotations

import numpy as np

from ..gradkit import NumericError, Tensor, ops


def ratio(log_prob_new, log_prob_old):
    """pi_new / pi_old evaluated as exp(log difference)."""
    if isinstance(log_prob_new, Tensor):
        return ops.exp(ops.sub(log_prob_new, Tensor(np.asarray(log_prob_old, dtype=log_prob_new.dtype))))
    return np.exp(np.asarray(log_prob_new, dtype=np.float64) - np.asarray(log_prob_old, dtype=np.float64))


def surrogate_terms(r, adv, eps: float) -> np.ndarray:
    r, adv = np.asarray(r, dtype=np.float64), np.asarray(adv, dtype=np.float64)
    return np.minimum(r * adv, np.clip(r, 1.0 - eps, 1.0 + eps) * adv)


def value_loss_terms(v, v_old, ret, eps: float) -> np.ndarray:
    v, v_old, ret = (np.asarray(x, dtype=np.float64) for x in (v, v_old, ret))
    clipped = np.clip(v, v_old - eps, v_old + eps)
    return np.maximum((v - ret) ** 2, (clipped - ret) ** 2)


def _check_ratio(r: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(r))
    if bad.size:
        raise NumericError(f"non-finite probability ratio at sample {int(bad[0])}")


def actor_loss(log_prob_new: Tensor, log_prob_old, advantages, entropy: Tensor, eps: float, sigma: float):
    """Negated clipped surrogate plus entropy bonus; returns (loss, stats)."""
    adv = np.asarray(advantages, dtype=log_prob_new.dtype)
    r = ratio(log_prob_new, log_prob_old)
    _check_ratio(r.data)
    unclipped = ops.mul(r, Tensor(adv))
    clipped = ops.mul(ops.clip(r, 1.0 - eps, 1.0 + eps), Tensor(adv))
    surr = ops.mean(ops.minimum(unclipped, clipped))
    ent = ops.mean(entropy)
    objective = ops.add(surr, ops.mul(ent, float(sigma)))
    stats = {"surrogate": float(surr.data), "entropy": float(ent.data),
             "clip_fraction": float(np.mean(np.abs(r.data - 1.0) > eps))}
    return ops.mul(objective, -1.0), stats


def critic_loss(values: Tensor, values_old, returns, eps: float) -> Tensor:
    """Mean of the larger of the unclipped and clipped squared value errors."""
    dt = values.dtype
    v_old = np.asarray(values_old, dtype=dt)
    ret = Tensor(np.asarray(returns, dtype=dt))
    clipped = ops.clip(values, v_old - eps, v_old + eps)
    a = ops.square(ops.sub(values, ret))
    b = ops.square(ops.sub(clipped, ret))
    return ops.mean(ops.maximum(a, b))
