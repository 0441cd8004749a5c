"""Advantage estimation, value normalisation and the rollout buffer."""
from __future__ import annotations

import numpy as np

from ..gradkit import ContractError


def compute_gae(rewards, values, dones, bootstrap_value: float, gamma: float, lam: float):
    """Generalised advantage estimates and returns-to-go for one trajectory.

    ``values[t]`` is V(s_t); ``bootstrap_value`` is V of the state after the
    last step (ignored when that step is terminal).
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=np.float64)
    if not (len(r) == len(v) == len(d)):
        raise ContractError(f"length mismatch: rewards {len(r)}, values {len(v)}, dones {len(d)}")
    adv = np.zeros_like(r)
    nxt_v, nxt_a = float(bootstrap_value), 0.0
    for t in range(len(r) - 1, -1, -1):
        live = 1.0 - d[t]
        delta = r[t] + gamma * nxt_v * live - v[t]
        nxt_a = delta + gamma * lam * live * nxt_a
        adv[t] = nxt_a
        nxt_v = v[t]
    return adv, adv + v


class ValueNorm:
    """Running mean and variance of value targets (exact, merged batch-wise)."""

    def __init__(self, eps: float = 1e-5):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.eps = eps

    def update(self, x) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size == 0:
            return
        n, mean = x.size, float(x.mean())
        m2 = float(((x - mean) ** 2).sum())
        total = self.count + n
        delta = mean - self.mean
        self.mean += delta * n / total
        self.m2 += m2 + delta * delta * self.count * n / total
        self.count = total

    @property
    def std(self) -> float:
        var = self.m2 / self.count if self.count else 1.0
        return float(np.sqrt(max(var, self.eps)))

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def state(self) -> np.ndarray:
        return np.array([self.count, self.mean, self.m2], dtype=np.float64)

    def load(self, arr) -> None:
        self.count, self.mean, self.m2 = int(arr[0]), float(arr[1]), float(arr[2])


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size < 2:
        return adv - adv.mean() if adv.size else adv
    return (adv - adv.mean()) / (adv.std() + 1e-8)


class Trajectory:
    """Per-agent sequence within one episode."""

    __slots__ = ("samples", "rewards", "values", "dones")

    def __init__(self):
        self.samples: list[dict] = []
        self.rewards: list[float] = []
        self.values: list[float] = []
        self.dones: list[bool] = []

    def __len__(self):
        return len(self.rewards)


class RolloutBuffer:
    """Flat store of agent-step samples; :meth:`finalize` adds advantages and returns."""

    ARRAY_KEYS = ("grid", "meta", "state", "action", "log_prob", "value")

    def __init__(self, gamma: float, lam: float):
        self.gamma, self.lam = gamma, lam
        self.trajectories: list[Trajectory] = []
        self.data: dict[str, np.ndarray] = {}

    def add(self, traj: Trajectory) -> None:
        if len(traj):
            self.trajectories.append(traj)

    def __len__(self):
        return sum(len(t) for t in self.trajectories)

    def finalize(self, normalize: bool = True) -> dict:
        if not self.trajectories:
            raise ContractError("finalize() on an empty buffer")
        adv, ret = [], []
        for t in self.trajectories:
            a, r = compute_gae(t.rewards, t.values, t.dones, 0.0, self.gamma, self.lam)
            adv.append(a)
            ret.append(r)
        samples = [s for t in self.trajectories for s in t.samples]
        out = {k: np.stack([s[k] for s in samples]) for k in self.ARRAY_KEYS}
        if samples[0].get("neighbours") is not None:
            out["neighbours"] = np.stack([s["neighbours"] for s in samples])
            out["count"] = np.array([s["count"] for s in samples])
        out["reward"] = np.concatenate([np.asarray(t.rewards, dtype=np.float64) for t in self.trajectories])
        out["done"] = np.concatenate([np.asarray(t.dones, dtype=bool) for t in self.trajectories])
        out["advantage_raw"] = np.concatenate(adv)
        out["advantage"] = normalize_advantages(out["advantage_raw"]) if normalize else out["advantage_raw"]
        out["return"] = np.concatenate(ret)
        self.data = out
        return out
