"""Training hyper-parameters."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..gradkit import ContractError


@dataclass
class TrainConfig:
    """PPO settings. ``batch_size`` counts episodes per update; every active
    agent-step of those episodes becomes one buffer sample."""

    clip_epsilon: float = 0.2
    entropy_coef: float = 0.01
    gamma: float = 0.99
    gae_lambda: float = 0.95
    batch_size: int = 8
    minibatches: int = 4
    epochs: int = 4
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    episodes: int = 2000
    max_steps: int | None = None  # None: use the scenario's limit
    rollout_workers: int = 8
    max_grad_norm: float | None = 0.5
    value_norm: bool = True
    variant: str = "Collaborative"
    aggregation: str = "max"
    feature_scale: str = "desk"
    save_every: int = 25  # updates between checkpoints
    noop_prior: float | None = None  # initial NoOp probability; None starts uniform
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(ok, msg):
            if not ok:
                raise ContractError(msg)

        need(0.0 < self.clip_epsilon < 1.0, f"clip_epsilon must lie in (0, 1), got {self.clip_epsilon}")
        need(self.entropy_coef >= 0.0, f"entropy_coef must be >= 0, got {self.entropy_coef}")
        need(0.0 <= self.gamma <= 1.0, f"gamma must lie in [0, 1], got {self.gamma}")
        need(0.0 <= self.gae_lambda <= 1.0, f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        need(self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}")
        need(self.minibatches >= 1, f"minibatches must be >= 1, got {self.minibatches}")
        need(self.batch_size % self.minibatches == 0,
             f"batch_size {self.batch_size} must be divisible by minibatches {self.minibatches}")
        need(self.epochs >= 1, f"epochs must be >= 1, got {self.epochs}")
        need(self.actor_lr >= 0 and self.critic_lr >= 0, "learning rates must be >= 0")
        need(self.episodes >= 1, f"episodes must be >= 1, got {self.episodes}")
        need(self.rollout_workers >= 1, f"rollout_workers must be >= 1, got {self.rollout_workers}")
        need(self.max_steps is None or self.max_steps >= 1, f"max_steps must be >= 1, got {self.max_steps}")
        need(self.aggregation in ("max", "mean", "sum"), f"aggregation must be max, mean or sum, got {self.aggregation!r}")
        need(self.feature_scale in ("desk", "paper"), f"feature_scale must be desk or paper, got {self.feature_scale!r}")
        need(self.save_every >= 1, f"save_every must be >= 1, got {self.save_every}")
        need(self.noop_prior is None or 0.0 < self.noop_prior < 1.0,
             f"noop_prior must lie in (0, 1), got {self.noop_prior}")

    @classmethod
    def from_dict(cls, doc: dict, path: str = "train") -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ContractError(f"{path}: unknown keys {unknown}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)
