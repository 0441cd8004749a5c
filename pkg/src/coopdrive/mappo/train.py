"""Collect -> GAE -> normalise -> epochs x minibatch Adam updates (actor, then critic)."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import gradkit as gk
from .. import seeding
from ..baselines.observation import ObservationSchema, SensingConfig
from ..gradkit import NumericError, ops
from ..world import N_ACTIONS, Action
from .alloc import tune_allocator
from .config import TrainConfig
from .gae import RolloutBuffer, ValueNorm
from .losses import actor_loss, critic_loss
from .networks import ActorCritic, encoder_config, save_policy
from .rollout import EpisodeResult, run_episodes

log = logging.getLogger(__name__)

CURVE_FIELDS = ("episode", "mean_shared_reward", "mean_entropy", "actor_loss", "critic_loss", "collision_flag")


class TrainingAborted(RuntimeError):
    """Raised when a loss turns non-finite; the last good checkpoint stays on disk."""

    def __init__(self, msg, result):
        super().__init__(msg)
        self.result = result


@dataclass
class TrainResult:
    policy: ActorCritic
    rows: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    wall_time: float = 0.0
    updates: int = 0


def fmt(x) -> str:
    return f"{x:.10g}" if isinstance(x, float) else str(x)


def make_policy(config: TrainConfig, scenario) -> ActorCritic:
    extents = encoder_config(config.feature_scale).output_extents()
    schema = ObservationSchema.for_scenario(scenario, config.variant, extents)
    policy = ActorCritic(schema, seeding.rng_for(config.seed, "policy"), config.aggregation, config.feature_scale)
    policy.value_norm = ValueNorm() if config.value_norm else None
    if config.noop_prior is not None:
        # equal odds for the four speed changes, NoOp holds the rest of the mass
        p = config.noop_prior
        policy.actor.out.bias.data[int(Action.NoOp)] = math.log(p * (N_ACTIONS - 1) / (1.0 - p))
    return policy


def collect_rollout(policy: ActorCritic, scenario, indices, config: TrainConfig, sensing: SensingConfig,
                    action_rng: np.random.Generator) -> tuple[RolloutBuffer, list[EpisodeResult]]:
    """Run ``indices`` episodes with the frozen policy, ``rollout_workers`` at a time."""
    buf = RolloutBuffer(config.gamma, config.gae_lambda)
    results = []
    w = config.rollout_workers
    for k in range(0, len(indices), w):
        results += run_episodes(policy, scenario, indices[k:k + w], config.seed, sensing, action_rng=action_rng,
                                buffer=buf, max_steps=config.max_steps)
    return buf, results


def ppo_update(policy: ActorCritic, data: dict, config: TrainConfig, opt_actor, opt_critic,
               rng: np.random.Generator) -> dict:
    """Epochs x minibatches of clipped updates; returns mean losses over all minibatches."""
    n = len(data["action"])
    ret, v_old = data["return"], data["value"]
    if policy.value_norm is not None:
        policy.value_norm.update(ret)
        ret, v_old = policy.value_norm.normalize(ret), policy.value_norm.normalize(v_old)
    neighbours = data.get("neighbours")
    eps, sigma = config.clip_epsilon, config.entropy_coef
    a_params, c_params = policy.actor_parameters(), policy.critic_parameters()
    stats = {"actor_loss": [], "critic_loss": [], "entropy": [], "clip_fraction": []}
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for mb in np.array_split(perm, config.minibatches):
            if len(mb) == 0:
                continue
            ego = policy.encode(data["grid"][mb])
            h = policy.fuse(ego, None if neighbours is None else neighbours[mb],
                            None if neighbours is None else data["count"][mb])
            logits = policy.logits(h, data["meta"][mb])
            lp = ops.pick(ops.log_softmax(logits), data["action"][mb])
            loss_a, st = actor_loss(lp, data["log_prob"][mb], data["advantage"][mb], gk.entropy(logits), eps, sigma)
            if not math.isfinite(float(loss_a.data)):
                raise NumericError("actor loss is not finite")
            gk.backward(loss_a)
            gk.adam_step(a_params, opt_actor, config.max_grad_norm)

            v = policy.values(h.data, data["state"][mb])
            loss_c = critic_loss(v, v_old[mb], ret[mb], eps)
            if not math.isfinite(float(loss_c.data)):
                raise NumericError("critic loss is not finite")
            gk.backward(loss_c)
            gk.adam_step(c_params, opt_critic, config.max_grad_norm)
            stats["actor_loss"].append(float(loss_a.data))
            stats["critic_loss"].append(float(loss_c.data))
            stats["entropy"].append(st["entropy"])
            stats["clip_fraction"].append(st["clip_fraction"])
    return {k: float(np.mean(v)) for k, v in stats.items()}


class _Outputs:
    def __init__(self, out_dir):
        self.dir = Path(out_dir) if out_dir is not None else None
        if self.dir is not None:
            (self.dir / "checkpoints").mkdir(parents=True, exist_ok=True)
            with open(self.curve_path, "w", newline="") as fh:
                csv.writer(fh).writerow(CURVE_FIELDS)

    @property
    def curve_path(self):
        return self.dir / "learning_curve.csv"

    def append(self, rows):
        if self.dir is None:
            return
        with open(self.curve_path, "a", newline="") as fh:
            wr = csv.writer(fh)
            for r in rows:
                wr.writerow([fmt(r[k]) for k in CURVE_FIELDS])

    def checkpoint(self, policy, episodes_done, config):
        if self.dir is None:
            return None
        name = f"ckpt_{episodes_done:05d}"
        path = save_policy(policy, self.dir / "checkpoints" / name, {"episode": episodes_done, "seed": config.seed})
        manifest = {"checkpoint": path.name, "episode": episodes_done}
        (self.dir / "checkpoints" / "latest.json").write_text(json.dumps(manifest, sort_keys=True) + "\n")
        return path


def train(config: TrainConfig, scenario, out_dir=None, sensing: SensingConfig | None = None,
          policy: ActorCritic | None = None) -> TrainResult:
    """Train for ``config.episodes`` episodes; writes the curve and checkpoints under ``out_dir``."""
    tune_allocator()
    sensing = sensing or SensingConfig(aggregation=config.aggregation)
    policy = policy or make_policy(config, scenario)
    opt_a = gk.OptimizerState.for_params(policy.actor_parameters(), lr=config.actor_lr)
    opt_c = gk.OptimizerState.for_params(policy.critic_parameters(), lr=config.critic_lr)
    out = _Outputs(out_dir)
    result = TrainResult(policy)
    t0 = time.perf_counter()
    done, update = 0, 0
    while done < config.episodes:
        indices = list(range(done, min(done + config.batch_size, config.episodes)))
        buf, episodes = collect_rollout(policy, scenario, indices, config, sensing,
                                        seeding.rng_for(config.seed, "action", update))
        try:
            data = buf.finalize()
            stats = ppo_update(policy, data, config, opt_a, opt_c, seeding.rng_for(config.seed, "shuffle", update))
        except NumericError as exc:
            rows = [_row(e, math.nan, math.nan) for e in episodes]
            result.rows += rows
            out.append(rows)
            result.wall_time = time.perf_counter() - t0
            raise TrainingAborted(f"update {update} (episodes {indices[0]}-{indices[-1]}): {exc}", result) from exc
        rows = [_row(e, stats["actor_loss"], stats["critic_loss"]) for e in episodes]
        result.rows += rows
        out.append(rows)
        done += len(indices)
        update += 1
        if update % config.save_every == 0 or done >= config.episodes:
            path = out.checkpoint(policy, done, config)
            if path is not None:
                result.checkpoints.append(path)
        recent = result.rows[-50:]
        log.info("update %d episodes %d reward %.2f collisions %.0f%% entropy %.3f (%.0fs)", update, done,
                 np.mean([r["mean_shared_reward"] for r in recent]),
                 100 * np.mean([r["collision_flag"] for r in recent]), stats["entropy"], time.perf_counter() - t0)
    result.updates = update
    result.wall_time = time.perf_counter() - t0
    return result


def _row(e: EpisodeResult, a_loss: float, c_loss: float) -> dict:
    return {"episode": e.index, "mean_shared_reward": float(e.total_reward), "mean_entropy": float(e.mean_entropy),
            "actor_loss": float(a_loss), "critic_loss": float(c_loss), "collision_flag": int(e.collision)}
