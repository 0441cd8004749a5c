"""Lockstep episode runner shared by training and evaluation.

Several independent worlds advance together so the encoder and policy see one
batch per step. Within a step the exchange is a barrier: all CAVs sense and
encode, then all messages are delivered, then all CAVs act.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import seeding
from ..baselines.observation import ObservationVariant, SensingConfig, assemble, sense
from ..gradkit import distributions, no_grad
from ..world import World
from .gae import RolloutBuffer, Trajectory


@dataclass
class EpisodeResult:
    index: int
    seed: int
    total_reward: float = 0.0
    steps: int = 0
    collision: bool = False
    success: bool = False
    timeout: bool = False
    speed_sum: float = 0.0
    speed_steps: int = 0
    entropy_sum: float = 0.0
    entropy_count: int = 0

    @property
    def outcome(self) -> str:
        return "collision" if self.collision else "success" if self.success else "timeout"

    @property
    def avg_speed(self) -> float:
        return self.speed_sum / self.speed_steps if self.speed_steps else 0.0

    @property
    def mean_entropy(self) -> float:
        return self.entropy_sum / self.entropy_count if self.entropy_count else 0.0


@dataclass
class _Slot:
    world: World
    result: EpisodeResult
    dropout_rng: np.random.Generator
    last: object = None
    trajs: dict = field(default_factory=dict)
    trace: list | None = None


def _episode_world(scenario, max_steps):
    if max_steps is not None and max_steps != scenario.max_steps:
        from dataclasses import replace
        scenario = replace(scenario, max_steps=max_steps)
    return World(scenario)


def run_episodes(policy, scenario, indices, root_seed: int, sensing: SensingConfig | None = None, *,
                 greedy: bool = False, action_rng: np.random.Generator | None = None,
                 buffer: RolloutBuffer | None = None, max_steps: int | None = None,
                 ledger=None, traces: dict | None = None,
                 streams: tuple[str, str] = ("env", "dropout")) -> list[EpisodeResult]:
    """Play the episodes ``indices`` side by side and return their results in index order.

    ``policy`` is either an :class:`~coopdrive.mappo.networks.ActorCritic` or an
    object with ``act(world) -> {cav_id: action}`` (rule-based controllers).
    With ``buffer`` every agent-step is stored for a PPO update. ``streams``
    names the seed namespaces for spawns and dropout.
    """
    sensing = sensing or SensingConfig()
    learned = hasattr(policy, "actor")
    variant = policy.variant if learned else None
    per_agent_reward = variant is ObservationVariant.Independent
    slots = []
    for idx in indices:
        seed = seeding.seed_for(root_seed, streams[0], idx)
        w = _episode_world(scenario, max_steps)
        s = _Slot(w, EpisodeResult(idx, seed), seeding.rng_for(root_seed, streams[1], idx))
        s.last = w.reset(seed)
        if traces is not None:
            s.trace = traces.setdefault(idx, [])
            s.trace.append((s.last, None))
        slots.append(s)

    while True:
        live = [s for s in slots if not s.world.done]
        if not live:
            break
        if learned:
            actions = _learned_actions(policy, live, sensing, greedy, action_rng, buffer is not None, ledger)
        else:
            actions = [(policy.act(s.world), None) for s in live]
        for s, (acts, extras) in zip(live, actions):
            res = s.world.step(acts)
            _record_step(s, res, acts, extras, per_agent_reward, buffer)

    if buffer is not None:
        for s in slots:
            for vid in sorted(s.trajs):
                buffer.add(s.trajs[vid])
    return [s.result for s in slots]


def _learned_actions(policy, live, sensing, greedy, rng, store, ledger):
    per_slot = []
    grids_all = []
    for s in live:
        scans, grids = sense(s.world, policy.variant, sensing, s.dropout_rng)
        per_slot.append(grids)
        grids_all.extend(grids[v] for v in sorted(grids))
    with no_grad():
        feats = policy.encode(np.stack(grids_all)).data
    bundles, k = [], 0
    for s, grids in zip(live, per_slot):
        ids = sorted(grids)
        fdict = {v: feats[k + i] for i, v in enumerate(ids)}
        k += len(ids)
        b = assemble(s.world, policy.schema, grids, fdict, sensing, ledger)
        bundles.append([b[v] for v in ids])
    flat = [b for group in bundles for b in group]
    h = np.stack([b.features for b in flat])
    meta = np.stack([b.meta for b in flat])
    with no_grad():
        logits = policy.logits(h, meta).data
        values = policy.values(h, np.stack([b.state for b in flat])).data if store else None
    lp_all = distributions.log_probs(logits)
    ent = -(np.exp(lp_all) * lp_all).sum(axis=1)
    if greedy:
        acts = np.argmax(logits, axis=1)
        lps = lp_all[np.arange(len(acts)), acts]
    else:
        acts, lps = distributions.sample_batch(logits, rng)
    if store and policy.value_norm is not None:
        values = policy.value_norm.denormalize(values)
    out, k = [], 0
    for group in bundles:
        acts_d, extras = {}, {}
        for b in group:
            acts_d[b.ego_id] = int(acts[k])
            extras[b.ego_id] = (b, float(lps[k]), None if values is None else float(values[k]), float(ent[k]))
            k += 1
        out.append((acts_d, extras))
    return out


def _record_step(s: _Slot, res, acts, extras, per_agent_reward, buffer):
    r = s.result
    r.steps += 1
    r.total_reward += res.shared_reward
    active = [v for v in s.world.state.cavs if v.active]
    if active:
        r.speed_sum += float(np.mean([v.speed for v in active]))
        r.speed_steps += 1
    if res.done:
        r.collision, r.success, r.timeout = res.collision, res.all_reached, res.timeout
    if s.trace is not None:
        s.trace.append((res, acts))
    if extras is None:
        return
    arrivals = set(res.info["arrivals"])
    for vid, (b, lp, value, ent) in extras.items():
        r.entropy_sum += ent
        r.entropy_count += 1
        if buffer is None:
            continue
        traj = s.trajs.setdefault(vid, Trajectory())
        traj.samples.append({
            "grid": b.grid, "meta": b.meta, "state": b.state, "action": acts[vid], "log_prob": lp,
            "value": value, "neighbours": b.neighbour_features, "count": b.n_neighbours,
        })
        traj.rewards.append(res.agent_rewards[vid] if per_agent_reward else res.shared_reward)
        traj.values.append(value)
        traj.dones.append(res.done or vid in arrivals)
