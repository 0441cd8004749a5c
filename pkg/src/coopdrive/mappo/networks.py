"""Actor, critic and the shared feature encoder, plus checkpoint I/O."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import comms as C
from ..baselines.observation import ObservationSchema, parse_variant
from ..gradkit import Conv2d, Linear, Module, Tensor, checkpoint, ops
from ..gradkit.checkpoint import CheckpointError
from ..world import N_ACTIONS

SCHEMA_VERSION = 1


class Actor(Module):
    """h_s -> two convolutions -> flatten, joined with the metadata vector -> 128 -> 64 -> logits."""

    def __init__(self, feature_extents, meta_dim: int, rng: np.random.Generator, hidden: int = 8):
        c, h, w = feature_extents
        self.conv1 = Conv2d(c, hidden, 3, rng, stride=2, padding=1)
        self.conv2 = Conv2d(hidden, hidden, 3, rng, stride=2, padding=1)
        oh, ow = self.conv2.output_shape(*self.conv1.output_shape(h, w))
        self.flat = hidden * oh * ow
        self.fc1 = Linear(self.flat + meta_dim, 128, rng)
        self.fc2 = Linear(128, 64, rng)
        self.out = Linear(64, N_ACTIONS, rng)
        self.out.weight.data *= 0.01  # near-uniform initial policy

    def __call__(self, features: Tensor, meta) -> Tensor:
        x = ops.relu(self.conv2(ops.relu(self.conv1(features))))
        x = ops.reshape(x, (x.shape[0], self.flat))
        x = ops.concat([x, Tensor(np.asarray(meta, dtype=np.float32))], axis=1)
        x = ops.tanh(self.fc1(x))
        x = ops.tanh(self.fc2(x))
        return self.out(x)


class Critic(Module):
    """Centralised state joined with the flattened (detached) h_s -> 128 -> 64 -> value."""

    def __init__(self, state_dim: int, feature_dim: int, rng: np.random.Generator):
        self.feature_dim = feature_dim
        self.fc1 = Linear(state_dim + feature_dim, 128, rng)
        self.fc2 = Linear(128, 64, rng)
        self.out = Linear(64, 1, rng)

    def __call__(self, features, state) -> Tensor:
        f = np.asarray(features, dtype=np.float32).reshape(len(state), -1)
        x = Tensor(np.concatenate([np.asarray(state, dtype=np.float32), f], axis=1))
        x = ops.tanh(self.fc1(x))
        x = ops.tanh(self.fc2(x))
        return ops.reshape(self.out(x), (len(state),))


def encoder_config(scale: str) -> C.EncoderConfig:
    return C.EncoderConfig.paper_scale() if scale == "paper" else C.EncoderConfig()


class ActorCritic:
    """Everything a learned policy needs: encoder, actor, critic and observation layout."""

    def __init__(self, schema: ObservationSchema, rng: np.random.Generator, aggregation: str = "max",
                 feature_scale: str = "desk"):
        self.schema = schema
        self.aggregation = aggregation
        self.feature_scale = feature_scale
        self.encoder = C.FeatureEncoder(encoder_config(feature_scale), rng)
        extents = self.encoder.config.output_extents()
        self.actor = Actor(extents, schema.meta_dim, rng)
        self.critic = Critic(schema.state_dim, int(np.prod(extents)), rng)
        self.value_norm = None  # set by the trainer

    @property
    def variant(self):
        return self.schema.variant

    def actor_parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.actor.parameters()

    def critic_parameters(self) -> list[Tensor]:
        return self.critic.parameters()

    # ------------------------------------------------------------ forward
    def encode(self, grids) -> Tensor:
        return C.encode_features(np.asarray(grids, dtype=np.float32), self.encoder)

    def fuse(self, ego: Tensor, neighbours, counts) -> Tensor:
        if neighbours is None:
            return ego
        return C.combine(ego, neighbours, counts, self.aggregation)

    def logits(self, features, meta) -> Tensor:
        f = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=np.float32))
        return self.actor(f, meta)

    def values(self, features, state) -> Tensor:
        return self.critic(features.data if isinstance(features, Tensor) else features, state)

    # ----------------------------------------------------------- persistence
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, mod in (("encoder", self.encoder), ("actor", self.actor), ("critic", self.critic)):
            out.update({f"{prefix}.{k}": v for k, v in mod.state_dict().items()})
        return out

    def load_state_dict(self, state: dict) -> None:
        for prefix, mod in (("encoder", self.encoder), ("actor", self.actor), ("critic", self.critic)):
            sub = {k[len(prefix) + 1:]: v for k, v in state.items() if k.startswith(prefix + ".")}
            mod.load_state_dict(sub)

    def describe(self) -> dict:
        s = self.schema
        return {"schema_version": SCHEMA_VERSION, "variant": s.variant.value, "n_cavs": s.n_cavs,
                "n_vehicles": s.n_vehicles, "feature_extents": list(s.feature_extents),
                "aggregation": self.aggregation, "feature_scale": self.feature_scale}


def save_policy(policy: ActorCritic, path, extra: dict | None = None) -> Path:
    """Write ``<path>.ovml`` (tensors) and ``<path>.json`` (layout description)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(path.with_suffix(".ovml"), policy.state_dict())
    meta = dict(policy.describe(), **(extra or {}))
    if policy.value_norm is not None:
        # float64 statistics live in the JSON sidecar; the tensor file is float32 only
        meta["value_norm"] = [float(x) for x in policy.value_norm.state()]
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path.with_suffix(".ovml")


def load_policy(path) -> ActorCritic:
    """Rebuild a policy from a checkpoint, a checkpoint directory or its ``latest.json`` manifest."""
    from .gae import ValueNorm

    path = Path(path)
    if path.is_dir():
        path = path / "latest.json"
    if path.name == "latest.json":
        manifest = json.loads(path.read_text())
        path = path.parent / manifest["checkpoint"]
    desc_path = path.with_suffix(".json")
    if not desc_path.exists():
        raise CheckpointError(f"{desc_path}: missing layout description")
    desc = json.loads(desc_path.read_text())
    if desc.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: schema version {desc.get('schema_version')} != {SCHEMA_VERSION}")
    schema = ObservationSchema(parse_variant(desc["variant"]), desc["n_cavs"], desc["n_vehicles"],
                               tuple(desc["feature_extents"]))
    policy = ActorCritic(schema, np.random.default_rng(0), desc["aggregation"], desc["feature_scale"])
    policy.value_norm = ValueNorm()
    if "value_norm" in desc:
        policy.value_norm.load(desc["value_norm"])
    try:
        policy.load_state_dict(checkpoint.load(path.with_suffix(".ovml")))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: checkpoint does not match its layout: {exc}") from exc
    return policy
