"""Per-CAV observation bundles for the four observation variants.

A step is built in three stages so that the feature encoder can run batched
across agents and environments:

1. :func:`sense` raycasts every active CAV, applies dropout and rasterises
   (jointly, for early fusion);
2. the caller encodes all ego grids in one pass;
3. :func:`assemble` exchanges feature messages (collaborative variants),
   aggregates them and builds the metadata and critic vectors.

:func:`build_observation` wraps the three stages for a single agent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .. import comms as C
from ..gradkit.tensor import Tensor, no_grad
from ..lidar import LidarConfig, apply_dropout, merge_scans, rasterize_bev, raycast_scan, transform_points


class ObservationVariant(str, Enum):
    Collaborative = "Collaborative"
    GroundTruth = "GroundTruth"
    EarlyFusion = "EarlyFusion"
    Independent = "Independent"

    @property
    def shares_features(self) -> bool:
        return self in (ObservationVariant.Collaborative, ObservationVariant.GroundTruth)

    @property
    def communicates(self) -> bool:
        return self is not ObservationVariant.Independent


def parse_variant(name) -> ObservationVariant:
    if isinstance(name, ObservationVariant):
        return name
    for v in ObservationVariant:
        if v.value.lower() == str(name).lower():
            return v
    raise ValueError(f"unknown observation variant {name!r}; choose from {[v.value for v in ObservationVariant]}")


EGO_META = 8
NEIGHBOUR_META = 8
TRUTH_META = 6
VEHICLE_STATE = 9
EARLY_FUSION_POINT_CAP = 200_000


@dataclass(frozen=True)
class ObservationSchema:
    """Fixed vector layouts for one scenario and variant."""

    variant: ObservationVariant
    n_cavs: int
    n_vehicles: int
    feature_extents: tuple = C.DESK_FEATURE_EXTENTS

    @classmethod
    def for_scenario(cls, scenario, variant, feature_extents=C.DESK_FEATURE_EXTENTS) -> "ObservationSchema":
        return cls(parse_variant(variant), scenario.n_cavs, scenario.n_vehicles, tuple(feature_extents))

    @property
    def meta_dim(self) -> int:
        d = EGO_META
        if self.variant.communicates:
            d += NEIGHBOUR_META * (self.n_cavs - 1)
        if self.variant is ObservationVariant.GroundTruth:
            d += TRUTH_META * (self.n_vehicles - 1)
        return d

    @property
    def state_dim(self) -> int:
        if self.variant is ObservationVariant.Independent:
            return self.meta_dim
        return VEHICLE_STATE * self.n_vehicles + self.n_cavs + self.meta_dim

    @property
    def feature_dim(self) -> int:
        return int(np.prod(self.feature_extents))


@dataclass
class ObservationBundle:
    ego_id: int
    variant: ObservationVariant
    grid: np.ndarray  # (2, H, W) encoder input, float16
    meta: np.ndarray  # metadata vector
    state: np.ndarray  # centralised critic vector (without features)
    neighbour_features: np.ndarray | None = None  # reduced neighbour block
    n_neighbours: int = 0
    senders: list = field(default_factory=list)
    features: np.ndarray | None = None  # aggregated h_s


# ---------------------------------------------------------------- vectors
def _local(ego, other):
    dx, dy = other.x - ego.x, other.y - ego.y
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    return c * dx + s * dy, -s * dx + c * dy


def ego_meta(world, vid: int) -> np.ndarray:
    m = world.metadata(vid)
    cfg = world.config
    length, width = m["dims"]
    return np.array([
        m["speed"] / cfg.max_speed, m["target_speed"] / cfg.max_speed, length / 5.0, width / 2.5,
        m["lane_id"] / 4.0, np.clip(m["to_goal"] / 100.0, -1.0, 2.0), np.clip(m["to_conflict"] / 50.0, -2.0, 2.0),
        world.state.step / cfg.max_steps,
    ], dtype=np.float32)


def in_range_cavs(world, ego_id: int, comm_range: float) -> list:
    ego = world.state.vehicle(ego_id)
    return [v for v in world.state.vehicles
            if v.is_cav and v.active and v.id != ego_id and math.hypot(v.x - ego.x, v.y - ego.y) <= comm_range]


def metadata_vector(world, ego_id: int, schema: ObservationSchema, comm_range: float) -> np.ndarray:
    """Ego terms, then in-range CAV slots, then (ground truth only) every other vehicle."""
    cfg = world.config
    ego = world.state.vehicle(ego_id)
    parts = [ego_meta(world, ego_id)]
    if schema.variant.communicates:
        slots = np.zeros((schema.n_cavs - 1, NEIGHBOUR_META), dtype=np.float32)
        for k, v in enumerate(in_range_cavs(world, ego_id, comm_range)):
            m = world.metadata(v.id)
            lx, ly = _local(ego, v)
            slots[k] = [1.0, lx / 50.0, ly / 50.0, v.speed / cfg.max_speed, v.length / 5.0, v.width / 2.5,
                        v.lane_id / 4.0, np.clip(m["to_conflict"] / 50.0, -2.0, 2.0)]
        parts.append(slots.reshape(-1))
    if schema.variant is ObservationVariant.GroundTruth:
        slots = np.zeros((schema.n_vehicles - 1, TRUTH_META), dtype=np.float32)
        others = [v for v in world.state.vehicles if v.id != ego_id]
        for k, v in enumerate(others):
            if not v.active:
                continue
            lx, ly = _local(ego, v)
            dh = v.heading - ego.heading
            slots[k] = [1.0, lx / 50.0, ly / 50.0, math.cos(dh), math.sin(dh), v.speed / cfg.max_speed]
        parts.append(slots.reshape(-1))
    return np.concatenate(parts).astype(np.float32)


def centralised_state(world, ego_id: int, schema: ObservationSchema, meta: np.ndarray) -> np.ndarray:
    """All vehicles' pose, speed, size and lane (occluded ones included), ego one-hot, ego metadata."""
    if schema.variant is ObservationVariant.Independent:
        return meta
    cfg = world.config
    rows = np.zeros((schema.n_vehicles, VEHICLE_STATE), dtype=np.float32)
    for k, v in enumerate(world.state.vehicles):
        if v.active:
            rows[k] = [1.0, v.x / 100.0, v.y / 100.0, math.cos(v.heading), math.sin(v.heading),
                       v.speed / cfg.max_speed, v.length / 5.0, v.width / 2.5, v.lane_id / 4.0]
    onehot = np.zeros(schema.n_cavs, dtype=np.float32)
    onehot[ego_id] = 1.0
    return np.concatenate([rows.reshape(-1), onehot, meta]).astype(np.float32)


# ----------------------------------------------------------------- stages
@dataclass
class SensingConfig:
    lidar: LidarConfig = field(default_factory=LidarConfig)
    channel: C.ChannelModel = field(default_factory=C.ChannelModel)
    dropout: float = 0.0
    aggregation: str = "max"
    point_cap: int = EARLY_FUSION_POINT_CAP


def encoder_input(grid) -> np.ndarray:
    """Preprocessed grid stored at half precision; rollouts and updates both see this value."""
    return C.preprocess_grid(grid.cells).astype(np.float16)


def sense(world, variant: ObservationVariant, sensing: SensingConfig, rng: np.random.Generator | None) -> tuple[dict, dict]:
    """Scans and encoder-input grids for every active CAV, in id order."""
    state = world.state
    scans = {}
    for v in state.cavs:
        if not v.active:
            continue
        scan = raycast_scan(state, v.id, config=sensing.lidar)
        if sensing.dropout > 0.0:
            scan = apply_dropout(scan, sensing.dropout, rng)
        scans[v.id] = scan
    grids = {}
    for vid, scan in scans.items():
        if variant is ObservationVariant.EarlyFusion:
            scan = fuse_scans(world, vid, scans, sensing)
        grids[vid] = encoder_input(rasterize_bev(scan, sensing.lidar.bev_cells, sensing.lidar.max_range))
    return scans, grids


def fuse_scans(world, ego_id: int, scans: dict, sensing: SensingConfig):
    """Ego scan united with in-range CAV scans re-expressed in the ego frame."""
    ego_pose = world.state.vehicle(ego_id).pose
    parts = [scans[ego_id]]
    for v in in_range_cavs(world, ego_id, sensing.channel.comm_range):
        if v.id in scans:
            parts.append(transform_points(scans[v.id], scans[v.id].sensor_pose, ego_pose))
    return merge_scans(parts, limit=sensing.point_cap)


def exchange(world, features: dict, sensing: SensingConfig, step: int, ledger: C.BandwidthLedger | None = None) -> dict:
    """Synchronous message round: every active CAV sends, then every CAV receives.

    Returns ``{receiver: (reduced_block, count, senders)}``.
    """
    msgs = []
    for vid in sorted(features):
        msg = C.make_message(vid, world.state.vehicle(vid).pose, step, features[vid])
        msgs.append(msg)
        if ledger is not None:
            ledger.record(msg)
    out = {}
    for vid in sorted(features):
        got = C.deliver(msgs, vid, world.state, sensing.channel)
        pose = world.state.vehicle(vid).pose
        aligned = [C.align_to_receiver(m, pose, sensing.lidar.max_range) for m in got]
        reduced, k = C.reduce_neighbours(aligned, features[vid].shape, sensing.aggregation)
        out[vid] = (reduced, k, [m.sender_id for m in got])
    return out


def assemble(world, schema: ObservationSchema, grids: dict, features: dict, sensing: SensingConfig,
             ledger: C.BandwidthLedger | None = None) -> dict:
    """Bundles for every active CAV given its encoded ego features."""
    variant = schema.variant
    shared = exchange(world, features, sensing, world.state.step, ledger) if variant.shares_features else {}
    bundles = {}
    for vid in sorted(grids):
        meta = metadata_vector(world, vid, schema, sensing.channel.comm_range)
        b = ObservationBundle(vid, variant, grids[vid], meta, centralised_state(world, vid, schema, meta))
        ego = np.asarray(features[vid], dtype=np.float32)
        if vid in shared:
            reduced, k, senders = shared[vid]
            b.neighbour_features, b.n_neighbours, b.senders = reduced, k, senders
            with no_grad():
                b.features = C.combine(Tensor(ego), reduced, k, sensing.aggregation).data
        else:
            b.features = ego
        bundles[vid] = b
    return bundles


def build_observation(variant, world, ego_id: int, messages: list, encoder: C.FeatureEncoder,
                      sensing: SensingConfig | None = None, rng: np.random.Generator | None = None) -> ObservationBundle:
    """One agent's observation given the messages currently on the air."""
    sensing = sensing or SensingConfig()
    schema = ObservationSchema.for_scenario(world.config, variant, encoder.config.output_extents())
    variant = schema.variant
    _, grids = sense(world, variant, sensing, rng)
    with no_grad():
        ego = C.encode_features(grids[ego_id].astype(np.float32), encoder).data
    meta = metadata_vector(world, ego_id, schema, sensing.channel.comm_range)
    b = ObservationBundle(ego_id, variant, grids[ego_id], meta, centralised_state(world, ego_id, schema, meta))
    b.features = ego
    if variant.shares_features:
        got = C.deliver(messages, ego_id, world.state, sensing.channel)
        pose = world.state.vehicle(ego_id).pose
        aligned = [C.align_to_receiver(m, pose, sensing.lidar.max_range) for m in got]
        reduced, k = C.reduce_neighbours(aligned, ego.shape, sensing.aggregation)
        b.neighbour_features, b.n_neighbours, b.senders = reduced, k, [m.sender_id for m in got]
        with no_grad():
            b.features = C.combine(Tensor(ego), reduced, k, sensing.aggregation).data
    return b


def early_fusion_bandwidth(scan_sizes, fps: float = 20.0) -> float:
    """Raw point sharing cost: points x 4 values x 32 bits x fps, in Mbps (summed over senders)."""
    total = int(np.sum(scan_sizes)) if np.ndim(scan_sizes) else int(scan_sizes)
    return C.bandwidth_mbps(total * 4 * 4, fps)
