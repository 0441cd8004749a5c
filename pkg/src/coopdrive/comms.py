"""V2V feature messages: encoding, 8-bit codec, delivery, alignment, aggregation, bandwidth."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from . import gradkit as gk
from .gradkit import ops
from .gradkit.tensor import DimensionError, Tensor

HEADER = struct.Struct("<II3fffHHH")
PROTOCOL_BUDGETS = {"DSRC": 2.0, "C-V2X": 7.2}
PAPER_FEATURE_EXTENTS = (4, 128, 128)
DESK_FEATURE_EXTENTS = (4, 32, 32)
PAPER_COMPRESSION_RATIO = 39.0


# --------------------------------------------------------------------------- encoder
@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int = 2
    hidden: int = 8
    out_channels: int = 4
    kernel1: int = 4
    stride1: int = 4
    padding1: int = 0
    kernel2: int = 1  # 1x1 channel mixer keeps desk-scale training cheap
    stride2: int = 1
    padding2: int = 0
    grid_cells: int = 128

    @classmethod
    def paper_scale(cls) -> "EncoderConfig":
        return cls(kernel1=3, stride1=1, padding1=1, kernel2=3, padding2=1)

    def output_extents(self) -> tuple[int, int, int]:
        h = ops.conv_output_size(self.grid_cells, self.kernel1, self.stride1, self.padding1)
        h = ops.conv_output_size(h, self.kernel2, self.stride2, self.padding2)
        return (self.out_channels, h, h)


class FeatureEncoder(gk.Module):
    """Two convolutions with ReLU, shared by every CAV."""

    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.conv1 = gk.Conv2d(c.in_channels, c.hidden, c.kernel1, rng, c.stride1, c.padding1)
        self.conv2 = gk.Conv2d(c.hidden, c.out_channels, c.kernel2, rng, c.stride2, c.padding2)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.conv2(ops.relu(self.conv1(x))))


def preprocess_grid(cells: np.ndarray) -> np.ndarray:
    """Fixed input scaling: log-compressed point counts, intensity unchanged."""
    out = np.asarray(cells, dtype=np.float32).copy()
    out[..., 0, :, :] = np.log1p(out[..., 0, :, :]) * 0.25
    return out


def encode_features(grid, encoder: FeatureEncoder) -> Tensor:
    """Encode one BEV grid (C,H,W) or a stack (N,C,H,W) of preprocessed grids."""
    cells = grid.cells if hasattr(grid, "cells") else grid
    cfg = encoder.config
    if cells.shape[-3:] != (cfg.in_channels, cfg.grid_cells, cfg.grid_cells):
        raise DimensionError(f"encoder expects (..., {cfg.in_channels}, {cfg.grid_cells}, {cfg.grid_cells}), got {cells.shape}")
    x = preprocess_grid(cells) if hasattr(grid, "cells") else np.asarray(cells, dtype=np.float32)
    return encoder(Tensor(x))


# ----------------------------------------------------------------------------- codec
@dataclass
class QuantizedBlock:
    scale: float
    zero_point: float
    extents: tuple[int, int, int]
    data: np.ndarray  # uint8, C*H*W

    @property
    def nbytes(self) -> int:
        return int(self.data.size)


def compress(features) -> QuantizedBlock:
    """Affine 8-bit quantisation with per-message scale and zero point (the block minimum).

    A constant block is stored with ``scale == 0`` and decodes to the constant.
    """
    x = np.asarray(features.data if isinstance(features, Tensor) else features, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError(f"compress expects (C,H,W), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise gk.NumericError("cannot compress non-finite features")
    lo, hi = float(x.min()), float(x.max())
    zp = float(np.float32(lo))
    if hi == lo:
        return QuantizedBlock(0.0, zp, x.shape, np.zeros(x.size, dtype=np.uint8))
    scale = float(np.float32((hi - lo) / 255.0))
    q = np.clip(np.rint((x - zp) / scale), 0, 255).astype(np.uint8)
    return QuantizedBlock(scale, zp, x.shape, q.reshape(-1))


def decompress(block: QuantizedBlock, dtype=np.float64) -> np.ndarray:
    q = block.data.astype(np.float64).reshape(block.extents)
    return (q * block.scale + block.zero_point).astype(dtype)


# --------------------------------------------------------------------------- messages
@dataclass
class FeatureMessage:
    sender_id: int
    sender_pose: tuple[float, float, float]
    timestamp: int
    payload: QuantizedBlock

    @property
    def nbytes(self) -> int:
        return HEADER.size + self.payload.nbytes


def make_message(sender_id: int, pose, step: int, features) -> FeatureMessage:
    pose32 = tuple(float(np.float32(v)) for v in pose)
    return FeatureMessage(int(sender_id), pose32, int(step), compress(features))


def serialize(msg: FeatureMessage) -> bytes:
    c, h, w = msg.payload.extents
    head = HEADER.pack(msg.sender_id, msg.timestamp, *msg.sender_pose, msg.payload.scale,
                       msg.payload.zero_point, c, h, w)
    return head + msg.payload.data.tobytes()


def deserialize(blob: bytes) -> FeatureMessage:
    sid, step, x, y, hd, scale, zp, c, h, w = HEADER.unpack_from(blob, 0)
    n = c * h * w
    if len(blob) != HEADER.size + n:
        raise ValueError(f"message length {len(blob)} != header {HEADER.size} + payload {n}")
    data = np.frombuffer(blob, dtype=np.uint8, offset=HEADER.size).copy()
    return FeatureMessage(sid, (x, y, hd), step, QuantizedBlock(scale, zp, (c, h, w), data))


# --------------------------------------------------------------------------- delivery
@dataclass
class ChannelModel:
    comm_range: float = 70.0
    fps: float = 20.0
    protocol_budgets: dict = field(default_factory=lambda: dict(PROTOCOL_BUDGETS))

    def __post_init__(self):
        if self.comm_range < 0:
            raise ValueError("comm_range must be non-negative")


def deliver(messages: list[FeatureMessage], receiver_id: int, world, channel: ChannelModel) -> list[FeatureMessage]:
    """Messages from other active CAVs within ``comm_range`` of the receiver, order kept."""
    rx = world.vehicle(receiver_id)
    out = []
    for m in messages:
        if m.sender_id == receiver_id:
            continue
        sender = world.vehicle(m.sender_id)
        if not (sender.is_cav and sender.active):
            continue
        if np.hypot(sender.x - rx.x, sender.y - rx.y) <= channel.comm_range:
            out.append(m)
    return out


def cell_centres(cells: int, extent: float) -> np.ndarray:
    res = 2.0 * extent / cells
    return (np.arange(cells) + 0.5) * res - extent


def align_to_receiver(msg: FeatureMessage, receiver_pose, extent: float = 50.0) -> np.ndarray:
    """Resample the sender's feature grid into the receiver frame (nearest cell, zeros outside)."""
    feat = decompress(msg.payload, dtype=np.float32)
    c, h, w = feat.shape
    if tuple(map(float, receiver_pose)) == tuple(map(float, msg.sender_pose)):
        return feat
    centres = cell_centres(h, extent)
    xs, ys = np.meshgrid(centres, cell_centres(w, extent), indexing="ij")
    # receiver-frame cell centres -> world -> sender frame
    rx, ry, rh = receiver_pose
    sx, sy, sh = msg.sender_pose
    wx = np.cos(rh) * xs - np.sin(rh) * ys + rx - sx
    wy = np.sin(rh) * xs + np.cos(rh) * ys + ry - sy
    px = np.cos(sh) * wx + np.sin(sh) * wy
    py = -np.sin(sh) * wx + np.cos(sh) * wy
    res = 2.0 * extent / h
    ix = np.floor((px + extent) / res).astype(np.int64)
    iy = np.floor((py + extent) / (2.0 * extent / w)).astype(np.int64)
    ok = (ix >= 0) & (ix < h) & (iy >= 0) & (iy < w)
    out = np.zeros_like(feat)
    out[:, ok] = feat[:, ix[ok], iy[ok]]
    return out


# -------------------------------------------------------------------------- aggregate
AGGREGATORS = ("max", "mean", "sum")


@dataclass
class AggregatedFeatures:
    tensor: Tensor
    contributing_senders: list[int]


def reduce_neighbours(aligned: list[np.ndarray], shape, mode: str = "max") -> tuple[np.ndarray, int]:
    """Fold neighbour grids into one array plus a count.

    ``max`` gives the elementwise max (``-inf`` when there are no neighbours, so the
    later merge with the ego grid is exact); ``mean`` and ``sum`` give the sum.
    """
    if mode not in AGGREGATORS:
        raise ValueError(f"unknown aggregation {mode!r}")
    for a in aligned:
        if a.shape != tuple(shape):
            raise DimensionError(f"aggregate: neighbour shape {a.shape} != ego shape {tuple(shape)}")
    if not aligned:
        fill = -np.inf if mode == "max" else 0.0
        return np.full(shape, fill, dtype=np.float32), 0
    stack = np.stack(aligned)
    return (stack.max(axis=0) if mode == "max" else stack.sum(axis=0)), len(aligned)


def combine(ego: Tensor, reduced: np.ndarray, count, mode: str = "max") -> Tensor:
    """Merge ego features with pre-reduced neighbour features; gradients reach ``ego`` only.

    Works on one grid or a batch, in which case ``count`` is an (N,) array.
    """
    other = Tensor(np.asarray(reduced, dtype=ego.dtype))
    if mode == "max":
        return ops.maximum(ego, other)
    summed = ops.add(ego, other)
    if mode == "sum":
        return summed
    k = np.asarray(count, dtype=np.float64) + 1.0
    inv = np.broadcast_to((1.0 / k).reshape(k.shape + (1,) * (ego.ndim - k.ndim)), ego.shape)
    return ops.mul(summed, Tensor(inv.astype(ego.dtype)))


def aggregate(ego_features, aligned: list, mode: str = "max", senders=None, ego_id: int | None = None) -> AggregatedFeatures:
    """Fuse ego features with aligned neighbour features (max, mean or sum)."""
    ego = ego_features if isinstance(ego_features, Tensor) else Tensor(np.asarray(ego_features))
    arrays = [np.asarray(a.data if isinstance(a, Tensor) else a) for a in aligned]
    reduced, k = reduce_neighbours(arrays, ego.shape, mode)
    out = combine(ego, reduced, k, mode)
    ids = ([] if ego_id is None else [ego_id]) + list(senders or [])
    return AggregatedFeatures(out, ids)


# -------------------------------------------------------------------------- bandwidth
def bandwidth_mbps(payload_bytes: float, fps: float = 20.0) -> float:
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be non-negative")
    return payload_bytes * 8.0 * fps / 1e6


def budget_check(mbps: float, protocol: str, channel: ChannelModel | None = None) -> bool:
    budgets = (channel or ChannelModel()).protocol_budgets
    if protocol not in budgets:
        raise KeyError(f"unknown protocol {protocol!r}; known: {sorted(budgets)}")
    return mbps <= budgets[protocol]


def feature_block_bytes(extents, bytes_per_value: int = 4) -> int:
    c, h, w = extents
    return c * h * w * bytes_per_value


def paper_scale_mbps(extents=PAPER_FEATURE_EXTENTS, fps: float = 20.0, ratio: float = PAPER_COMPRESSION_RATIO) -> float:
    """f32 feature block divided by an overall compression ratio, at ``fps``."""
    return bandwidth_mbps(feature_block_bytes(extents) / ratio, fps)


def codec_message_bytes(extents) -> int:
    """On-wire size of one message from this codec: header + one byte per value."""
    c, h, w = extents
    return HEADER.size + c * h * w


def bandwidth_report(channel: ChannelModel | None = None) -> list[dict]:
    """Rows describing every accounting preset, with per-protocol pass/fail."""
    channel = channel or ChannelModel()
    rows = []

    def row(name, nbytes, note):
        mbps = bandwidth_mbps(nbytes, channel.fps)
        r = {"preset": name, "bytes_per_frame": nbytes, "fps": channel.fps, "mbps": mbps, "note": note}
        for proto in channel.protocol_budgets:
            r[proto] = budget_check(mbps, proto, channel)
        rows.append(r)

    raw = feature_block_bytes(PAPER_FEATURE_EXTENTS)
    row("paper-scale", raw / PAPER_COMPRESSION_RATIO,
        f"f32 {PAPER_FEATURE_EXTENTS} / ratio {PAPER_COMPRESSION_RATIO}")
    row("paper-scale-8bit-codec", codec_message_bytes(PAPER_FEATURE_EXTENTS),
        f"8-bit codec on {PAPER_FEATURE_EXTENTS}, ratio {raw / codec_message_bytes(PAPER_FEATURE_EXTENTS):.2f}")
    row("desk-scale", codec_message_bytes(DESK_FEATURE_EXTENTS),
        f"8-bit codec on {DESK_FEATURE_EXTENTS}, ratio vs paper f32 block {raw / codec_message_bytes(DESK_FEATURE_EXTENTS):.2f}")
    return rows


class BandwidthLedger:
    """Per-message accounting rows: step, sender, bytes, mbps, budget_pass."""

    FIELDS = ("step", "sender", "bytes", "mbps", "budget_pass")

    def __init__(self, channel: ChannelModel | None = None, protocol: str = "DSRC"):
        self.channel = channel or ChannelModel()
        self.protocol = protocol
        self.rows: list[dict] = []

    def record(self, msg: FeatureMessage) -> None:
        mbps = bandwidth_mbps(msg.nbytes, self.channel.fps)
        self.rows.append({"step": msg.timestamp, "sender": msg.sender_id, "bytes": msg.nbytes,
                          "mbps": f"{mbps:.6f}", "budget_pass": budget_check(mbps, self.protocol, self.channel)})

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=self.FIELDS)
            wr.writeheader()
            wr.writerows(self.rows)


def check_desk_budget(extents=DESK_FEATURE_EXTENTS, channel: ChannelModel | None = None, protocol: str = "DSRC") -> float:
    """Raise if one message per frame from this codec would exceed the protocol budget."""
    channel = channel or ChannelModel()
    mbps = bandwidth_mbps(codec_message_bytes(extents), channel.fps)
    if not budget_check(mbps, protocol, channel):
        raise ValueError(f"feature extents {tuple(extents)} need {mbps:.3f} Mbps > {protocol} budget")
    return mbps
