"""Synthetic LiDAR: 2-D raycasting with per-channel height synthesis.

Scans are 4-D points ``(x, y, z, intensity)`` in the sensor frame. Geometry is
planar, so every channel of one azimuth hits the same surface; ``z`` is
synthesised from the channel elevation at the hit range. Intensity decays
linearly with range.

Pose convention: a pose ``(x, y, heading)`` is the sensor expressed in the
world frame. Transforms compose sensor -> world -> receiver.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .world.geometry import ray_segment_distances


@dataclass(frozen=True)
class LidarConfig:
    channels: int = 32
    max_range: float = 50.0
    points_per_second: float = 1e6
    fps: float = 20.0
    elevation_deg: tuple[float, float] = (-15.0, 15.0)
    mount_height: float = 1.8
    bev_cells: int = 128

    @property
    def rays_per_step(self) -> int:
        return int(round(self.points_per_second / self.fps))

    @property
    def n_azimuth(self) -> int:
        return max(1, int(round(self.rays_per_step / self.channels)))

    @property
    def elevations(self) -> np.ndarray:
        lo, hi = np.deg2rad(self.elevation_deg)
        return np.linspace(lo, hi, self.channels)


@dataclass
class LidarScan:
    points: np.ndarray  # (N, 4): x, y, z, intensity
    sensor_pose: tuple
    channels: int = 32
    max_range: float = 50.0
    hit_ids: np.ndarray | None = field(default=None, repr=False)  # -1 occluder, else vehicle id

    def __len__(self):
        return len(self.points)

    @property
    def ranges(self) -> np.ndarray:
        return np.hypot(self.points[:, 0], self.points[:, 1])


@dataclass
class BevGrid:
    cells: np.ndarray  # (2, H, W): occupancy count, max intensity
    resolution: float
    extent: float  # grid covers [-extent, extent]^2 around the ego

    @property
    def shape(self):
        return self.cells.shape


def _empty_scan(pose, cfg: LidarConfig) -> LidarScan:
    return LidarScan(np.zeros((0, 4)), tuple(pose), cfg.channels, cfg.max_range, np.zeros(0, dtype=int))


def raycast_scan(world, ego_id: int, rng: np.random.Generator | None = None, config: LidarConfig | None = None) -> LidarScan:
    """Nearest-hit scan from the ego vehicle over every other vehicle and occluder.

    ``rng`` is accepted for interface symmetry; the sensor model is noise-free
    (dropout is applied separately by :func:`apply_dropout`).
    """
    cfg = config or LidarConfig()
    ego = world.vehicle(ego_id)
    pose = (ego.x, ego.y, ego.heading)
    segs, owners = world.obstacle_segments(exclude=ego_id)
    if len(segs) == 0:
        return _empty_scan(pose, cfg)
    rel = 2.0 * np.pi * np.arange(cfg.n_azimuth) / cfg.n_azimuth
    dist = ray_segment_distances((ego.x, ego.y), rel + ego.heading, segs)
    nearest = np.argmin(dist, axis=1)
    r = dist[np.arange(len(rel)), nearest]
    hit = r <= cfg.max_range
    r, rel, who = r[hit], rel[hit], owners[nearest[hit]]
    if len(r) == 0:
        return _empty_scan(pose, cfg)
    elev = cfg.elevations
    n_az, n_ch = len(r), len(elev)
    pts = np.empty((n_az, n_ch, 4))
    pts[:, :, 0] = (r * np.cos(rel))[:, None]
    pts[:, :, 1] = (r * np.sin(rel))[:, None]
    pts[:, :, 2] = cfg.mount_height + r[:, None] * np.tan(elev)[None, :]
    pts[:, :, 3] = (1.0 - r / cfg.max_range)[:, None]
    return LidarScan(pts.reshape(-1, 4), pose, cfg.channels, cfg.max_range, np.repeat(who, n_ch))


def apply_dropout(scan: LidarScan, rate: float, rng: np.random.Generator) -> LidarScan:
    """Keep each point independently with probability ``1 - rate``; order is preserved."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1], got {rate}")
    if rate == 0.0 or len(scan) == 0:
        return scan
    keep = rng.random(len(scan)) >= rate
    ids = scan.hit_ids[keep] if scan.hit_ids is not None else None
    return LidarScan(scan.points[keep], scan.sensor_pose, scan.channels, scan.max_range, ids)


def rasterize_bev(scan: LidarScan, cells: int = 128, extent: float | None = None) -> BevGrid:
    """Bin points by (x, y) into an ego-centred grid.

    Row index follows x (forward), column index follows y (left). Channel 0
    counts points per cell; channel 1 holds the maximum intensity.
    """
    extent = scan.max_range if extent is None else extent
    res = 2.0 * extent / cells
    grid = np.zeros((2, cells, cells), dtype=np.float32)
    if len(scan):
        ix = np.floor((scan.points[:, 0] + extent) / res).astype(np.int64)
        iy = np.floor((scan.points[:, 1] + extent) / res).astype(np.int64)
        ok = (ix >= 0) & (ix < cells) & (iy >= 0) & (iy < cells)
        flat = ix[ok] * cells + iy[ok]
        grid[0] = np.bincount(flat, minlength=cells * cells).reshape(cells, cells)
        inten = np.zeros(cells * cells)
        np.maximum.at(inten, flat, scan.points[ok, 3])
        grid[1] = inten.reshape(cells, cells)
    return BevGrid(grid, res, extent)


def rigid_transform(xy: np.ndarray, from_pose, to_pose) -> np.ndarray:
    """Map planar points from the ``from_pose`` frame into the ``to_pose`` frame."""
    fx, fy, fh = from_pose
    tx, ty, th = to_pose
    c, s = np.cos(fh), np.sin(fh)
    wx = c * xy[:, 0] - s * xy[:, 1] + fx
    wy = s * xy[:, 0] + c * xy[:, 1] + fy
    c, s = np.cos(th), np.sin(th)
    dx, dy = wx - tx, wy - ty
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)


def transform_points(scan: LidarScan, from_pose, to_pose) -> LidarScan:
    """Re-express a scan in another frame; z and intensity are unchanged."""
    pts = scan.points.copy()
    if len(pts):
        pts[:, :2] = rigid_transform(pts[:, :2], from_pose, to_pose)
    return LidarScan(pts, tuple(to_pose), scan.channels, scan.max_range, scan.hit_ids)


def merge_scans(scans: list[LidarScan], limit: int | None = None) -> LidarScan:
    """Union of scans that already share a frame, optionally capped at ``limit`` points."""
    pts = np.concatenate([s.points for s in scans]) if scans else np.zeros((0, 4))
    ids = np.concatenate([s.hit_ids if s.hit_ids is not None else np.full(len(s), -2) for s in scans]) if scans else None
    if limit is not None and len(pts) > limit:
        pts, ids = pts[:limit], ids[:limit]
    base = scans[0]
    return LidarScan(pts, base.sensor_pose, base.channels, base.max_range, ids)


def dump_scan(scan: LidarScan) -> str:
    """Golden-file text form: one ``x y z intensity`` line per point, 9 significant digits."""
    return "".join(" ".join(f"{v:.9g}" for v in p) + "\n" for p in scan.points)


def load_scan(text: str, sensor_pose=(0.0, 0.0, 0.0), channels: int = 32, max_range: float = 50.0) -> LidarScan:
    rows = [list(map(float, line.split())) for line in text.splitlines() if line.strip()]
    pts = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return LidarScan(pts, tuple(sensor_pose), channels, max_range)
