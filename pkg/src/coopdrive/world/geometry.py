"""Planar geometry: route polylines, vehicle footprints, separating axes, rays."""
from __future__ import annotations

import numpy as np


class Polyline:
    """Arc-length parametrised path through 2-D waypoints."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("a route needs at least two (x, y) waypoints")
        seg = np.diff(pts, axis=0)
        lengths = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(lengths <= 0):
            raise ValueError("route has repeated waypoints")
        self.points = pts
        self.cum = np.concatenate([[0.0], np.cumsum(lengths)])
        self.headings = np.arctan2(seg[:, 1], seg[:, 0])
        self._dirs = seg / lengths[:, None]

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def pose_at(self, s: float) -> tuple[float, float, float]:
        """(x, y, heading) at arc length ``s``; extrapolates past either end."""
        i = int(np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self._dirs) - 1))
        d = s - self.cum[i]
        x, y = self.points[i] + d * self._dirs[i]
        return float(x), float(y), float(self.headings[i])

    def project(self, xy) -> float:
        """Arc length of the closest point on the polyline to ``xy``."""
        p = np.asarray(xy, dtype=np.float64)
        a = self.points[:-1]
        d = self._dirs
        seg_len = np.diff(self.cum)
        t = np.clip(np.einsum("ij,ij->i", p - a, d), 0.0, seg_len)
        closest = a + t[:, None] * d
        k = int(np.argmin(np.hypot(*(closest - p).T)))
        return float(self.cum[k] + t[k])


def rect_corners(x: float, y: float, heading: float, length: float, width: float) -> np.ndarray:
    """Corners of an oriented rectangle centred at (x, y), counter-clockwise."""
    c, s = np.cos(heading), np.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def _axes(poly: np.ndarray) -> np.ndarray:
    edges = np.roll(poly, -1, axis=0) - poly
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
    return normals / np.linalg.norm(normals, axis=1, keepdims=True)


def polygons_overlap(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    """Strict-interior overlap of two convex polygons by the separating-axis test.

    Polygons that only touch along an edge or at a corner do not overlap.
    """
    for axis in np.vstack([_axes(a), _axes(b)]):
        pa, pb = a @ axis, b @ axis
        if pa.max() <= pb.min() + tol or pb.max() <= pa.min() + tol:
            return False
    return True


def segments_from_polygon(poly) -> np.ndarray:
    poly = np.asarray(poly, dtype=np.float64)
    return np.stack([poly, np.roll(poly, -1, axis=0)], axis=1)


def ray_segment_distances(origin, angles: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Distance along each ray to each segment (inf where missed).

    ``segments`` is (S, 2, 2); result is (len(angles), S).
    """
    if len(segments) == 0:
        return np.full((len(angles), 0), np.inf)
    o = np.asarray(origin, dtype=np.float64)
    dx, dy = np.cos(angles)[:, None], np.sin(angles)[:, None]
    p = segments[:, 0, :]
    e = segments[:, 1, :] - p
    ex, ey = e[:, 0][None, :], e[:, 1][None, :]
    wx, wy = (p[:, 0] - o[0])[None, :], (p[:, 1] - o[1])[None, :]
    denom = dx * ey - dy * ex
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wx * ey - wy * ex) / denom
        u = (wx * dy - wy * dx) / denom
    hit = (np.abs(denom) > 1e-12) & (t >= 0) & (u >= 0) & (u <= 1)
    return np.where(hit, t, np.inf)


def segment_blocked(a, b, polygons, eps: float = 1e-9) -> bool:
    """True if the open segment a-b crosses any polygon edge."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = b - a
    dist = np.hypot(*d)
    if dist == 0:
        return False
    angle = np.arctan2(d[1], d[0])
    for poly in polygons:
        t = ray_segment_distances(a, np.array([angle]), segments_from_polygon(poly))
        if np.any(t < dist - eps):
            return True
    return False
