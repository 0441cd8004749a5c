"""Scenario descriptions and their JSON loader."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import Polyline, segment_blocked

SCENARIO_KINDS = ("OccludedIntersection", "BlindSummit")


class ConfigError(ValueError):
    """Invalid scenario or experiment configuration; message names the field path."""


@dataclass
class SpawnSpec:
    routes: list[str]
    start_range: tuple[float, float]
    speed_range: tuple[float, float]
    dims: tuple[float, float] = (4.5, 1.8)
    lane_id: int = 0
    goal: float | None = None
    presence: float = 1.0
    # piecewise-constant (time_s, speed factor) pairs for scripted traffic
    profile: list[tuple[float, float]] = field(default_factory=lambda: [(0.0, 1.0)])


@dataclass
class ScenarioConfig:
    name: str
    kind: str
    routes: dict[str, Polyline]
    cavs: list[SpawnSpec]
    traffic: list[SpawnSpec]
    occluders: list[np.ndarray] = field(default_factory=list)
    intersection_box: tuple[float, float, float, float] | None = None
    max_steps: int = 200
    dt: float = 0.05
    max_speed: float = 80.0
    accel_limit: float = 3.0
    decel_limit: float = 6.0
    small_delta: float = 2.0
    large_delta: float = 6.0
    seed: int = 0

    def __post_init__(self):
        validate(self)

    @property
    def n_cavs(self) -> int:
        return len(self.cavs)

    @property
    def n_vehicles(self) -> int:
        return len(self.cavs) + len(self.traffic)


_SPAWN_KEYS = {"routes", "route", "start_range", "speed_range", "dims", "lane_id", "goal", "presence", "profile"}
_TOP_KEYS = {"name", "kind", "routes", "cavs", "traffic", "occluders", "intersection_box", "max_steps", "dt",
             "max_speed", "accel_limit", "decel_limit", "small_delta", "large_delta", "seed"}


def _spawn(d: dict, path: str) -> SpawnSpec:
    unknown = set(d) - _SPAWN_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    routes = d.get("routes") or ([d["route"]] if "route" in d else None)
    if not routes:
        raise ConfigError(f"{path}.routes: missing")
    try:
        return SpawnSpec(
            routes=list(routes),
            start_range=tuple(float(v) for v in d["start_range"]),
            speed_range=tuple(float(v) for v in d["speed_range"]),
            dims=tuple(float(v) for v in d.get("dims", (4.5, 1.8))),
            lane_id=int(d.get("lane_id", 0)),
            goal=None if d.get("goal") is None else float(d["goal"]),
            presence=float(d.get("presence", 1.0)),
            profile=[(float(t), float(f)) for t, f in d.get("profile", [(0.0, 1.0)])],
        )
    except KeyError as exc:
        raise ConfigError(f"{path}.{exc.args[0]}: missing") from None


def from_dict(doc: dict) -> ScenarioConfig:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"scenario: unknown keys {sorted(unknown)}")
    try:
        routes = {k: Polyline(v) for k, v in doc["routes"].items()}
    except KeyError:
        raise ConfigError("scenario.routes: missing") from None
    except ValueError as exc:
        raise ConfigError(f"scenario.routes: {exc}") from None
    kw = {k: doc[k] for k in ("max_steps", "dt", "max_speed", "accel_limit", "decel_limit",
                              "small_delta", "large_delta", "seed") if k in doc}
    return ScenarioConfig(
        name=doc.get("name", "unnamed"),
        kind=doc.get("kind", "OccludedIntersection"),
        routes=routes,
        cavs=[_spawn(c, f"scenario.cavs[{i}]") for i, c in enumerate(doc.get("cavs", []))],
        traffic=[_spawn(c, f"scenario.traffic[{i}]") for i, c in enumerate(doc.get("traffic", []))],
        occluders=[np.asarray(p, dtype=np.float64) for p in doc.get("occluders", [])],
        intersection_box=tuple(doc["intersection_box"]) if doc.get("intersection_box") else None,
        **kw,
    )


def load(path_or_name) -> ScenarioConfig:
    """Load a scenario from a JSON path or a bundled name (``occluded_intersection``, ``blind_summit``)."""
    p = Path(str(path_or_name))
    if not p.suffix:
        p = resources.files("coopdrive.world") / "scenarios" / f"{path_or_name}.json"
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path_or_name}") from None
    return from_dict(doc)


def validate(cfg: ScenarioConfig) -> None:
    if cfg.kind not in SCENARIO_KINDS:
        raise ConfigError(f"scenario.kind: {cfg.kind!r} not in {SCENARIO_KINDS}")
    if len(cfg.cavs) < 2:
        raise ConfigError("scenario.cavs: at least two CAVs required")
    if len(cfg.traffic) < 1:
        raise ConfigError("scenario.traffic: at least one traffic vehicle required")
    if cfg.max_steps < 1 or cfg.dt <= 0:
        raise ConfigError("scenario.max_steps/dt: must be positive")
    for group, specs in (("cavs", cfg.cavs), ("traffic", cfg.traffic)):
        for i, s in enumerate(specs):
            where = f"scenario.{group}[{i}]"
            for r in s.routes:
                if r not in cfg.routes:
                    raise ConfigError(f"{where}.routes: unknown route {r!r}")
            lo, hi = s.speed_range
            if not 0 <= lo <= hi <= cfg.max_speed:
                raise ConfigError(f"{where}.speed_range: must satisfy 0 <= lo <= hi <= {cfg.max_speed}")
            if s.start_range[0] > s.start_range[1]:
                raise ConfigError(f"{where}.start_range: lo > hi")
            if not 0 <= s.presence <= 1:
                raise ConfigError(f"{where}.presence: must lie in [0, 1]")


def spawn_points(cfg: ScenarioConfig, spec: SpawnSpec):
    """Nominal spawn positions (range midpoint) for every route option of a spawn."""
    mid = 0.5 * (spec.start_range[0] + spec.start_range[1])
    return [cfg.routes[r].pose_at(mid)[:2] for r in spec.routes]


def occlusion_report(cfg: ScenarioConfig) -> list[bool]:
    """Per CAV: is the sight-line to at least one traffic spawn blocked by an occluder?"""
    out = []
    for cav in cfg.cavs:
        a = spawn_points(cfg, cav)[0]
        blocked = any(segment_blocked(a, b, cfg.occluders)
                      for t in cfg.traffic for b in spawn_points(cfg, t))
        out.append(blocked)
    return out


def bundled(name: str) -> ScenarioConfig:
    cfg = load(name)
    if not all(occlusion_report(cfg)):
        raise ConfigError(f"scenario {name!r}: a CAV spawn has an unobstructed view of every traffic spawn")
    return cfg
