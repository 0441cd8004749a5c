"""Path-constrained kinematic simulation of the occluded driving scenarios."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .geometry import polygons_overlap, rect_corners, segments_from_polygon
from .scenario import ConfigError, ScenarioConfig

KMH = 1.0 / 3.6
COLLISION_PENALTY = -5.0
SPEED_WEIGHT = 1.0
DEST_BONUS = 5.0
STEP_PENALTY = -0.01


class Action(IntEnum):
    AccelLarge = 0
    AccelSmall = 1
    NoOp = 2
    BrakeSmall = 3
    BrakeLarge = 4


N_ACTIONS = len(Action)


class EpisodeDoneError(RuntimeError):
    pass


def reward(r_col, r_speed, r_dest, r_step) -> float:
    """Linear reward: -5 per collision, +speed term, +5 per arrival, -0.01 per step.

    ``r_dest`` may be an arrival count when several CAVs arrive in one step.
    """
    return COLLISION_PENALTY * r_col + SPEED_WEIGHT * r_speed + DEST_BONUS * r_dest + STEP_PENALTY * r_step


@dataclass
class VehicleState:
    id: int
    x: float
    y: float
    heading: float
    speed: float  # km/h
    length: float
    width: float
    lane_id: int
    is_cav: bool
    route: str
    route_progress: float
    goal: float
    target_speed: float = 0.0
    base_speed: float = 0.0
    profile: tuple = ((0.0, 1.0),)
    active: bool = True
    arrived: bool = False

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.heading)

    @property
    def dims(self) -> tuple[float, float]:
        return (self.length, self.width)

    def corners(self) -> np.ndarray:
        return rect_corners(self.x, self.y, self.heading, self.length, self.width)


@dataclass
class WorldState:
    vehicles: tuple
    occluders: tuple
    step: int = 0
    time: float = 0.0
    _segments: np.ndarray | None = field(default=None, repr=False, compare=False)

    def vehicle(self, vid: int) -> VehicleState:
        return self.vehicles[vid]

    @property
    def active(self) -> list[VehicleState]:
        return [v for v in self.vehicles if v.active]

    @property
    def cavs(self) -> list[VehicleState]:
        return [v for v in self.vehicles if v.is_cav]

    def obstacle_segments(self, exclude: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """All reflecting segments (S,2,2) and the owning vehicle id per segment (-1 = occluder)."""
        segs, owners = [], []
        for poly in self.occluders:
            s = segments_from_polygon(poly)
            segs.append(s)
            owners.extend([-1] * len(s))
        for v in self.vehicles:
            if v.active and v.id != exclude:
                segs.append(segments_from_polygon(v.corners()))
                owners.extend([v.id] * 4)
        if not segs:
            return np.zeros((0, 2, 2)), np.zeros(0, dtype=int)
        return np.concatenate(segs), np.asarray(owners)


def check_collisions(world: WorldState) -> list[tuple[int, int]]:
    """Pairs (i, j), i < j, of active vehicles whose footprints overlap strictly."""
    vs = [v for v in world.vehicles if v.active]
    corners = [v.corners() for v in vs]
    centers = np.array([[v.x, v.y] for v in vs]) if vs else np.zeros((0, 2))
    radii = np.array([0.5 * np.hypot(v.length, v.width) for v in vs])
    pairs = []
    for a in range(len(vs)):
        for b in range(a + 1, len(vs)):
            if np.hypot(*(centers[a] - centers[b])) > radii[a] + radii[b]:
                continue
            if polygons_overlap(corners[a], corners[b]):
                i, j = sorted((vs[a].id, vs[b].id))
                pairs.append((i, j))
    return sorted(pairs)


@dataclass
class CavObservation:
    """Per-CAV observation bundle: own metadata plus a lazily raycast LiDAR scan."""

    ego_id: int
    meta: dict
    world: WorldState
    sensor: object = None
    _scan: object = field(default=None, repr=False)

    @property
    def scan(self):
        if self._scan is None:
            from ..lidar import LidarConfig, raycast_scan
            self._scan = raycast_scan(self.world, self.ego_id, config=self.sensor or LidarConfig())
        return self._scan


@dataclass
class StepResult:
    observations: dict
    shared_reward: float
    agent_rewards: dict
    collision: bool
    all_reached: bool
    timeout: bool
    info: dict

    @property
    def done(self) -> bool:
        return self.collision or self.all_reached or self.timeout


class World:
    """One episodic instance of a scenario. Not thread-safe; one instance per worker."""

    def __init__(self, config: ScenarioConfig, sensor=None):
        self.config = config
        self.sensor = sensor
        self.state: WorldState | None = None
        self._done = True
        self._landmark = self._conflict_landmark()

    def _conflict_landmark(self):
        cfg = self.config
        if cfg.intersection_box is not None:
            x0, y0, x1, y1 = cfg.intersection_box
            return np.array([(x0 + x1) / 2, (y0 + y1) / 2])
        if cfg.occluders:
            return np.asarray(cfg.occluders[0]).mean(axis=0)
        return None

    # ------------------------------------------------------------------ reset
    def reset(self, seed: int) -> StepResult:
        cfg = self.config
        rng = np.random.default_rng(seed)
        for _ in range(100):
            vehicles = self._sample_vehicles(rng)
            probe = WorldState(tuple(vehicles), ())
            if not check_collisions(probe):
                break
        else:
            raise ConfigError("spawn overlap persisted after 100 rejection samples")
        self.state = WorldState(tuple(vehicles), tuple(cfg.occluders), 0, 0.0)
        self._done = False
        n = cfg.n_cavs
        return self._result(0.0, {i: 0.0 for i in range(n)}, [], False, False, False, {"r_col": 0, "r_speed": 0.0, "r_dest": 0, "r_step": 0})

    def _sample_vehicles(self, rng) -> list[VehicleState]:
        cfg = self.config
        out = []
        vid = 0
        present = [rng.random() < t.presence for t in cfg.traffic]
        if not any(present):
            present[0] = True
        specs = [(s, True, True) for s in cfg.cavs] + [(s, False, p) for s, p in zip(cfg.traffic, present)]
        for spec, is_cav, here in specs:
            route_name = spec.routes[int(rng.integers(len(spec.routes)))]
            s0 = float(rng.uniform(*spec.start_range))
            v0 = float(rng.uniform(*spec.speed_range))
            if not here:
                continue
            route = cfg.routes[route_name]
            x, y, h = route.pose_at(s0)
            goal = spec.goal if spec.goal is not None else route.length
            out.append(VehicleState(
                id=vid, x=x, y=y, heading=h, speed=v0, length=spec.dims[0], width=spec.dims[1],
                lane_id=spec.lane_id, is_cav=is_cav, route=route_name, route_progress=s0, goal=goal,
                target_speed=v0, base_speed=v0, profile=tuple(spec.profile)))
            vid += 1
        return out

    # ------------------------------------------------------------------- step
    def step(self, actions) -> StepResult:
        if self._done:
            raise EpisodeDoneError("step() called on a finished episode; call reset()")
        cfg = self.config
        vehicles = [copy.copy(v) for v in self.state.vehicles]
        cavs = [v for v in vehicles if v.is_cav]
        if isinstance(actions, dict):
            acts = actions
        else:
            acts = dict(zip([v.id for v in cavs], actions))
        missing = [v.id for v in cavs if v.active and v.id not in acts]
        if missing:
            raise ValueError(f"no action for active CAVs {missing}")

        t = self.state.time
        up = cfg.accel_limit * cfg.dt / KMH
        down = cfg.decel_limit * cfg.dt / KMH
        deltas = (cfg.large_delta, cfg.small_delta, 0.0, -cfg.small_delta, -cfg.large_delta)
        was_active = {v.id: v.active for v in cavs}
        for v in vehicles:
            if not v.active:
                continue
            if v.is_cav:
                a = int(acts[v.id])
                v.target_speed = float(np.clip(v.target_speed + deltas[a], 0.0, cfg.max_speed))
            else:
                v.target_speed = self._traffic_target(v, vehicles, t)
            dv = np.clip(v.target_speed - v.speed, -down, up)
            v.speed = float(np.clip(v.speed + dv, 0.0, cfg.max_speed))

        arrivals = []
        for v in vehicles:
            if not v.active:
                continue
            route = cfg.routes[v.route]
            v.route_progress += v.speed * KMH * cfg.dt
            v.x, v.y, v.heading = route.pose_at(v.route_progress)
            if v.is_cav and v.route_progress >= v.goal:
                v.active, v.arrived = False, True
                arrivals.append(v.id)
            elif not v.is_cav and v.route_progress >= route.length:
                v.active = False

        state = WorldState(tuple(vehicles), self.state.occluders, self.state.step + 1, t + cfg.dt)
        pairs = check_collisions(state)
        ncav = cfg.n_cavs
        cav_pairs = [p for p in pairs if p[0] < ncav or p[1] < ncav]
        crashed = {i for p in cav_pairs for i in p if i < ncav}
        collision = bool(cav_pairs)

        speeds = [v.speed / cfg.max_speed if v.active else 0.0 for v in cavs]
        r_speed = float(np.mean(speeds))
        terms = {"r_col": int(collision), "r_speed": r_speed, "r_dest": len(arrivals), "r_step": 1}
        shared = reward(**terms)
        agent = {}
        for v in cavs:
            if not was_active[v.id]:
                agent[v.id] = 0.0
                continue
            agent[v.id] = reward(int(v.id in crashed), v.speed / cfg.max_speed if v.active else 0.0,
                                 int(v.id in arrivals), 1)
        all_reached = all(v.arrived for v in cavs)
        timeout = state.step >= cfg.max_steps
        self.state = state
        self._done = collision or all_reached or timeout
        return self._result(shared, agent, pairs, collision, all_reached, timeout and not (collision or all_reached), terms,
                            arrivals=arrivals, crashed=sorted(crashed))

    def _traffic_target(self, v: VehicleState, vehicles, t: float) -> float:
        factor = 1.0
        for start, f in v.profile:
            if t >= start:
                factor = f
        target = min(v.base_speed * factor, self.config.max_speed)
        # scripted traffic never rear-ends another traffic vehicle on its route
        for o in vehicles:
            if o is v or not o.active or o.is_cav or o.route != v.route:
                continue
            gap = o.route_progress - v.route_progress - 0.5 * (o.length + v.length)
            if 0 <= gap < 12.0:
                target = min(target, o.speed if gap > 4.0 else 0.0)
        return target

    def _result(self, shared, agent, pairs, collision, all_reached, timeout, terms, arrivals=(), crashed=()) -> StepResult:
        state = self.state
        obs = {}
        for v in state.vehicles:
            if v.is_cav:
                obs[v.id] = CavObservation(v.id, self.metadata(v.id), state, self.sensor)
        info = {
            "collision_pairs": pairs,
            "speeds": {v.id: v.speed for v in state.vehicles if v.is_cav},
            "reward_terms": terms,
            "arrivals": list(arrivals),
            "crashed": list(crashed),
            "step": state.step,
        }
        return StepResult(obs, float(shared), agent, bool(collision), bool(all_reached), bool(timeout), info)

    @property
    def done(self) -> bool:
        return self._done

    def metadata(self, vid: int) -> dict:
        """Ego metadata: speed, dimensions, lane id and route progress terms."""
        v = self.state.vehicles[vid]
        route = self.config.routes[v.route]
        to_conflict = 0.0
        if self._landmark is not None:
            to_conflict = route.project(self._landmark) - v.route_progress
        return {
            "id": v.id, "pose": v.pose, "speed": v.speed, "target_speed": v.target_speed,
            "dims": v.dims, "lane_id": v.lane_id, "route_progress": v.route_progress,
            "to_goal": v.goal - v.route_progress, "to_conflict": to_conflict,
            "active": v.active, "arrived": v.arrived,
        }

    def place(self, vehicles: list[VehicleState]) -> StepResult:
        """Start an episode from explicit vehicle states (fixtures, replays)."""
        self.state = WorldState(tuple(replace(v) for v in vehicles), tuple(self.config.occluders), 0, 0.0)
        self._done = False
        return self._result(0.0, {v.id: 0.0 for v in vehicles if v.is_cav}, [], False, False, False,
                            {"r_col": 0, "r_speed": 0.0, "r_dest": 0, "r_step": 0})
