"""Rule-based time-to-collision car following.

The rule itself (:func:`ttc_policy`) is a pure function of the sensed front
gap and closing speed. :class:`TtcController` does the sensing on a live
world: it only perceives vehicles with a clear sight-line (occluders block),
and adds a crossing-conflict trigger for vehicles on intersecting routes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..world import Action, segment_blocked

KMH = 1.0 / 3.6


@dataclass(frozen=True)
class TtcParams:
    ttc_threshold: float = 3.0  # s
    target_speed: float = 50.0  # km/h
    dead_band: float = 1.0  # km/h
    front_range: float = 50.0  # m along the route
    conflict_window: float = 1.0  # s of slack around a predicted crossing overlap
    min_predict_speed: float = 0.5  # m/s floor used when predicting crossing times

    def __post_init__(self):
        if self.ttc_threshold <= 0:
            raise ValueError("ttc_threshold must be positive")


def ttc_policy(front_gap: float | None, closing_speed: float, ego_speed: float, params: TtcParams = TtcParams(),
               front_speed: float | None = None) -> Action:
    """Brake hard below the TTC threshold, otherwise follow the front vehicle's speed.

    ``front_gap`` in m (None when nothing is ahead), ``closing_speed`` in m/s,
    speeds in km/h. ``front_speed`` defaults to the speed implied by the
    closing speed.
    """
    db = params.dead_band
    if front_gap is None:
        if ego_speed < params.target_speed - db:
            return Action.AccelLarge
        if ego_speed > params.target_speed + db:
            return Action.BrakeSmall
        return Action.NoOp
    ttc = front_gap / closing_speed if closing_speed > 0 else math.inf
    if ttc < params.ttc_threshold:
        return Action.BrakeLarge
    if front_speed is None:
        front_speed = ego_speed - closing_speed / KMH
    diff = front_speed - ego_speed
    if diff > db:
        return Action.AccelSmall
    if diff < -db:
        return Action.BrakeSmall
    return Action.NoOp


def route_crossings(a, b) -> list[tuple[float, float]]:
    """Arc lengths (s_a, s_b) of every proper crossing between two polylines."""
    out = []
    for i in range(len(a.points) - 1):
        p, r = a.points[i], a.points[i + 1] - a.points[i]
        for j in range(len(b.points) - 1):
            q, s = b.points[j], b.points[j + 1] - b.points[j]
            den = r[0] * s[1] - r[1] * s[0]
            if abs(den) < 1e-12:
                continue
            w = q - p
            t = (w[0] * s[1] - w[1] * s[0]) / den
            u = (w[0] * r[1] - w[1] * r[0]) / den
            if 0 <= t <= 1 and 0 <= u <= 1:
                out.append((a.cum[i] + t * np.hypot(*r), b.cum[j] + u * np.hypot(*s)))
    return out


class TtcController:
    """Applies :func:`ttc_policy` to every active CAV of a :class:`~coopdrive.world.World`."""

    def __init__(self, scenario, params: TtcParams = TtcParams()):
        self.scenario = scenario
        self.params = params
        names = list(scenario.routes)
        self._cross = {(p, q): route_crossings(scenario.routes[p], scenario.routes[q])
                       for p in names for q in names if p != q}

    def visible(self, state, ego, other) -> bool:
        return not segment_blocked((ego.x, ego.y), (other.x, other.y), state.occluders)

    def sense_front(self, state, ego):
        """(gap m, closing m/s, front speed km/h) of the nearest visible vehicle ahead on the route."""
        best = None
        for o in state.vehicles:
            if o.id == ego.id or not o.active or o.route != ego.route:
                continue
            ds = o.route_progress - ego.route_progress
            if 0 < ds <= self.params.front_range and self.visible(state, ego, o):
                if best is None or ds < best[0]:
                    best = (ds, o)
        if best is None:
            return None, 0.0, None
        ds, o = best
        gap = max(ds - 0.5 * (ego.length + o.length), 0.0)
        return gap, (ego.speed - o.speed) * KMH, o.speed

    def crossing_conflict(self, state, ego) -> bool:
        """A visible vehicle on a crossing route whose occupancy of the crossing overlaps ours soon."""
        p = self.params
        for o in state.vehicles:
            if o.id == ego.id or not o.active or o.route == ego.route:
                continue
            for s_e, s_o in self._cross.get((ego.route, o.route), []):
                e_in = s_e - ego.route_progress - 0.5 * (ego.length + o.width)
                e_out = s_e - ego.route_progress + 0.5 * (ego.length + o.width)
                o_in = s_o - o.route_progress - 0.5 * (o.length + ego.width)
                o_out = s_o - o.route_progress + 0.5 * (o.length + ego.width)
                if e_out < 0 or o_out < 0 or e_in < 0:
                    continue  # one of us is already through, or ego is committed
                if not self.visible(state, ego, o):
                    continue
                ve = max(ego.speed * KMH, p.min_predict_speed)
                vo = max(o.speed * KMH, p.min_predict_speed)
                te_in, te_out = e_in / ve, e_out / ve
                to_in, to_out = o_in / vo, o_out / vo
                overlap = te_in < to_out + p.conflict_window and to_in < te_out + p.conflict_window
                if overlap and min(te_in, max(to_in, 0.0)) < p.ttc_threshold:
                    return True
        return False

    def act_one(self, state, vid: int) -> Action:
        ego = state.vehicle(vid)
        if self.crossing_conflict(state, ego):
            return Action.BrakeLarge
        gap, closing, front_speed = self.sense_front(state, ego)
        return ttc_policy(gap, closing, ego.speed, self.params, front_speed)

    def act(self, world) -> dict:
        state = world.state
        return {v.id: self.act_one(state, v.id) for v in state.cavs if v.active}
