import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from coopdrive import world as W
from coopdrive.world import Action, check_collisions, reward

from .conftest import crossing_config, vehicle, world_state


@pytest.mark.parametrize("terms, expected", [((1, 0, 0, 1), -5.01), ((0, 0, 0, 1), -0.01), ((0, 0.5, 1, 1), 5.49)])
def test_reward_table(terms, expected):
    assert reward(*terms) == pytest.approx(expected, abs=1e-12)


def test_action_encoding():
    assert [a.value for a in Action] == [0, 1, 2, 3, 4]
    assert Action(2) is Action.NoOp


def test_reset_same_seed_identical():
    cfg = W.bundled("occluded_intersection")
    _, a = W.reset(cfg, 7)
    _, b = W.reset(cfg, 7)
    sa = a.observations[0].world
    sb = b.observations[0].world
    assert [(v.x, v.y, v.heading, v.speed, v.route) for v in sa.vehicles] == \
           [(v.x, v.y, v.heading, v.speed, v.route) for v in sb.vehicles]


def test_reset_speeds_within_configured_range():
    cfg = W.bundled("occluded_intersection")
    for seed in range(100):
        w, _ = W.reset(cfg, seed)
        for spec, v in zip(cfg.cavs, w.state.cavs):
            lo, hi = spec.speed_range
            assert lo <= v.speed <= hi


def test_default_scenarios_are_occluded():
    for name in ("occluded_intersection", "blind_summit"):
        cfg = W.bundled(name)
        assert all(W.occlusion_report(cfg))
        assert cfg.n_cavs >= 2 and len(cfg.traffic) >= 1
    assert W.bundled("occluded_intersection").max_steps == 200
    assert W.bundled("blind_summit").max_steps == 400


def test_occlusion_check_against_shapely():
    cfg = W.bundled("occluded_intersection")
    from shapely.geometry import LineString
    cav = cfg.routes["south_to_north"].pose_at(52.5)[:2]
    traffic = cfg.routes["east_to_west"].pose_at(80.0)[:2]
    line = LineString([cav, traffic])
    assert any(line.crosses(Polygon(p)) or line.within(Polygon(p)) for p in cfg.occluders)
    assert W.segment_blocked(cav, traffic, cfg.occluders)


def test_config_validation_errors():
    with pytest.raises(W.ConfigError, match="cavs"):
        crossing_config(cavs=[{"route": "east", "start_range": [0, 1], "speed_range": [0, 10]}])
    with pytest.raises(W.ConfigError, match="unknown"):
        crossing_config(bogus=1)
    with pytest.raises(W.ConfigError, match="speed_range"):
        crossing_config(traffic=[{"route": "far", "start_range": [0, 1], "speed_range": [0, 90]}])


def test_spawn_overlap_raises():
    cfg = crossing_config(cavs=[
        {"route": "east", "start_range": [50.0, 50.0], "speed_range": [0, 0]},
        {"route": "north", "start_range": [50.0, 50.0], "speed_range": [0, 0]},
    ])
    with pytest.raises(W.ConfigError, match="100"):
        W.World(cfg).reset(0)


def test_noop_displacement_straight_road(crossing):
    w = W.World(crossing)
    w.place([vehicle(0, -30.0, 0.0, speed=36.0, route="east", progress=20.0),
             vehicle(1, 0.0, -30.0, math.pi / 2, speed=0.0, route="north", progress=20.0),
             vehicle(2, 10.0, 200.0, speed=0.0, is_cav=False, route="far", progress=10.0)])
    for k in range(1, 11):
        w.step([Action.NoOp, Action.NoOp])
        v = w.state.vehicle(0)
        assert v.route_progress - 20.0 == pytest.approx(k * 36.0 / 3.6 * 0.05, abs=1e-9)
        assert v.x == pytest.approx(-30.0 + k * 0.5, abs=1e-9)


def test_brake_large_clamps_at_zero(crossing):
    w = W.World(crossing)
    w.place([vehicle(0, -30.0, 0.0, speed=20.0, route="east", progress=20.0),
             vehicle(1, 0.0, -40.0, math.pi / 2, speed=0.0, route="north", progress=10.0),
             vehicle(2, 10.0, 200.0, speed=0.0, is_cav=False, route="far", progress=10.0)])
    speeds = []
    for _ in range(60):
        w.step([Action.BrakeLarge, Action.NoOp])
        speeds.append(w.state.vehicle(0).speed)
    assert speeds[-1] == 0.0
    first_zero = speeds.index(0.0)
    assert all(s == 0.0 for s in speeds[first_zero:])
    assert all(0.0 <= s <= 80.0 for s in speeds)


def test_collision_at_closed_form_step(crossing):
    # both 4x2 vehicles start 30 m before the crossing at 10 m/s; the fronts meet the
    # other's side edge after travelling 27 m, overlap is strict afterwards
    w = W.World(crossing)
    res = w.reset(0)
    per_step = 36.0 / 3.6 * 0.05
    expected = math.floor(27.0 / per_step + 1e-9) + 1
    step = 0
    while not res.done:
        res = w.step([Action.NoOp, Action.NoOp])
        step += 1
    assert res.collision
    assert step == expected == 55
    assert res.info["collision_pairs"] == [(0, 1)]
    assert res.shared_reward == pytest.approx(reward(1, 2 * (36.0 / 80.0) / 2, 0, 1))
    with pytest.raises(W.EpisodeDoneError):
        w.step([Action.NoOp, Action.NoOp])


def test_collisions_simple_cases():
    far = world_state([vehicle(0, 0, 0), vehicle(1, 100, 0)])
    assert check_collisions(far) == []
    same = world_state([vehicle(0, 3, 4, 0.3), vehicle(1, 3, 4, 0.3)])
    assert check_collisions(same) == [(0, 1)]
    corner = world_state([vehicle(0, 0, 0), vehicle(1, 4.0, 2.0)])
    assert check_collisions(corner) == []
    edge = world_state([vehicle(0, 0, 0), vehicle(1, 4.0, 0.5)])
    assert check_collisions(edge) == []
    nudge = world_state([vehicle(0, 0, 0), vehicle(1, 3.99, 1.99)])
    assert check_collisions(nudge) == [(0, 1)]


def _overlap_areas(ws):
    polys = [Polygon(v.corners()) for v in ws.vehicles]
    return {(i, j): polys[i].intersection(polys[j]).area
            for i in range(len(polys)) for j in range(i + 1, len(polys))}


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.floats(-8, 8), st.floats(-8, 8), st.floats(-math.pi, math.pi),
                          st.floats(2, 6), st.floats(1, 3)), min_size=2, max_size=6))
def test_collisions_match_shapely(specs):
    ws = world_state([vehicle(i, x, y, h, length=l, width=wd) for i, (x, y, h, l, wd) in enumerate(specs)])
    got = set(check_collisions(ws))
    for pair, area in _overlap_areas(ws).items():
        if area > 1e-6:
            assert pair in got
        elif area == 0.0:
            assert pair not in got


def test_episode_invariants_random_policy():
    cfg = W.bundled("occluded_intersection")
    rng = np.random.default_rng(0)
    for seed in range(10):
        w = W.World(cfg)
        res = w.reset(seed)
        steps = 0
        while not res.done:
            res = w.step(list(rng.integers(0, 5, size=cfg.n_cavs)))
            steps += 1
            assert all(0.0 <= v.speed <= cfg.max_speed for v in w.state.vehicles)
            assert sum([res.collision, res.all_reached, res.timeout]) == 1 or not res.done
        assert steps <= cfg.max_steps


def test_determinism_of_step_stream():
    cfg = W.bundled("occluded_intersection")

    def run():
        w = W.World(cfg)
        res = w.reset(3)
        out = []
        rng = np.random.default_rng(11)
        while not res.done:
            res = w.step(list(rng.integers(0, 5, size=2)))
            out.append((res.shared_reward, tuple(sorted(res.agent_rewards.items())),
                        tuple((v.x, v.y, v.speed) for v in w.state.vehicles)))
        return out

    assert run() == run()


def test_arrival_reward_and_all_reached(crossing):
    cfg = crossing_config(cavs=[
        {"route": "east", "start_range": [20.0, 20.0], "speed_range": [72.0, 72.0], "goal": 20.5},
        {"route": "north", "start_range": [5.0, 5.0], "speed_range": [72.0, 72.0], "goal": 5.5},
    ])
    w = W.World(cfg)
    w.reset(0)
    res = w.step([Action.NoOp, Action.NoOp])
    assert res.info["reward_terms"]["r_dest"] == 2
    assert res.all_reached and res.done and not res.timeout
    assert res.shared_reward == pytest.approx(reward(0, 0.0, 2, 1))


def test_timeout_flag():
    cfg = crossing_config(max_steps=5)
    w = W.World(cfg)
    w.place([vehicle(0, -40.0, 0.0, route="east", progress=10.0),
             vehicle(1, 0.0, -40.0, math.pi / 2, route="north", progress=10.0),
             vehicle(2, 10.0, 200.0, is_cav=False, route="far", progress=10.0)])
    res = None
    for _ in range(5):
        res = w.step([Action.NoOp, Action.NoOp])
    assert res.timeout and res.done and not res.collision


def test_trace_round_trip(tmp_path):
    cfg = W.bundled("occluded_intersection")
    w = W.World(cfg)
    res = w.reset(1)
    path = tmp_path / "t.jsonl"
    with W.TraceWriter(path) as tw:
        tw.write(res)
        for _ in range(3):
            acts = {0: Action.NoOp, 1: Action.AccelSmall}
            res = w.step(acts)
            tw.write(res, acts)
    rows = W.read_trace(path)
    assert [r["step"] for r in rows] == [0, 1, 2, 3]
    assert rows[1]["actions"] == {"0": 2, "1": 1}
    assert set(rows[1]["reward_terms"]) == {"r_col", "r_speed", "r_dest", "r_step"}
