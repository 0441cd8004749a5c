import numpy as np
import pytest

from coopdrive.world import VehicleState, WorldState, from_dict


def vehicle(vid, x, y, heading=0.0, speed=0.0, length=4.0, width=2.0, is_cav=True, route="r", progress=0.0, goal=1e9):
    return VehicleState(id=vid, x=x, y=y, heading=heading, speed=speed, length=length, width=width, lane_id=0,
                        is_cav=is_cav, route=route, route_progress=progress, goal=goal, target_speed=speed,
                        base_speed=speed)


def world_state(vehicles, occluders=()):
    return WorldState(tuple(vehicles), tuple(np.asarray(o, dtype=float) for o in occluders))


def crossing_config(**overrides):
    doc = {
        "name": "crossing",
        "kind": "OccludedIntersection",
        "routes": {"east": [[-50.0, 0.0], [50.0, 0.0]], "north": [[0.0, -50.0], [0.0, 50.0]],
                   "far": [[0.0, 200.0], [100.0, 200.0]]},
        "cavs": [
            {"route": "east", "start_range": [20.0, 20.0], "speed_range": [36.0, 36.0], "dims": [4.0, 2.0]},
            {"route": "north", "start_range": [20.0, 20.0], "speed_range": [36.0, 36.0], "dims": [4.0, 2.0]},
        ],
        "traffic": [{"route": "far", "start_range": [10.0, 10.0], "speed_range": [0.0, 0.0]}],
        "max_steps": 200,
    }
    doc.update(overrides)
    return from_dict(doc)


@pytest.fixture
def crossing():
    return crossing_config()
