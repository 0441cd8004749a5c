"""2-D occluded driving scenarios."""
from .env import (
    N_ACTIONS,
    Action,
    CavObservation,
    EpisodeDoneError,
    StepResult,
    VehicleState,
    World,
    WorldState,
    check_collisions,
    reward,
)
from .geometry import Polyline, polygons_overlap, rect_corners, segment_blocked
from .scenario import ConfigError, ScenarioConfig, SpawnSpec, bundled, from_dict, load, occlusion_report
from .trace import TraceWriter, read_trace


def reset(config: ScenarioConfig, seed: int, sensor=None) -> tuple[World, StepResult]:
    """Create a world for ``config`` and start an episode with ``seed``."""
    w = World(config, sensor=sensor)
    return w, w.reset(seed)


__all__ = [
    "N_ACTIONS", "Action", "CavObservation", "ConfigError", "EpisodeDoneError", "Polyline", "ScenarioConfig",
    "SpawnSpec", "StepResult", "TraceWriter", "VehicleState", "World", "WorldState", "bundled",
    "check_collisions", "from_dict", "load", "occlusion_report", "polygons_overlap", "read_trace",
    "rect_corners", "reset", "reward", "segment_blocked",
]
