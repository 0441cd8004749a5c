"""Line-delimited JSON episode traces (one object per step, append-only)."""
from __future__ import annotations

import json
from pathlib import Path


def step_record(result, actions=None) -> dict:
    state = result.observations[next(iter(result.observations))].world
    return {
        "step": state.step,
        "time": round(state.time, 6),
        "vehicles": [
            {"id": v.id, "cav": v.is_cav, "active": v.active, "x": v.x, "y": v.y, "heading": v.heading,
             "speed": v.speed, "length": v.length, "width": v.width}
            for v in state.vehicles
        ],
        "occluders": [[list(map(float, p)) for p in poly] for poly in state.occluders] if state.step == 0 else None,
        "actions": None if actions is None else {str(k): int(a) for k, a in actions.items()},
        "reward_terms": result.info["reward_terms"],
        "shared_reward": result.shared_reward,
        "collision_pairs": [list(p) for p in result.info["collision_pairs"]],
        "done": result.done,
    }


class TraceWriter:
    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("a", encoding="utf-8")

    def write(self, result, actions=None) -> None:
        self._fh.write(json.dumps(step_record(result, actions), sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_trace(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
