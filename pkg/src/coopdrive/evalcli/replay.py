"""Static per-step renderings of an episode trace (text lines or SVG files)."""
from __future__ import annotations

import math
from pathlib import Path

from ..world import Action, read_trace

CAV_COLOUR = "#1f77b4"
TRAFFIC_COLOUR = "#d62728"
OCCLUDER_COLOUR = "#2ca02c"


def render_text(records: list[dict]) -> list[str]:
    """One line per step: time, reward, and each vehicle's position, speed and action."""
    lines = []
    for rec in records:
        acts = rec.get("actions") or {}
        parts = []
        for v in rec["vehicles"]:
            tag = ("C" if v["cav"] else "T") + str(v["id"])
            if not v["active"]:
                parts.append(f"{tag}:off")
                continue
            a = acts.get(str(v["id"]))
            act = "" if a is None else f" {Action(a).name}"
            parts.append(f"{tag}:({v['x']:.1f},{v['y']:.1f}) {v['speed']:.1f}km/h{act}")
        flag = " COLLISION" if rec["collision_pairs"] else ""
        lines.append(f"step {rec['step']:3d} t={rec['time']:6.2f}s r={rec['shared_reward']:+.3f} "
                     + " | ".join(parts) + flag)
    return lines


def _bounds(records, occluders, margin=5.0):
    xs, ys = [], []
    for rec in records:
        for v in rec["vehicles"]:
            xs.append(v["x"])
            ys.append(v["y"])
    for poly in occluders:
        for x, y in poly:
            xs.append(x)
            ys.append(y)
    return min(xs) - margin, min(ys) - margin, max(xs) + margin, max(ys) + margin


def _rect(v) -> str:
    c, s = math.cos(v["heading"]), math.sin(v["heading"])
    hl, hw = v["length"] / 2, v["width"] / 2
    pts = [(v["x"] + c * dx - s * dy, v["y"] + s * dx + c * dy) for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw))]
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)


def render_svg(record: dict, occluders, bounds, scale: float = 4.0) -> str:
    """Bird's-eye view of one step; y points up as in the world frame."""
    x0, y0, x1, y1 = bounds
    w, h = (x1 - x0) * scale, (y1 - y0) * scale
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
           f'viewBox="{x0:.2f} {-y1:.2f} {x1 - x0:.2f} {y1 - y0:.2f}">',
           '<g transform="scale(1,-1)">']
    for poly in occluders:
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in poly)
        out.append(f'<polygon points="{pts}" fill="{OCCLUDER_COLOUR}" fill-opacity="0.5"/>')
    for v in record["vehicles"]:
        if not v["active"]:
            continue
        colour = CAV_COLOUR if v["cav"] else TRAFFIC_COLOUR
        out.append(f'<polygon points="{_rect(v)}" fill="{colour}"/>')
    out.append("</g>")
    label = f"step {record['step']} t={record['time']:.2f}s"
    if record["collision_pairs"]:
        label += " collision"
    out.append(f'<text x="{x0 + 1:.2f}" y="{-y1 + 4:.2f}" font-size="3">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def replay(trace_path, fmt: str = "text", out_dir=None, step: int | None = None) -> list:
    """Render a trace; text returns lines, SVG writes ``step_XXXX.svg`` files and returns their paths."""
    records = read_trace(trace_path)
    if not records:
        raise ValueError(f"{trace_path}: empty trace")
    if step is not None:
        chosen = [r for r in records if r["step"] == step]
        if not chosen:
            raise ValueError(f"{trace_path}: no step {step} (last is {records[-1]['step']})")
    else:
        chosen = records
    if fmt == "text":
        return render_text(chosen)
    if fmt != "svg":
        raise ValueError(f"unknown format {fmt!r}")
    occluders = records[0].get("occluders") or []
    bounds = _bounds(records, occluders)
    out_dir = Path(out_dir if out_dir is not None else Path(trace_path).with_suffix(""))
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in chosen:
        p = out_dir / f"step_{rec['step']:04d}.svg"
        p.write_text(render_svg(rec, occluders, bounds))
        paths.append(p)
    return paths
