"""Desk-scale comparison on the occluded intersection.

Trains the Collaborative, Independent and GroundTruth variants with the
settings in experiments/desk_occluded/train_config.json, then evaluates them
greedily against the TTC rule and runs a message dropout sweep on the
Collaborative checkpoint. Training takes roughly an hour per variant on one
core; pass --eval-only to reuse stored checkpoints.

    python3 demos/desk_experiment.py [--eval-only] [--variants V ...]
"""
import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path

from coopdrive import world as W
from coopdrive.evalcli import SweepSpec, dropout_sweep, evaluate
from coopdrive.mappo import TrainConfig, load_policy, train

EXPERIMENT = Path(__file__).resolve().parents[1] / "experiments" / "desk_occluded"
VARIANTS = ("Collaborative", "Independent", "GroundTruth")


def train_variant(variant: str, scenario) -> None:
    cfg = TrainConfig(**json.loads((EXPERIMENT / "train_config.json").read_text()))
    res = train(replace(cfg, variant=variant), scenario, EXPERIMENT / variant)
    summary = {"variant": variant, "episodes": len(res.rows), "wall_time_s": round(res.wall_time, 1)}
    (EXPERIMENT / variant / "train_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"trained {variant}: {summary}")


def main(argv=None) -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--eval-only", action="store_true")
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=VARIANTS)
    ap.add_argument("--episodes", type=int, default=100)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    scenario = W.bundled("occluded_intersection")
    if not args.eval_only:
        for v in args.variants:
            train_variant(v, scenario)

    results = {"TTC": evaluate("ttc", scenario, args.episodes, args.seed)}
    for v in args.variants:
        results[v] = evaluate(load_policy(EXPERIMENT / v / "checkpoints"), scenario, args.episodes, args.seed)
    for name, m in results.items():
        print(f"{name:14s} collisions {m.collision_rate:5.1f}%  success {m.success_rate:5.1f}%  reward {m.avg_reward:6.2f}")

    if "Collaborative" in args.variants:
        spec = SweepSpec(str(EXPERIMENT / "Collaborative" / "checkpoints"), (0.0, 0.2, 0.4), args.episodes, args.seed)
        for p, m in zip(spec.dropout_rates, dropout_sweep(spec, scenario)):
            print(f"dropout {p:.1f}: success {m.success_rate:5.1f}%  collisions {m.collision_rate:5.1f}%")


if __name__ == "__main__":
    main()
