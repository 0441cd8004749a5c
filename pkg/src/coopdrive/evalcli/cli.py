"""Command-line driver: train, eval, sweep, bandwidth, replay.

Outputs go under ``--out`` or, when omitted, under ``$COOPDRIVE_OUTPUT_ROOT``
(default ``./runs``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .. import comms as C
from .. import world as W
from ..baselines import parse_variant
from ..gradkit import ContractError, NumericError
from ..gradkit.checkpoint import CheckpointError
from ..mappo import TrainingAborted, load_policy, train
from ..mappo.alloc import tune_allocator
from .config import ConfigError, RunConfig, load_config, parse_config
from .metrics import evaluate, write_metrics_csv
from .replay import replay
from .sweep import SweepSpec, dropout_sweep

OUTPUT_ROOT_ENV = "COOPDRIVE_OUTPUT_ROOT"

log = logging.getLogger("coopdrive")


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config({})
    if getattr(args, "scenario", None):
        doc = {"name": args.scenario} if not args.scenario.endswith(".json") else {"path": args.scenario}
        if "max_steps" in cfg.scenario_doc:
            doc["max_steps"] = cfg.scenario_doc["max_steps"]
        cfg = parse_config(dict(cfg.to_dict(), scenario=doc))
    return cfg


def _rates(text: str) -> tuple:
    if not text.strip():
        return ()
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate list {text!r}") from None


# ------------------------------------------------------------------ commands
def cmd_train(args) -> int:
    cfg = _run_config(args)
    overrides = {k: v for k, v in (("variant", args.variant), ("episodes", args.episodes), ("seed", args.seed))
                 if v is not None}
    if overrides.get("variant", "").lower() == "ttc":
        raise ConfigError("train.variant: the TTC baseline is rule-based and has nothing to train")
    if overrides:
        doc = cfg.to_dict()
        doc["train"].update(overrides)
        cfg = parse_config(doc)
    parse_variant(cfg.train.variant)
    out = Path(args.out) if args.out else output_root() / f"train-{cfg.train.variant}-seed{cfg.train.seed}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    try:
        res = train(cfg.train, cfg.scenario, out, cfg.sensing())
    except TrainingAborted as exc:
        print(f"error: training aborted: {exc}", file=sys.stderr)
        return 1
    print(f"trained {len(res.rows)} episodes in {res.updates} updates ({res.wall_time:.1f} s)")
    print(f"learning curve: {out / 'learning_curve.csv'}")
    print(f"checkpoint: {res.checkpoints[-1]}")
    if args.eval:
        m = evaluate(res.policy, cfg.scenario, cfg.eval.episodes, cfg.eval.seed, cfg.sensing(),
                     workers=cfg.eval.workers)
        write_metrics_csv([m], out / "metrics.csv")
        print(m.line())
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    episodes = cfg.eval.episodes if args.episodes is None else args.episodes
    seed = cfg.eval.seed if args.seed is None else args.seed
    if episodes < 1:
        raise ConfigError(f"--episodes: must be >= 1, got {episodes}")
    dropout = cfg.comms.dropout if args.dropout is None else args.dropout
    if not 0.0 <= dropout <= 1.0:
        raise ConfigError(f"--dropout: must lie in [0, 1], got {dropout}")
    policy = "ttc" if args.checkpoint.lower() == "ttc" else load_policy(args.checkpoint)
    label = "TTC" if policy == "ttc" else policy.variant.value
    out = Path(args.out) if args.out else output_root() / f"eval-{label}-seed{seed}"
    sensing = cfg.sensing(dropout)
    if policy != "ttc":
        sensing = replace(sensing, aggregation=policy.aggregation)
    ledger = None
    if policy != "ttc" and policy.variant.shares_features:
        ledger = C.BandwidthLedger(sensing.channel, cfg.comms.protocol)
    trace_dir = out / "traces" if (args.traces or cfg.eval.traces) else None
    m = evaluate(policy, cfg.scenario, episodes, seed, sensing, workers=cfg.eval.workers, trace_dir=trace_dir,
                 ledger=ledger)
    write_metrics_csv([m], out / "metrics.csv")
    if ledger is not None:
        ledger.write_csv(out / "bandwidth_ledger.csv")
    print(m.line())
    print(f"metrics: {out / 'metrics.csv'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _run_config(args)
    spec = SweepSpec(args.checkpoint, cfg.eval.dropout_rates if args.rates is None else args.rates,
                     cfg.eval.episodes if args.episodes is None else args.episodes,
                     cfg.eval.seed if args.seed is None else args.seed, cfg.eval.workers)
    out = Path(args.out) if args.out else output_root() / "sweep"
    policy = load_policy(spec.checkpoint) if spec.dropout_rates else None
    rows = dropout_sweep(spec, cfg.scenario, policy, cfg.sensing(0.0), out / "dropout_sweep.csv")
    for m in rows:
        print(f"dropout {m.dropout:.2f}: {m.line()}")
    print(f"sweep: {out / 'dropout_sweep.csv'} ({len(rows)} rows)")
    return 0


def cmd_bandwidth(args) -> int:
    fps = 20.0
    if args.config:
        fps = load_config(args.config).comms.fps
    channel = C.ChannelModel(fps=fps)
    rows = C.bandwidth_report(channel)
    if args.preset != "all":
        rows = [r for r in rows if r["preset"] == args.preset]
    for r in rows:
        verdicts = "  ".join(f"{p} ({b:g} Mbps) {'pass' if r[p] else 'FAIL'}" for p, b in channel.protocol_budgets.items())
        print(f"{r['preset']}: {r['bytes_per_frame']:g} bytes/frame x {r['fps']:g} fps = {r['mbps']:.4f} Mbps  "
              f"{verdicts}  [{r['note']}]")
    return 0


def cmd_replay(args) -> int:
    result = replay(args.trace, args.format, args.out, args.step)
    if args.format == "text":
        print("\n".join(result))
    else:
        print(f"wrote {len(result)} SVG files to {Path(result[0]).parent}")
    return 0


# -------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopdrive", description="Collaborative MAPPO for occluded driving")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a learned policy")
    t.add_argument("--config", help="run config JSON (or a bundled name such as smoke)")
    t.add_argument("--scenario", help="bundled scenario name or scenario JSON path")
    t.add_argument("--variant", help="Collaborative, GroundTruth, EarlyFusion or Independent")
    t.add_argument("--episodes", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory")
    t.add_argument("--eval", action="store_true", help="evaluate the final policy with the config's eval section")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="greedy evaluation of a checkpoint (or 'ttc')")
    e.add_argument("--checkpoint", required=True, help="checkpoint file or directory, or 'ttc'")
    e.add_argument("--config")
    e.add_argument("--scenario")
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--dropout", type=float)
    e.add_argument("--traces", action="store_true", help="write traces/episode_*.jsonl")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="dropout resilience sweep")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config")
    s.add_argument("--scenario")
    s.add_argument("--rates", type=_rates, help="comma-separated dropout rates, e.g. 0,0.1,0.2")
    s.add_argument("--episodes", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bandwidth", help="message bandwidth against protocol budgets")
    b.add_argument("--preset", default="all", choices=["all", "paper-scale", "paper-scale-8bit-codec", "desk-scale"])
    b.add_argument("--config")
    b.set_defaults(func=cmd_bandwidth)

    r = sub.add_parser("replay", help="render an episode trace")
    r.add_argument("trace")
    r.add_argument("--format", choices=["text", "svg"], default="text")
    r.add_argument("--step", type=int)
    r.add_argument("--out", help="SVG output directory")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    tune_allocator()
    try:
        return args.func(args)
    except (ConfigError, ContractError, CheckpointError, NumericError, W.ConfigError, ValueError,
            FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
