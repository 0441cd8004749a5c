"""Greedy evaluation and the episode-level metrics table."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..baselines import SensingConfig, TtcController, TtcParams
from ..comms import BandwidthLedger
from ..gradkit import ContractError
from ..mappo import EpisodeResult, run_episodes
from ..world import TraceWriter

EVAL_STREAMS = ("eval_env", "eval_dropout")


@dataclass(frozen=True)
class EvalMetrics:
    variant: str
    n_episodes: int
    avg_reward: float
    avg_reward_std: float
    avg_speed: float  # km/h, CAVs only
    avg_speed_std: float
    collision_rate: float  # % of episodes
    success_rate: float
    timeout_rate: float
    dropout: float = 0.0

    FIELDS = ("variant", "dropout", "n_episodes", "avg_reward", "avg_reward_std", "avg_speed", "avg_speed_std",
              "collision_rate", "success_rate", "timeout_rate")

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}

    def line(self) -> str:
        return (f"{self.variant}: reward {self.avg_reward:.2f} +- {self.avg_reward_std:.2f}, "
                f"speed {self.avg_speed:.2f} +- {self.avg_speed_std:.2f} km/h, collision {self.collision_rate:.1f}%, "
                f"success {self.success_rate:.1f}%, timeout {self.timeout_rate:.1f}% (n={self.n_episodes})")


def summarize(results: list[EpisodeResult], variant: str, dropout: float = 0.0) -> EvalMetrics:
    """Fold episode results (sorted by index, so worker order never matters) into the table row."""
    if not results:
        raise ContractError("no episodes to summarise")
    results = sorted(results, key=lambda r: r.index)
    reward = np.array([r.total_reward for r in results], dtype=np.float64)
    speed = np.array([r.avg_speed for r in results], dtype=np.float64)
    outcome = [r.outcome for r in results]
    n = len(results)

    def pct(name):
        return 100.0 * sum(o == name for o in outcome) / n

    return EvalMetrics(str(variant), n, float(reward.mean()), float(reward.std()), float(speed.mean()),
                       float(speed.std()), pct("collision"), pct("success"), pct("timeout"), float(dropout))


def make_controller(policy, scenario):
    """``"ttc"`` (any case) selects the rule-based controller; other objects are learned policies or
    anything with ``act(world)`` (labelled by ``name`` or the class name)."""
    if isinstance(policy, str):
        if policy.lower() != "ttc":
            raise ContractError(f"unknown policy {policy!r}")
        return TtcController(scenario, TtcParams()), "TTC"
    if isinstance(policy, TtcController):
        return policy, "TTC"
    if hasattr(policy, "actor"):
        return policy, policy.variant.value
    return policy, getattr(policy, "name", type(policy).__name__)


def evaluate(policy, scenario, n_episodes: int, seed: int, sensing: SensingConfig | None = None, *,
             workers: int = 8, trace_dir=None, ledger: BandwidthLedger | None = None) -> EvalMetrics:
    """Greedy (argmax) evaluation on ``n_episodes`` fresh test episodes.

    ``policy`` is an ActorCritic, a TtcController or ``"ttc"``. Episodes use
    the evaluation seed streams, so they never coincide with training episodes.
    """
    if n_episodes < 1:
        raise ContractError(f"episodes must be >= 1, got {n_episodes}")
    controller, label = make_controller(policy, scenario)
    sensing = sensing or SensingConfig(aggregation=getattr(controller, "aggregation", "max"))
    results = []
    indices = list(range(n_episodes))
    for k in range(0, n_episodes, workers):
        chunk = indices[k:k + workers]
        traces = {} if trace_dir is not None else None
        results += run_episodes(controller, scenario, chunk, seed, sensing, greedy=True, ledger=ledger,
                                traces=traces, streams=EVAL_STREAMS)
        if traces:
            write_traces(traces, trace_dir)
    return summarize(results, label, sensing.dropout)


def write_traces(traces: dict, trace_dir) -> list[Path]:
    out = []
    for idx in sorted(traces):
        path = Path(trace_dir) / f"episode_{idx:05d}.jsonl"
        if path.exists():
            path.unlink()  # re-runs replace the file rather than appending a second episode
        with TraceWriter(path) as tw:
            for res, acts in traces[idx]:
                tw.write(res, acts)
        out.append(path)
    return out


def fmt(x) -> str:
    return f"{x:.10g}" if isinstance(x, float) else str(x)


def write_metrics_csv(rows: list[EvalMetrics], path) -> Path:
    """Write (or overwrite) a metrics table; same rows give the same bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(EvalMetrics.FIELDS)
        for m in rows:
            wr.writerow([fmt(v) for v in m.row().values()])
    return path
