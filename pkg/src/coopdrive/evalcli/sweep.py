"""LiDAR dropout resilience sweep."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from ..baselines import SensingConfig
from ..gradkit import ContractError
from ..mappo import load_policy
from .metrics import EvalMetrics, evaluate, write_metrics_csv

DEFAULT_RATES = (0.0, 0.1, 0.2, 0.3, 0.4)


@dataclass(frozen=True)
class SweepSpec:
    checkpoint: str | None = None
    dropout_rates: tuple = DEFAULT_RATES
    episodes: int = 100
    seed: int = 1
    workers: int = 8

    def __post_init__(self):
        rates = tuple(float(r) for r in self.dropout_rates)
        object.__setattr__(self, "dropout_rates", rates)
        for r in rates:
            if not 0.0 <= r <= 1.0:
                raise ContractError(f"dropout_rates: {r} outside [0, 1]")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ContractError(f"dropout_rates must be strictly increasing, got {list(rates)}")
        if self.episodes < 1:
            raise ContractError(f"episodes must be >= 1, got {self.episodes}")


def dropout_sweep(spec: SweepSpec, scenario, policy=None, sensing: SensingConfig | None = None,
                  out_csv=None) -> list[EvalMetrics]:
    """Evaluate the same test episodes at every dropout rate; one row per rate."""
    if not spec.dropout_rates:
        rows = []
    else:
        if policy is None:
            if spec.checkpoint is None:
                raise ContractError("sweep needs a checkpoint or a policy")
            policy = load_policy(Path(spec.checkpoint))
        base = sensing or SensingConfig(aggregation=getattr(policy, "aggregation", "max"))
        rows = [evaluate(policy, scenario, spec.episodes, spec.seed, replace(base, dropout=rate), workers=spec.workers)
                for rate in spec.dropout_rates]
    if out_csv is not None:
        write_metrics_csv(rows, out_csv)
    return rows
