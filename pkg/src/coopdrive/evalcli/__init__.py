"""Evaluation metrics, dropout sweep, run configuration and the command-line interface."""
from .config import CommsConfig, ConfigError, EvalConfig, RunConfig, load_config, parse_config
from .metrics import EvalMetrics, evaluate, summarize, write_metrics_csv, write_traces
from .replay import render_svg, render_text, replay
from .sweep import DEFAULT_RATES, SweepSpec, dropout_sweep

__all__ = [
    "CommsConfig", "ConfigError", "DEFAULT_RATES", "EvalConfig", "EvalMetrics", "RunConfig", "SweepSpec",
    "dropout_sweep", "evaluate", "load_config", "parse_config", "render_svg", "render_text", "replay", "summarize",
    "write_metrics_csv", "write_traces",
]
