"""Run configuration: one JSON document with ``scenario``, ``train``, ``comms`` and ``eval`` sections."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .. import comms as C
from .. import world as W
from ..baselines import SensingConfig
from ..gradkit import ContractError
from ..mappo import TrainConfig

SECTIONS = ("scenario", "train", "comms", "eval")


class ConfigError(ValueError):
    """Invalid run configuration; the message starts with the offending field path."""


@dataclass(frozen=True)
class CommsConfig:
    comm_range: float = 70.0
    fps: float = 20.0
    dropout: float = 0.0
    protocol: str = "DSRC"


@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 100
    seed: int = 1
    workers: int = 8
    dropout_rates: tuple = (0.0, 0.1, 0.2, 0.3, 0.4)
    traces: bool = False


@dataclass
class RunConfig:
    scenario: W.ScenarioConfig
    scenario_doc: dict
    train: TrainConfig = field(default_factory=TrainConfig)
    comms: CommsConfig = field(default_factory=CommsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def sensing(self, dropout: float | None = None) -> SensingConfig:
        channel = C.ChannelModel(comm_range=self.comms.comm_range, fps=self.comms.fps)
        return SensingConfig(channel=channel, aggregation=self.train.aggregation,
                             dropout=self.comms.dropout if dropout is None else dropout)

    def to_dict(self) -> dict:
        return {"scenario": dict(self.scenario_doc), "train": self.train.to_dict(),
                "comms": {f.name: getattr(self.comms, f.name) for f in fields(CommsConfig)},
                "eval": {f.name: (list(v) if isinstance(v := getattr(self.eval, f.name), tuple) else v)
                         for f in fields(EvalConfig)}}


def _section(cls, doc, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object, got {type(doc).__name__}")
    known = {f.name: f for f in fields(cls)}
    for k in doc:
        if k not in known:
            raise ConfigError(f"{path}.{k}: unknown key")
    out = {}
    for k, v in doc.items():
        default = known[k].default
        if isinstance(default, bool):
            ok = isinstance(v, bool)
        elif isinstance(default, (int, float)):
            ok = isinstance(v, (int, float)) and not isinstance(v, bool)
            if ok and isinstance(default, int) and not isinstance(default, bool) and float(v) != int(v):
                ok = False
        elif isinstance(default, str):
            ok = isinstance(v, str)
        elif isinstance(default, tuple):
            ok = isinstance(v, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)
            v = tuple(v) if ok else v
        else:
            ok = True
        if not ok:
            raise ConfigError(f"{path}.{k}: bad value {v!r}")
        out[k] = v
    return cls(**out)


def _scenario(doc, base: Path | None) -> tuple[W.ScenarioConfig, dict]:
    if not isinstance(doc, dict):
        raise ConfigError("scenario: expected an object")
    extra = set(doc) - {"name", "path", "max_steps"}
    if extra:
        raise ConfigError(f"scenario.{sorted(extra)[0]}: unknown key")
    if ("name" in doc) == ("path" in doc):
        raise ConfigError("scenario: give exactly one of name or path")
    try:
        if "name" in doc:
            cfg = W.bundled(doc["name"])
        else:
            p = Path(doc["path"])
            if base is not None and not p.is_absolute():
                p = base / p
            cfg = W.load(p)
    except (W.ConfigError, FileNotFoundError, KeyError) as exc:
        raise ConfigError(f"scenario: {exc}") from None
    if "max_steps" in doc:
        ms = doc["max_steps"]
        if not isinstance(ms, int) or isinstance(ms, bool) or ms < 1:
            raise ConfigError(f"scenario.max_steps: must be a positive integer, got {ms!r}")
        cfg = replace(cfg, max_steps=ms)
    return cfg, dict(doc)


def parse_config(doc: dict, base: Path | None = None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    for k in doc:
        if k not in SECTIONS:
            raise ConfigError(f"{k}: unknown section (expected {', '.join(SECTIONS)})")
    scenario, scenario_doc = _scenario(doc.get("scenario", {"name": "occluded_intersection"}), base)
    train_doc = doc.get("train", {})
    if not isinstance(train_doc, dict):
        raise ConfigError("train: expected an object")
    try:
        train = TrainConfig.from_dict(train_doc)
    except ContractError as exc:
        msg = str(exc)
        raise ConfigError(msg if msg.startswith("train") else f"train: {msg}") from None
    except TypeError as exc:
        raise ConfigError(f"train: {exc}") from None
    comms = _section(CommsConfig, doc.get("comms", {}), "comms")
    if comms.comm_range < 0:
        raise ConfigError(f"comms.comm_range: must be >= 0, got {comms.comm_range}")
    if comms.fps <= 0:
        raise ConfigError(f"comms.fps: must be > 0, got {comms.fps}")
    if not 0.0 <= comms.dropout <= 1.0:
        raise ConfigError(f"comms.dropout: must lie in [0, 1], got {comms.dropout}")
    channel = C.ChannelModel(comm_range=comms.comm_range, fps=comms.fps)
    if comms.protocol not in channel.protocol_budgets:
        raise ConfigError(f"comms.protocol: unknown protocol {comms.protocol!r}")
    if train.feature_scale == "desk":
        try:
            C.check_desk_budget(C.DESK_FEATURE_EXTENTS, channel, comms.protocol)
        except ValueError as exc:
            raise ConfigError(f"comms.fps: {exc}") from None
    ev = _section(EvalConfig, doc.get("eval", {}), "eval")
    if ev.episodes < 1:
        raise ConfigError(f"eval.episodes: must be >= 1, got {ev.episodes}")
    if ev.workers < 1:
        raise ConfigError(f"eval.workers: must be >= 1, got {ev.workers}")
    return RunConfig(scenario, scenario_doc, train, comms, ev)


def load_config(path) -> RunConfig:
    """Read a run config from a path; bare names resolve to bundled configs (``smoke``)."""
    p = Path(str(path))
    if not p.exists():
        bundled = resources.files("coopdrive") / "configs" / (p.name if p.suffix else f"{p.name}.json")
        if bundled.is_file():
            p = bundled
    try:
        doc = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return parse_config(doc, Path(str(p)).parent)
