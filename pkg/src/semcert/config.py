"""Pipeline configuration: one JSON document, every field overridable by a dotted flag."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError


@dataclass
class Paths:
    corpus: Optional[str] = None
    queries: Optional[str] = None
    qrels: Optional[str] = None
    codebook: Optional[str] = None
    run: Optional[str] = None
    instance: Optional[str] = None


@dataclass
class PQSection:
    num_subspaces: Optional[int] = None  # None: D/8 snapped to a divisor of D
    centroids_per_subspace: int = 256
    kmeans_iters: int = 25
    train_sample: Optional[int] = None


@dataclass
class ScoringSection:
    k: int = 10
    eps: float = 1e-6
    sigma_mode: str = "global"
    combiner: str = "harmonic"
    alpha: float = 0.6
    beta: float = 0.4
    calibration_size: int = 500


@dataclass
class SearchSection:
    mode: str = "exact"  # exact | adc
    k: Optional[int] = None  # None: scoring.k
    tag: str = "semcert"


@dataclass
class MonitorSection:
    threshold: float = 0.5
    combiner: str = "linear"
    alpha: float = 0.6
    beta: float = 0.4
    policy: str = "expand-k"
    expand_factor: int = 3
    expand_cap: int = 100
    window: int = 100
    max_alert_rate: Optional[float] = None


@dataclass
class SimulationSection:
    num_wells: int = 30
    docs_per_well: int = 200
    queries_per_well: int = 20
    dim: int = 64
    variance_bands: list = field(default_factory=lambda: [0.05, 0.25, 1.0])
    separation: float = 8.0
    spread: Optional[float] = None


@dataclass
class EvalSection:
    resamples: int = 1000
    expand_factor: int = 3
    gate_fraction: float = 0.3
    timings: bool = False
    repetitions: int = 3


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    pq: PQSection = field(default_factory=PQSection)
    scoring: ScoringSection = field(default_factory=ScoringSection)
    search: SearchSection = field(default_factory=SearchSection)
    monitor: MonitorSection = field(default_factory=MonitorSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ConfigError("must be an unsigned 64-bit integer", "seed")
        s = self.scoring
        if s.k < 1:
            raise ConfigError("must be a positive integer", "scoring.k")
        if not s.eps > 0:
            raise ConfigError("must be positive", "scoring.eps")
        if s.sigma_mode not in ("global", "local"):
            raise ConfigError("must be 'global' or 'local'", "scoring.sigma_mode")
        for name, comb in (("scoring.combiner", s.combiner), ("monitor.combiner", self.monitor.combiner)):
            if comb not in ("harmonic", "linear", "product"):
                raise ConfigError("must be harmonic, linear or product", name)
        if s.combiner == "linear" and abs(s.alpha + s.beta - 1) > 1e-9:
            raise ConfigError("alpha + beta must equal 1", "scoring.alpha")
        if self.pq.num_subspaces is not None and self.pq.num_subspaces < 1:
            raise ConfigError("must be a positive integer", "pq.num_subspaces")
        if self.pq.centroids_per_subspace < 2:
            raise ConfigError("must be at least 2", "pq.centroids_per_subspace")
        if self.search.mode not in ("exact", "adc"):
            raise ConfigError("must be 'exact' or 'adc'", "search.mode")
        if self.eval.resamples < 100:
            raise ConfigError("must be at least 100", "eval.resamples")
        if not 0 <= self.eval.gate_fraction <= 1:
            raise ConfigError("must lie in [0, 1]", "eval.gate_fraction")
        m = self.monitor
        if not 0 <= m.threshold < 1:
            raise ConfigError("must lie in [0, 1)", "monitor.threshold")
        if m.max_alert_rate is not None and not 0 <= m.max_alert_rate <= 1:
            raise ConfigError("must lie in [0, 1]", "monitor.max_alert_rate")


def _field_map(cls):
    return {f.name: f for f in dataclasses.fields(cls)}


def _coerce(value, tp, name):
    hints_origin = typing.get_origin(tp)
    if hints_origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None or (isinstance(value, str) and value.lower() in ("none", "null")):
            return None
        return _coerce(value, args[0], name)
    try:
        if tp is bool:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes"):
                    return True
                if value.lower() in ("0", "false", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if tp is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if tp is float:
            return float(value)
        if tp is str:
            return str(value)
        if tp is list:
            if isinstance(value, str):
                value = json.loads(value) if value.startswith("[") else [float(v) for v in value.split(",")]
            return [float(v) for v in value]
    except (TypeError, ValueError, json.JSONDecodeError):
        raise ConfigError(f"cannot interpret {value!r} as {getattr(tp, '__name__', tp)}", name) from None
    return value


def _types(cls):
    return typing.get_type_hints(cls)


def from_dict(data: dict) -> PipelineConfig:
    cfg = PipelineConfig()
    for key, value in data.items():
        if key not in _field_map(PipelineConfig):
            raise ConfigError("unknown config field", key)
        if dataclasses.is_dataclass(getattr(cfg, key)):
            if not isinstance(value, dict):
                raise ConfigError("expected an object", key)
            for sub, v in value.items():
                set_field(cfg, f"{key}.{sub}", v)
        else:
            set_field(cfg, key, value)
    return cfg


def set_field(cfg: PipelineConfig, dotted: str, value) -> None:
    parts = dotted.split(".")
    target = cfg
    for part in parts[:-1]:
        if part not in _field_map(type(target)) or not dataclasses.is_dataclass(getattr(target, part)):
            raise ConfigError("unknown config field", dotted)
        target = getattr(target, part)
    leaf = parts[-1]
    if leaf not in _field_map(type(target)) or dataclasses.is_dataclass(getattr(target, leaf)):
        raise ConfigError("unknown config field", dotted)
    setattr(target, leaf, _coerce(value, _types(type(target))[leaf], dotted))


def load_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found", "config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", "config") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", "config")
    return from_dict(data)
