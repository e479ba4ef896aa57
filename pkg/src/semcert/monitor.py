"""Streaming quality monitor with threshold alerts and K-expansion.

Each query is scored, an alert fires when the combined score is strictly
below the threshold, and alerted queries may be re-retrieved with a larger
K. Rolling statistics are updated in stream order, so replaying a stream
reproduces the same events and summary.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .certainty import CertaintyScore, Scorer, combine
from .errors import ConfigError, EmptyInputError, StateError
from .index import NeighborList


@dataclass(frozen=True)
class MonitorConfig:
    threshold: float = 0.5
    combiner: str = "linear"
    alpha: float = 0.6
    beta: float = 0.4
    policy: str = "expand-k"  # none | expand-k
    expand_factor: int = 3
    expand_cap: int = 100
    window: int = 100

    def validate(self, base_k: Optional[int] = None) -> None:
        if not 0 <= self.threshold < 1:
            raise ConfigError("must lie in [0, 1)", "threshold")
        if self.policy not in ("none", "expand-k"):
            raise ConfigError(f"unknown policy {self.policy!r}", "policy")
        if self.policy == "expand-k":
            if self.expand_factor < 2:
                raise ConfigError("must be at least 2", "expand_factor")
            if base_k is not None and self.expand_cap < base_k:
                raise ConfigError(f"must be at least the base K ({base_k})", "expand_cap")
        if self.window < 1:
            raise ConfigError("must be a positive integer", "window")
        if self.combiner == "linear" and not math.isclose(self.alpha + self.beta, 1.0):
            raise ConfigError("alpha + beta must equal 1 for the linear combiner", "alpha")


@dataclass(frozen=True)
class MonitorEvent:
    query_id: str
    score: CertaintyScore
    alert: bool
    action: str
    expanded_k: Optional[int]
    window_mean: float
    window_alert_rate: float

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "combined": self.score.combined,
            "alert": self.alert,
            "action": self.action if self.expanded_k is None else f"{self.action}({self.expanded_k})",
            "window_mean": self.window_mean,
            "window_alert_rate": self.window_alert_rate,
        }


class QualityMonitor:
    """Single-consumer monitor over an ordered query stream.

    Create with a config, then :meth:`attach` a calibrated scorer before
    feeding queries.
    """

    def __init__(self, config: MonitorConfig = MonitorConfig(), scorer: Optional[Scorer] = None):
        self.config = config
        self.scorer = None
        self._combined = []
        self._alerts = []
        self._window = deque(maxlen=config.window)
        if scorer is not None:
            self.attach(scorer)

    def attach(self, scorer: Scorer) -> None:
        self.config.validate(scorer.params.k)
        self.scorer = scorer

    def reset(self) -> None:
        self._combined.clear()
        self._alerts.clear()
        self._window.clear()

    def process_query(self, q, query_id: str = "q"):
        """Score one query; returns (event, neighbor list actually served)."""
        if self.scorer is None:
            raise StateError("monitor has no scorer attached")
        cfg = self.config
        base_k = self.scorer.params.k
        neighbors = self.scorer.neighbors(q)
        raw = self.scorer.score(q, query_id, neighbors=neighbors)
        c = combine(raw.stability, raw.norm_density, cfg.combiner, cfg.alpha, cfg.beta)
        p = raw.params
        score = CertaintyScore(raw.query_id, raw.stability, raw.raw_density, raw.norm_density, c,
                               cfg.combiner, type(p)(cfg.alpha, cfg.beta, p.eps, p.k))
        alert = c < cfg.threshold
        action, expanded_k, served = "none", None, neighbors
        if alert and cfg.policy == "expand-k":
            expanded_k = min(cfg.expand_factor * base_k, cfg.expand_cap)
            served = self.scorer.index.search_exact(q, expanded_k)
            action = "expanded-K"
        self._combined.append(c)
        self._alerts.append(alert)
        self._window.append((c, alert))
        wc = [x for x, _ in self._window]
        event = MonitorEvent(score.query_id, score, alert, action, expanded_k,
                             float(np.mean(wc)), sum(a for _, a in self._window) / len(self._window))
        return event, served

    def drain_stats(self) -> dict:
        """Totals, alert rate, score range and the tumbling-window series."""
        if not self._combined:
            raise EmptyInputError("no queries processed")
        c = np.array(self._combined)
        a = np.array(self._alerts)
        w = self.config.window
        windows = [{"start": i, "end": min(i + w, c.size), "mean_combined": float(c[i:i + w].mean()),
                    "alert_rate": float(a[i:i + w].mean())} for i in range(0, c.size, w)]
        return {
            "queries": int(c.size),
            "alerts": int(a.sum()),
            "alert_rate": float(a.mean()),
            "mean_combined": float(c.mean()),
            "min_combined": float(c.min()),
            "max_combined": float(c.max()),
            "threshold": self.config.threshold,
            "windows": windows,
        }


def process_query(monitor: QualityMonitor, q, query_id: str = "q"):
    return monitor.process_query(q, query_id)


def drain_stats(monitor: QualityMonitor) -> dict:
    return monitor.drain_stats()
