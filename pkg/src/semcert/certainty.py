"""Per-query certainty scoring from quantization stability and neighborhood density.

The stability term is ``exp(-||e - R(Q(e))||^2 / (2 sigma^2))``; the density
term is ``K / (sum of squared distances to the K nearest neighbors + eps)``.
Raw density is unbounded, so it is rank-normalized against a calibration
sample before being fused with stability by one of three combiners.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError, RangeError
from .index import Index, NeighborList
from .pq import PQCodebook, reconstruction_mse
from .vectors import EmbeddingSet

SIGMA_FLOOR = 1e-12
# smallest positive double; keeps exp(-x) inside (0, 1] for huge x
_TINY = float(np.nextafter(0.0, 1.0))

COMBINERS = ("harmonic", "linear", "product")
SIGMA_MODES = ("global", "local")


@dataclass(frozen=True)
class SigmaEstimate:
    mode: str
    value: float

    def __post_init__(self):
        if self.mode not in SIGMA_MODES:
            raise ValueError(f"unknown sigma mode {self.mode!r}")
        if not (self.value > 0 and math.isfinite(self.value)):
            raise ValueError("sigma value must be positive and finite")


@dataclass(frozen=True)
class ScoreParams:
    alpha: float = 0.6
    beta: float = 0.4
    eps: float = 1e-6
    k: int = 10


@dataclass(frozen=True)
class CertaintyScore:
    query_id: str
    stability: float
    raw_density: float
    norm_density: float
    combined: float
    combiner: str
    params: ScoreParams = field(default_factory=ScoreParams)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "stability": self.stability,
            "raw_density": self.raw_density,
            "norm_density": self.norm_density,
            "combined": self.combined,
            "combiner": self.combiner,
            "params": asdict(self.params),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CertaintyScore":
        return cls(d["query_id"], d["stability"], d["raw_density"], d["norm_density"],
                   d["combined"], d["combiner"], ScoreParams(**d["params"]))


def _neighbor_distances(neighbors) -> np.ndarray:
    if isinstance(neighbors, NeighborList):
        return neighbors.distances
    return np.asarray(neighbors, dtype=np.float64)


def estimate_sigma(mode: str, calibration: Optional[EmbeddingSet] = None,
                   cb: Optional[PQCodebook] = None, neighbors=None) -> SigmaEstimate:
    """Scale of the stability kernel.

    ``global``: mean PQ reconstruction error over the calibration set.
    ``local``: mean squared distance to the query's neighbors.
    Both are floored at 1e-12.
    """
    if mode == "global":
        if calibration is None or len(calibration) == 0:
            raise EmptyInputError("global sigma needs a non-empty calibration set")
        value = reconstruction_mse(calibration, cb)
    elif mode == "local":
        d = _neighbor_distances(neighbors) if neighbors is not None else np.zeros(0)
        if d.size == 0:
            raise EmptyInputError("local sigma needs a non-empty neighbor list")
        value = float(np.mean(d))
    else:
        raise ValueError(f"unknown sigma mode {mode!r}")
    return SigmaEstimate(mode, max(value, SIGMA_FLOOR))


def _sigma_value(sigma) -> float:
    v = sigma.value if isinstance(sigma, SigmaEstimate) else float(sigma)
    if not v > 0:
        raise ValueError("sigma must be positive")
    return v


def stability_from_error(sq_error, sigma) -> np.ndarray | float:
    s = np.exp(-np.asarray(sq_error, dtype=np.float64) / (2.0 * _sigma_value(sigma)))
    s = np.maximum(s, _TINY)
    return float(s) if s.ndim == 0 else s


def stability_score(e, cb: PQCodebook, sigma) -> float:
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 1 or e.shape[0] != cb.dim:
        raise DimensionError(f"embedding dimension {e.shape} != codebook dimension {cb.dim}")
    return stability_from_error(cb.residuals(e[None, :])[0], sigma)


def density_score(neighbors, eps: float = 1e-6) -> float:
    d = _neighbor_distances(neighbors)
    if d.size == 0:
        raise EmptyInputError("density needs at least one neighbor")
    if not eps > 0:
        raise ValueError("eps must be positive")
    return d.size / (float(np.sum(d)) + eps)


def normalize_density(raw, calibration_raws) -> float | np.ndarray:
    """Empirical CDF of ``raw`` within the calibration values, floored at 1/(n+1)."""
    cal = np.sort(np.asarray(calibration_raws, dtype=np.float64))
    if cal.size == 0:
        raise EmptyInputError("density normalization needs calibration values")
    return _ecdf(raw, cal)


def _ecdf(raw, sorted_cal):
    n = sorted_cal.size
    counts = np.searchsorted(sorted_cal, raw, side="right")
    out = np.maximum(counts / n, 1.0 / (n + 1))
    return float(out) if np.ndim(out) == 0 else out


def combine(stability, density, combiner: str = "harmonic", alpha: float = 0.6, beta: float = 0.4):
    """Fuse a stability and a normalized density value, both in (0, 1]."""
    s = np.asarray(stability, dtype=np.float64)
    n = np.asarray(density, dtype=np.float64)
    if np.any(~(s > 0)) or np.any(s > 1) or np.any(~(n > 0)) or np.any(n > 1):
        raise RangeError("combiner inputs must lie in (0, 1]")
    if combiner == "harmonic":
        out = 2.0 * s * n / (s + n)
    elif combiner == "linear":
        if not (0 <= alpha <= 1 and 0 <= beta <= 1 and math.isclose(alpha + beta, 1.0)):
            raise RangeError("linear combiner needs alpha, beta in [0, 1] with alpha + beta = 1")
        out = alpha * s + beta * n
    elif combiner == "product":
        out = s * n
    else:
        raise ValueError(f"unknown combiner {combiner!r}")
    out = np.minimum(np.maximum(out, _TINY), 1.0)
    return float(out) if out.ndim == 0 else out


def recall_bound(score: float, K: int, D: int) -> float:
    """``1 - exp(-score * K / (2 D))``; a reported quantity, never a guarantee."""
    if K < 1 or D < 1:
        raise ValueError("K and D must be positive")
    return -math.expm1(-score * K / (2.0 * D))


class Scorer:
    """Calibrated scoring context: index, codebook, sigma and density reference.

    Build one with :meth:`calibrate`; afterwards scoring is pure and can run
    on any number of queries in any order.
    """

    def __init__(self, index: Index, codebook: PQCodebook, sigma: Optional[SigmaEstimate],
                 calibration_raws: Sequence[float], k: int = 10, eps: float = 1e-6,
                 sigma_mode: str = "global", combiner: str = "harmonic",
                 alpha: float = 0.6, beta: float = 0.4):
        if codebook.dim != index.dim:
            raise DimensionError(f"codebook dimension {codebook.dim} != index dimension {index.dim}")
        if combiner not in COMBINERS:
            raise ValueError(f"unknown combiner {combiner!r}")
        if sigma_mode not in SIGMA_MODES:
            raise ValueError(f"unknown sigma mode {sigma_mode!r}")
        if sigma_mode == "global" and sigma is None:
            raise ValueError("global sigma mode needs a sigma estimate")
        cal = np.sort(np.asarray(calibration_raws, dtype=np.float64))
        if cal.size == 0:
            raise EmptyInputError("density calibration is empty")
        self.index = index
        self.codebook = codebook
        self.sigma = sigma
        self.calibration_raws = cal
        self.sigma_mode = sigma_mode
        self.combiner = combiner
        self.params = ScoreParams(alpha=alpha, beta=beta, eps=eps, k=k)

    @classmethod
    def calibrate(cls, index: Index, codebook: PQCodebook, calibration: Optional[EmbeddingSet] = None,
                  *, k: int = 10, eps: float = 1e-6, sigma_mode: str = "global",
                  combiner: str = "harmonic", alpha: float = 0.6, beta: float = 0.4,
                  calibration_size: int = 500, seed: int = 0) -> "Scorer":
        """Fit sigma and the density reference.

        Without an explicit ``calibration`` set, a seeded sample of at most
        ``calibration_size`` corpus rows is used, each scored against the
        corpus with its own row excluded.
        """
        corpus = index.corpus
        if calibration is None:
            n = len(corpus)
            if n > calibration_size:
                rows = np.sort(np.random.default_rng(seed).choice(n, calibration_size, replace=False))
                calibration = corpus.subset(rows)
            else:
                calibration = corpus
        if len(calibration) == 0:
            raise EmptyInputError("calibration set is empty")
        sigma = estimate_sigma("global", calibration, codebook) if sigma_mode == "global" else None
        raws = []
        for cid, vec in zip(calibration.ids, calibration.vectors):
            nl = index.search_exact(vec, k, exclude_id=cid)
            if len(nl) == 0:
                continue
            raws.append(density_score(nl, eps))
        if not raws:
            raise EmptyInputError("calibration produced no neighbor lists")
        return cls(index, codebook, sigma, raws, k=k, eps=eps, sigma_mode=sigma_mode,
                   combiner=combiner, alpha=alpha, beta=beta)

    def with_combiner(self, combiner: str, alpha: Optional[float] = None, beta: Optional[float] = None) -> "Scorer":
        p = self.params
        return Scorer(self.index, self.codebook, self.sigma, self.calibration_raws, k=p.k, eps=p.eps,
                      sigma_mode=self.sigma_mode, combiner=combiner,
                      alpha=p.alpha if alpha is None else alpha, beta=p.beta if beta is None else beta)

    def neighbors(self, q, exclude_id: Optional[str] = None) -> NeighborList:
        return self.index.search_exact(q, self.params.k, exclude_id=exclude_id)

    def score(self, q, query_id: str = "q", neighbors: Optional[NeighborList] = None) -> CertaintyScore:
        q = np.asarray(q, dtype=np.float64)
        if neighbors is None:
            neighbors = self.neighbors(q)
        else:
            neighbors = neighbors.head(self.params.k)
        err = self.codebook.residuals(q[None, :])[0]
        sigma = self.sigma if self.sigma_mode == "global" else estimate_sigma("local", neighbors=neighbors)
        s = stability_from_error(err, sigma)
        raw = density_score(neighbors, self.params.eps)
        nd = _ecdf(raw, self.calibration_raws)
        p = self.params
        c = combine(s, nd, self.combiner, p.alpha, p.beta)
        return CertaintyScore(str(query_id), s, raw, nd, c, self.combiner, p)

    def score_arrays(self, Q, neighbors: Sequence[NeighborList]):
        """Vectorized scoring; returns (stability, raw_density, norm_density, combined) arrays."""
        Q = np.asarray(Q, dtype=np.float64)
        p = self.params
        err = self.codebook.residuals(Q)
        rows = [nl.distances[:p.k] for nl in neighbors]
        counts = np.fromiter(map(len, rows), dtype=np.int64, count=len(rows))
        if counts.size and (counts == counts[0]).all():
            dist = np.vstack(rows).sum(axis=1)
        else:
            dist = np.array([r.sum() for r in rows])
        if self.sigma_mode == "global":
            sig = self.sigma.value
        else:
            sig = np.maximum(dist / counts, SIGMA_FLOOR)
        s = np.maximum(np.exp(-err / (2.0 * sig)), _TINY)
        raw = counts / (dist + p.eps)
        nd = _ecdf(raw, self.calibration_raws)
        return s, raw, nd, combine(s, nd, self.combiner, p.alpha, p.beta)

    def score_batch(self, Q, query_ids: Sequence[str], neighbors: Sequence[NeighborList]) -> list:
        """Score many queries with precomputed neighbor lists."""
        s, raw, nd, c = self.score_arrays(Q, neighbors)
        p = self.params
        return [CertaintyScore(str(qid), float(a), float(b), float(d), float(e), self.combiner, p)
                for qid, a, b, d, e in zip(query_ids, s, raw, nd, c)]


def assess_reliability(q, ix: Index, cb: PQCodebook, K: int = 10, eps: float = 1e-6,
                       sigma_mode: str = "global", combiner: str = "harmonic", *,
                       query_id: str = "q", calibration: Optional[EmbeddingSet] = None,
                       scorer: Optional[Scorer] = None, **kwargs) -> CertaintyScore:
    """Score one query end to end: quantize, reconstruct, stability, top-K, density, combine.

    Pass a prepared ``scorer`` to skip calibration when scoring many queries.
    """
    if scorer is None:
        scorer = Scorer.calibrate(ix, cb, calibration, k=K, eps=eps, sigma_mode=sigma_mode,
                                  combiner=combiner, **kwargs)
    return scorer.score(q, query_id)
