"""Retrieval metrics, score/performance statistics, ablations and overhead timing."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .certainty import CertaintyScore, Scorer
from .errors import DegenerateError, EmptyInputError, FormatError, InsufficientDataError
from .index import Index, NeighborList
from .pq import PQCodebook, PQConfig, default_config, train_codebook
from .vectors import EmbeddingSet

# ---------------------------------------------------------------- qrels


def read_qrels(path) -> dict:
    """TREC qrels (``query_id 0 doc_id rel``); keeps docs with rel > 0."""
    qrels = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            qid, _, doc, rel = parts
            if int(rel) > 0:
                qrels.setdefault(qid, set()).add(doc)
    return qrels


def write_qrels(path, qrels: Mapping[str, Iterable[str]]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid, docs in qrels.items():
            for doc in sorted(docs):
                fh.write(f"{qid} 0 {doc} 1\n")


# ---------------------------------------------------------------- metrics


def recall_at_k(retrieved, relevant, k: int, denominator_k: Optional[int] = None) -> float:
    """Relevant hits in the top ``k`` over ``min(denominator_k, |relevant|)``.

    ``denominator_k`` defaults to ``k``. Fixing it to a base cutoff while
    growing ``k`` gives a recall that is monotone in ``k``; the value is
    capped at 1.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    relevant = set(relevant)
    if not relevant:
        raise EmptyInputError("relevant set is empty")
    ids = retrieved.ids if isinstance(retrieved, NeighborList) else list(retrieved)
    hits = sum(1 for doc in ids[:k] if doc in relevant)
    denom = min(k if denominator_k is None else denominator_k, len(relevant))
    return min(1.0, hits / denom)


def _pearson(x, y):
    x = x - x.mean()
    y = y - y.mean()
    sx, sy = math.sqrt(x @ x), math.sqrt(y @ y)
    if sx == 0 or sy == 0:
        raise DegenerateError("correlation undefined for a constant series")
    return float(np.clip((x @ y) / (sx * sy), -1.0, 1.0))


def correlate(scores: Mapping[str, float], recalls: Mapping[str, float]):
    """Pearson and Spearman (average ranks for ties) over shared query ids."""
    shared = sorted(set(scores) & set(recalls))
    if len(shared) < 3:
        raise InsufficientDataError(f"need at least 3 shared queries, got {len(shared)}")
    x = np.array([scores[q] for q in shared], dtype=np.float64)
    y = np.array([recalls[q] for q in shared], dtype=np.float64)
    pearson = _pearson(x, y)
    spearman = _pearson(rankdata(x), rankdata(y))
    return pearson, spearman


def bootstrap_ci(values: Sequence[float], resamples: int = 1000, seed: int = 0, level: float = 0.95):
    """Percentile bootstrap interval of the mean; returns (low, high, point)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise InsufficientDataError("bootstrap needs at least 2 values")
    if resamples < 100:
        raise ValueError("resamples must be at least 100")
    rng = np.random.default_rng(seed)
    means = v[rng.integers(0, v.size, (resamples, v.size))].mean(axis=1)
    tail = 100 * (1 - level) / 2
    low, high = np.percentile(means, [tail, 100 - tail])
    return float(low), float(high), float(v.mean())


def _signed_ranks(a: Mapping[str, float], b: Mapping[str, float]):
    shared = sorted(set(a) & set(b))
    if len(shared) < 5:
        raise InsufficientDataError(f"paired test needs at least 5 shared ids, got {len(shared)}")
    d = np.array([a[q] - b[q] for q in shared], dtype=np.float64)
    d = d[d != 0]
    if d.size == 0:
        raise DegenerateError("all paired differences are zero")
    ranks = rankdata(np.abs(d))
    return d, ranks


def wilcoxon_exact_pvalue(d, ranks) -> float:
    """Two-sided exact p-value from the signed-rank sum distribution.

    Ranks are doubled so tied (half-integer) ranks stay integral, then the
    number of sign assignments reaching each rank sum is counted.
    """
    r2 = np.rint(2 * np.asarray(ranks)).astype(np.int64)
    total = int(r2.sum())
    counts = np.zeros(total + 1)
    counts[0] = 1.0
    for r in r2:
        counts[r:] = counts[r:] + counts[:total + 1 - r].copy()
    t = int(r2[np.asarray(d) > 0].sum())
    n_assign = 2.0 ** len(r2)
    lower = counts[:t + 1].sum() / n_assign
    upper = counts[t:].sum() / n_assign
    return float(min(1.0, 2.0 * min(lower, upper)))


def wilcoxon_normal_pvalue(d, ranks) -> float:
    n = len(d)
    w = float(np.sum(np.asarray(ranks)[np.asarray(d) > 0]))
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    if var <= 0:
        raise DegenerateError("signed-rank variance is zero")
    z = (w - mean) / math.sqrt(var)
    return float(min(1.0, math.erfc(abs(z) / math.sqrt(2.0))))


def paired_test(a: Mapping[str, float], b: Mapping[str, float], exact_max_n: int = 20) -> float:
    """Two-sided Wilcoxon signed-rank p-value, zero differences dropped.

    Exact for up to ``exact_max_n`` non-zero differences, otherwise the
    tie-corrected normal approximation without continuity correction.
    """
    d, ranks = _signed_ranks(a, b)
    if d.size <= exact_max_n:
        return wilcoxon_exact_pvalue(d, ranks)
    return wilcoxon_normal_pvalue(d, ranks)


# ---------------------------------------------------------------- reports


@dataclass
class AblationConfig:
    name: str
    signal: str = "combined"  # stability | density | combined
    combiner: str = "harmonic"
    alpha: float = 0.6
    beta: float = 0.4


DEFAULT_ABLATION = (
    AblationConfig("stability", "stability"),
    AblationConfig("density", "density"),
    AblationConfig("harmonic", "combined", "harmonic"),
    AblationConfig("linear(a=0.6)", "combined", "linear", 0.6, 0.4),
    AblationConfig("product", "combined", "product"),
)


@dataclass
class AblationRow:
    name: str
    pearson: float
    spearman: float
    mean_recall: float
    queries: int


@dataclass
class EvalReport:
    per_query_recall: dict
    mean_recall: float
    pearson: float
    spearman: float
    bootstrap_ci: tuple
    ablation_rows: list = field(default_factory=list)
    p_value: Optional[float] = None
    timings: Optional[dict] = None
    k: int = 10

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bootstrap_ci"] = {"low": self.bootstrap_ci[0], "high": self.bootstrap_ci[1],
                             "point": self.bootstrap_ci[2]}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        k = self.k
        lines = [f"{'Component':<16} {'Pearson':>8} {'Spearman':>9} {f'Recall@{k}':>10}"]
        lines.append("-" * len(lines[0]))
        for r in self.ablation_rows:
            lines.append(f"{r.name:<16} {r.pearson:>8.3f} {r.spearman:>9.3f} {r.mean_recall:>10.3f}")
        low, high, point = self.bootstrap_ci
        p = "-" if self.p_value is None else f"{self.p_value:.3g}"
        lines += ["", f"{'Method':<16} {f'Recall@{k}':>10} {'95% CI':>17} {'p-value':>8}",
                  f"{'exact top-K':<16} {point:>10.3f} {f'[{low:.3f}, {high:.3f}]':>17} {p:>8}"]
        if self.timings:
            t = self.timings
            lines += ["", f"{'Operation':<16} {'Time (ms)':>10} {'Overhead':>9}",
                      f"{'search':<16} {t['search_ms']:>10.3f} {'-':>9}",
                      f"{'scoring':<16} {t['score_ms']:>10.3f} {100 * t['overhead_fraction']:>8.1f}%"]
        return "\n".join(lines) + "\n"


def _row_for(cfg: AblationConfig, scores: Sequence[CertaintyScore]):
    from .certainty import combine

    if cfg.signal == "stability":
        return np.array([s.stability for s in scores])
    if cfg.signal == "density":
        return np.array([s.norm_density for s in scores])
    if cfg.signal == "combined":
        return combine(np.array([s.stability for s in scores]), np.array([s.norm_density for s in scores]),
                       cfg.combiner, cfg.alpha, cfg.beta)
    raise ValueError(f"unknown ablation signal {cfg.signal!r}")


def gated_recall(values, base_recall, expanded_recall, gate_fraction: float):
    """Mean recall when the lowest-scoring ``gate_fraction`` of queries get expanded retrieval."""
    values = np.asarray(values)
    n_gate = int(round(gate_fraction * values.size))
    # stable sort so tied scores gate in query order, independent of signal name
    gated = np.argsort(values, kind="stable")[:n_gate]
    recall = np.array(base_recall, dtype=np.float64)
    recall[gated] = np.asarray(expanded_recall)[gated]
    return float(recall.mean())


def ablation_rows(scores: Sequence[CertaintyScore], base_recall, expanded_recall,
                  configs: Sequence[AblationConfig] = DEFAULT_ABLATION, gate_fraction: float = 0.3):
    ids = [s.query_id for s in scores]
    recalls = dict(zip(ids, base_recall))
    rows = []
    for cfg in configs:
        vals = _row_for(cfg, scores)
        pearson, spearman = correlate(dict(zip(ids, vals.tolist())), recalls)
        rows.append(AblationRow(cfg.name, pearson, spearman,
                                gated_recall(vals, base_recall, expanded_recall, gate_fraction), len(ids)))
    return rows


@dataclass
class RetrievalRun:
    """Scores and per-query recall for one query set against one index."""

    scores: list
    neighbors: list
    base_recall: np.ndarray
    expanded_recall: np.ndarray

    def recall_map(self) -> dict:
        return {s.query_id: float(r) for s, r in zip(self.scores, self.base_recall)}


def run_retrieval(scorer: Scorer, queries: EmbeddingSet, qrels: Mapping[str, Iterable[str]],
                  k: int = 10, expand_factor: int = 3) -> RetrievalRun:
    big = k * expand_factor
    neighbors = [scorer.index.search_exact(v, big) for v in queries.vectors]
    scores = scorer.score_batch(queries.vectors, queries.ids, neighbors)
    base = np.array([recall_at_k(nl, qrels[q], k) for q, nl in zip(queries.ids, neighbors)])
    expanded = np.array([recall_at_k(nl, qrels[q], big, denominator_k=k)
                         for q, nl in zip(queries.ids, neighbors)])
    return RetrievalRun(scores, [nl.head(k) for nl in neighbors], base, expanded)


def run_ablation(instance, configs: Sequence[AblationConfig] = DEFAULT_ABLATION, *,
                 codebook: Optional[PQCodebook] = None, scorer: Optional[Scorer] = None,
                 k: int = 10, expand_factor: int = 3, gate_fraction: float = 0.3,
                 seed: Optional[int] = None) -> list:
    """Correlation of each signal with Recall@k, and mean recall under score gating.

    All rows share one scorer, one retrieval pass and one query set, so they
    are directly comparable.
    """
    if not configs:
        raise ValueError("no ablation configs given")
    seed = instance.seed if seed is None else seed
    if scorer is None:
        if codebook is None:
            codebook = train_codebook(instance.corpus, default_config(instance.dim, seed))
        scorer = Scorer.calibrate(Index(instance.corpus), codebook, k=k, seed=seed)
    run = run_retrieval(scorer, instance.queries, instance.relevance, k, expand_factor)
    return ablation_rows(run.scores, run.base_recall, run.expanded_recall, configs, gate_fraction)


# ---------------------------------------------------------------- timing


def measure_overhead(queries: EmbeddingSet, ix: Index, scorer: Optional[Scorer], K: int = 10,
                     repetitions: int = 3) -> dict:
    """Per-query wall clock of search alone and of search plus certainty scoring.

    Each query is searched then scored back to back; the per-query median
    over ``repetitions`` is taken for both stages. ``overhead_fraction`` is
    the median over queries of ``scoring / (search + scoring)``. Passing
    ``scorer=None`` disables scoring.
    """
    if repetitions < 3:
        raise ValueError("repetitions must be at least 3")
    n = len(queries)
    if n == 0:
        raise EmptyInputError("no queries to time")
    search = np.empty((repetitions, n))
    score = np.zeros((repetitions, n))
    clock = time.perf_counter
    for r in range(repetitions):
        for i, (qid, q) in enumerate(zip(queries.ids, queries.vectors)):
            t0 = clock()
            nl = ix.search_exact(q, K)
            t1 = clock()
            if scorer is not None:
                scorer.score(q, qid, neighbors=nl)
                score[r, i] = clock() - t1
            search[r, i] = t1 - t0
    search_med = np.median(search, axis=0)
    score_med = np.median(score, axis=0)
    frac = score_med / (search_med + score_med)
    return {
        "search_ms": 1e3 * float(np.median(search_med)),
        "score_ms": 1e3 * float(np.median(score_med)),
        "overhead_fraction": float(np.median(frac)),
        "aggregate_overhead_fraction": float(score_med.sum() / (search_med.sum() + score_med.sum())),
        "queries": n,
        "repetitions": repetitions,
    }


def measure_scaling(dims: Sequence[int] = (64, 128, 256, 512), K: int = 10, n_queries: int = 2000,
                    corpus_size: int = 2000, repetitions: int = 15, seed: int = 0) -> dict:
    """Batch scoring cost as the dimension doubles at fixed K.

    Neighbor lists are precomputed so only scoring (quantize, reconstruct,
    stability, density, normalization, combination) is timed. Dimensions
    are timed round-robin within each repetition so load bursts spread over
    all of them. Returns per-dimension median milliseconds and the cost
    ratio of each doubling.
    """
    rng = np.random.default_rng(seed)
    cases = {}
    for D in dims:
        corpus = EmbeddingSet(tuple(f"d{i}" for i in range(corpus_size)), rng.normal(size=(corpus_size, D)))
        ix = Index(corpus)
        cb = train_codebook(corpus, PQConfig(max(1, D // 8), 256, 1, seed))
        scorer = Scorer.calibrate(ix, cb, k=K, calibration_size=100, seed=seed)
        Q = rng.normal(size=(n_queries, D))
        nbrs = [ix.search_exact(q, K) for q in Q[:50]]
        cases[D] = (scorer, Q, [nbrs[i % 50] for i in range(n_queries)])
    runs = {D: [] for D in dims}
    for _ in range(repetitions):
        for D in dims:
            scorer, Q, nbrs = cases[D]
            t0 = time.perf_counter()
            scorer.score_arrays(Q, nbrs)
            runs[D].append(time.perf_counter() - t0)
    timings = {D: 1e3 * float(np.median(runs[D])) for D in dims}
    ratios = [timings[b] / timings[a] for a, b in zip(dims, dims[1:])]
    return {"K": K, "dims": list(dims), "score_ms": [timings[d] for d in dims], "ratios": ratios}
