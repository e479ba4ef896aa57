"""Synthetic corpora drawn from isotropic Gaussian concept wells.

Each well has a centroid and a variance; low-variance ("deep") wells stand
for clear concepts and high-variance ("shallow") wells for ambiguous ones.
Documents and queries are sampled around their well, and a query's
relevant set is every document of its own well.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .certainty import CertaintyScore, estimate_sigma, recall_bound, stability_from_error
from .errors import DimensionError, JoinError, PlacementError
from .pq import PQCodebook
from .vectors import EmbeddingSet, read_embeddings, write_embeddings

DEPTH_CLASSES = ("deep", "medium", "shallow")
DEFAULT_BANDS = (0.05, 0.25, 1.0)


@dataclass(frozen=True)
class GravityWell:
    concept_id: str
    centroid: np.ndarray
    variance: float
    depth_class: str


@dataclass(frozen=True)
class SyntheticInstance:
    wells: tuple
    corpus: EmbeddingSet
    queries: EmbeddingSet
    relevance: dict
    provenance: dict
    seed: int

    @property
    def dim(self) -> int:
        return self.corpus.dim

    def well_of(self, id_: str) -> GravityWell:
        cid = self.provenance[id_]
        return next(w for w in self.wells if w.concept_id == cid)

    def depth_of(self, id_: str) -> str:
        return self.well_of(id_).depth_class


def well_potential(x, w: GravityWell) -> float:
    """Negative log-density of ``x`` under the well, with the 1-D normalizer."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != w.centroid.shape:
        raise DimensionError(f"point dimension {x.shape} != well dimension {w.centroid.shape}")
    diff = x - w.centroid
    return float(diff @ diff) / (2.0 * w.variance) + math.log(2.0 * math.pi * w.variance)


def generate_instance(num_wells: int = 30, docs_per_well: int = 200, queries_per_well: int = 20,
                      dim: int = 64, variance_bands: Sequence[float] = DEFAULT_BANDS, seed: int = 0,
                      separation: float = 8.0, spread: float | None = None,
                      max_attempts: int = 10_000) -> SyntheticInstance:
    """Sample a seeded instance.

    Well ``i`` takes depth class ``i % 3``. Centroids are drawn from
    N(0, spread^2 I) and rejected until every pair is at least
    ``separation * sqrt(max variance)`` apart.
    """
    for name, v in (("num_wells", num_wells), ("docs_per_well", docs_per_well),
                    ("queries_per_well", queries_per_well), ("dim", dim)):
        if v < 1:
            raise ValueError(f"{name} must be at least 1")
    bands = tuple(float(b) for b in variance_bands)
    if len(bands) != 3 or not 0 < bands[0] < bands[1] < bands[2]:
        raise ValueError("variance_bands must be three positive values ordered deep < medium < shallow")
    min_sep = separation * math.sqrt(max(bands))
    if spread is None:
        # typical pairwise distance of N(0, s^2 I) samples is s * sqrt(2 dim); 0.9
        # puts most draws just inside min_sep, so accepted wells sit near it
        spread = 0.9 * min_sep / math.sqrt(2 * dim)

    rng = np.random.default_rng(seed)
    centroids = np.empty((num_wells, dim))
    for i in range(num_wells):
        for _ in range(max_attempts):
            c = rng.normal(0.0, spread, dim)
            if i == 0 or np.min(np.sum((centroids[:i] - c) ** 2, axis=1)) >= min_sep ** 2:
                centroids[i] = c
                break
        else:
            raise PlacementError(f"could not place well {i} with separation {min_sep:.3g} "
                                 f"after {max_attempts} attempts")

    wells = tuple(GravityWell(f"c{i:03d}", centroids[i], bands[i % 3], DEPTH_CLASSES[i % 3])
                  for i in range(num_wells))
    doc_vecs, doc_ids, q_vecs, q_ids = [], [], [], []
    provenance, members = {}, {}
    for w in wells:
        pts = w.centroid + rng.normal(0.0, math.sqrt(w.variance), (docs_per_well, dim))
        ids = [f"d{len(doc_ids) + j:06d}" for j in range(docs_per_well)]
        doc_vecs.append(pts)
        doc_ids.extend(ids)
        members[w.concept_id] = frozenset(ids)
        provenance.update((i, w.concept_id) for i in ids)
    for w in wells:
        pts = w.centroid + rng.normal(0.0, math.sqrt(w.variance), (queries_per_well, dim))
        ids = [f"q{len(q_ids) + j:05d}" for j in range(queries_per_well)]
        q_vecs.append(pts)
        q_ids.extend(ids)
        provenance.update((i, w.concept_id) for i in ids)
    relevance = {qid: members[provenance[qid]] for qid in q_ids}
    corpus = EmbeddingSet(tuple(doc_ids), np.vstack(doc_vecs))
    queries = EmbeddingSet(tuple(q_ids), np.vstack(q_vecs))
    return SyntheticInstance(wells, corpus, queries, relevance, provenance, seed)


def _group_by_depth(instance: SyntheticInstance, ids):
    groups = {c: [] for c in DEPTH_CLASSES}
    for i, qid in enumerate(ids):
        groups[instance.depth_of(qid)].append(i)
    return groups


def theorem2_probe(instance: SyntheticInstance, cb: PQCodebook, sigma=None) -> dict:
    """Mean quantization error and stability of the queries, per depth class.

    ``error_increasing`` tells whether mean error is weakly increasing from
    deep to shallow wells, i.e. deeper wells quantize more stably.
    """
    if sigma is None:
        sigma = estimate_sigma("global", instance.corpus, cb)
    err = cb.residuals(instance.queries.vectors)
    stab = stability_from_error(err, sigma)
    classes = {}
    for c, rows in _group_by_depth(instance, instance.queries.ids).items():
        if rows:
            classes[c] = {"count": len(rows), "mean_error": float(np.mean(err[rows])),
                          "mean_stability": float(np.mean(stab[rows]))}
    means = [classes[c]["mean_error"] for c in DEPTH_CLASSES if c in classes]
    return {"classes": classes,
            "error_increasing": all(a <= b for a, b in zip(means, means[1:])),
            "seed": instance.seed}


def theorem3_probe(instance: SyntheticInstance, scores: Sequence[CertaintyScore],
                   recalls: Mapping[str, float], K: int, D: int) -> dict:
    """How often observed Recall@K meets ``1 - exp(-score K / 2D)``. Diagnostic only."""
    by_id = {s.query_id: s for s in scores}
    if set(by_id) != set(recalls):
        missing = sorted(set(by_id) ^ set(recalls))
        raise JoinError(f"score and recall query ids differ, e.g. {missing[:3]}")
    rows = []
    for qid in sorted(by_id):
        bound = recall_bound(by_id[qid].combined, K, D)
        rows.append((qid, bound, recalls[qid]))
    if not rows:
        return {"queries": 0, "satisfied_fraction": float("nan"), "mean_slack": float("nan"),
                "K": K, "D": D}
    bounds = np.array([b for _, b, _ in rows])
    obs = np.array([r for _, _, r in rows])
    return {
        "queries": len(rows),
        "satisfied_fraction": float(np.mean(obs >= bounds)),
        "mean_slack": float(np.mean(obs - bounds)),
        "mean_bound": float(np.mean(bounds)),
        "K": K,
        "D": D,
    }


def write_instance(directory, instance: SyntheticInstance) -> list:
    """Export corpus/queries (SCRT), qrels, well centroids, a JSON well manifest
    and a tab-separated id-to-concept map."""
    from .evaluation import write_qrels

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_embeddings(d / "corpus.scrt", instance.corpus)
    write_embeddings(d / "queries.scrt", instance.queries)
    write_qrels(d / "qrels.txt", instance.relevance)
    centroids = EmbeddingSet(tuple(w.concept_id for w in instance.wells),
                             np.vstack([w.centroid for w in instance.wells]))
    write_embeddings(d / "wells.scrt", centroids)
    row_bytes = 4 * instance.dim
    manifest = {
        "seed": instance.seed,
        "dim": instance.dim,
        "centroid_file": "wells.scrt",
        "wells": [
            {"concept_id": w.concept_id, "centroid_offset": 16 + i * row_bytes,
             "variance": w.variance, "depth_class": w.depth_class, "seed": instance.seed}
            for i, w in enumerate(instance.wells)
        ],
    }
    (d / "wells.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (d / "provenance.tsv").write_text("".join(f"{i}\t{c}\n" for i, c in instance.provenance.items()))
    return [d / n for n in ("corpus.scrt", "queries.scrt", "qrels.txt", "wells.scrt", "wells.json",
                            "provenance.tsv")]


def read_instance(directory) -> SyntheticInstance:
    from .evaluation import read_qrels

    d = Path(directory)
    manifest = json.loads((d / "wells.json").read_text())
    cents = read_embeddings(d / manifest["centroid_file"])
    wells = tuple(GravityWell(w["concept_id"], cents[cents.index_of(w["concept_id"])],
                              float(w["variance"]), w["depth_class"]) for w in manifest["wells"])
    relevance = {q: frozenset(docs) for q, docs in read_qrels(d / "qrels.txt").items()}
    provenance = {}
    for line in (d / "provenance.tsv").read_text().splitlines():
        id_, cid = line.split("\t")
        provenance[id_] = cid
    return SyntheticInstance(wells, read_embeddings(d / "corpus.scrt"), read_embeddings(d / "queries.scrt"),
                             relevance, provenance, int(manifest["seed"]))
