"""Exact and PQ-approximate (ADC) top-K search over an embedding corpus."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, EmptyInputError, FormatError
from .pq import PQCodebook
from .vectors import EmbeddingSet


@dataclass(frozen=True)
class NeighborList:
    """Ranked neighbors, ascending by squared distance then id."""

    ids: tuple
    distances: np.ndarray
    rows: np.ndarray

    def __len__(self):
        return len(self.ids)

    @property
    def entries(self):
        return list(zip(self.ids, self.distances.tolist()))

    def head(self, k: int) -> "NeighborList":
        return NeighborList(self.ids[:k], self.distances[:k], self.rows[:k])


class Index:
    """Immutable search handle over a corpus, optionally with PQ codes."""

    def __init__(self, corpus: EmbeddingSet, codebook: Optional[PQCodebook] = None):
        if len(corpus) == 0:
            raise EmptyInputError("cannot index an empty corpus")
        if codebook is not None and codebook.dim != corpus.dim:
            raise DimensionError(f"codebook dimension {codebook.dim} != corpus dimension {corpus.dim}")
        self.corpus = corpus
        self.codebook = codebook
        self.codes = codebook.encode(corpus.vectors) if codebook is not None else None
        if self.codes is not None:
            self.codes.setflags(write=False)
        # lexicographic rank of each id, the secondary sort key
        order = np.argsort(np.array(corpus.ids, dtype=object), kind="stable")
        self._id_rank = np.empty(len(corpus), dtype=np.int64)
        self._id_rank[order] = np.arange(len(corpus))

    @property
    def dim(self) -> int:
        return self.corpus.dim

    def __len__(self):
        return len(self.corpus)

    def _check_query(self, q, K):
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self.dim:
            raise DimensionError(f"query dimension {q.shape} != index dimension {self.dim}")
        if K < 1:
            raise ValueError("K must be at least 1")
        return q

    def _select(self, dists, K, exclude_id=None):
        if exclude_id is not None:
            row = self.corpus._id_index.get(exclude_id)
            if row is not None and dists[row] == 0.0:
                dists = dists.copy()
                dists[row] = np.inf
                K = min(K, len(dists) - 1)
        K = min(K, len(dists))
        if K == 0:
            return NeighborList((), np.zeros(0), np.zeros(0, dtype=np.int64))
        if K < len(dists):
            kth = np.partition(dists, K - 1)[K - 1]
            cand = np.flatnonzero(dists <= kth)
        else:
            cand = np.arange(len(dists))
        order = cand[np.lexsort((self._id_rank[cand], dists[cand]))][:K]
        return NeighborList(tuple(self.corpus.ids[i] for i in order), dists[order].copy(), order)

    def distances(self, q) -> np.ndarray:
        return kernels.sq_dists(self.corpus.vectors, self._check_query(q, 1))

    def search_exact(self, q, K: int, exclude_id: Optional[str] = None) -> NeighborList:
        """The K rows closest to ``q``.

        ``exclude_id`` drops the corpus row with that id when it sits at
        distance exactly 0 (a stored point scored against its own corpus).
        """
        q = self._check_query(q, K)
        return self._select(kernels.sq_dists(self.corpus.vectors, q), K, exclude_id)

    def adc_distances(self, q) -> np.ndarray:
        if self.codes is None:
            raise ConfigError("index was built without a codebook", "codebook")
        q = self._check_query(q, 1)
        table = kernels.adc_table(q, self.codebook.centroids)
        return kernels.adc_scan(self.codes, table)

    def search_adc(self, q, K: int) -> NeighborList:
        """Top-K by asymmetric distance to the PQ reconstructions."""
        if self.codes is None:
            raise ConfigError("index was built without a codebook", "codebook")
        q = self._check_query(q, K)
        return self._select(self.adc_distances(q), K)


def build_index(corpus: EmbeddingSet, codebook: Optional[PQCodebook] = None) -> Index:
    return Index(corpus, codebook)


def search_exact(ix: Index, q, K: int, exclude_id: Optional[str] = None) -> NeighborList:
    return ix.search_exact(q, K, exclude_id)


def search_adc(ix: Index, q, K: int) -> NeighborList:
    return ix.search_adc(q, K)


def write_run(path, results: Mapping[str, NeighborList], tag: str = "semcert") -> None:
    """TREC run file; score is the negated squared distance."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for qid, nl in results.items():
            for rank, (doc, d) in enumerate(nl.entries, 1):
                fh.write(f"{qid} Q0 {doc} {rank} {-d!r} {tag}\n")


def read_run(path) -> dict:
    """Parse a TREC run file into ``{query_id: [doc_id, ...]}`` ordered by rank."""
    ranked = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            qid, _, doc, rank, score, _ = parts
            ranked.setdefault(qid, []).append((int(rank), -float(score), doc))
    return {qid: [doc for _, _, doc in sorted(rows)] for qid, rows in ranked.items()}
