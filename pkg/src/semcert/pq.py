"""Product quantization: per-subspace k-means codebooks, encode and decode.

A codebook splits a D-dimensional vector into ``m`` contiguous subvectors of
``D/m`` coordinates and replaces each by the nearest of ``k`` centroids.
Centroids are held as float32-representable float64 values, so a codebook
written to disk and read back behaves identically to the trained one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .errors import CodeError, ConfigError, DimensionError, EmptyInputError, FormatError, InsufficientDataError
from .vectors import EmbeddingSet

MAGIC = b"SCPQ"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass(frozen=True)
class PQConfig:
    num_subspaces: int
    centroids_per_subspace: int = 256
    kmeans_iters: int = 25
    seed: int = 0

    def validate(self, dim: Optional[int] = None) -> None:
        if self.num_subspaces < 1:
            raise ConfigError("must be a positive integer", "num_subspaces")
        if self.centroids_per_subspace < 2:
            raise ConfigError("must be at least 2", "centroids_per_subspace")
        if self.kmeans_iters < 1:
            raise ConfigError("must be a positive integer", "kmeans_iters")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("must be an unsigned 64-bit integer", "seed")
        if dim is not None and dim % self.num_subspaces:
            raise ConfigError(f"{self.num_subspaces} does not divide dimension {dim}", "num_subspaces")


def default_config(dim: int, seed: int = 0) -> PQConfig:
    """m = D/8 snapped to the nearest divisor of D, k = 256, 25 iterations."""
    target = dim / 8
    divisors = [d for d in range(1, dim + 1) if dim % d == 0]
    m = min(divisors, key=lambda d: (abs(d - target), -d))
    return PQConfig(num_subspaces=m, centroids_per_subspace=256, kmeans_iters=25, seed=seed)


class PQCodebook:
    """Trained (or hand-built) product-quantization codebook.

    Args:
        centroids: array of shape (m, k, sub_dim).
        config: the configuration it was trained with; inferred when omitted.
    """

    def __init__(self, centroids, config: Optional[PQConfig] = None):
        c = np.array(centroids, dtype=np.float64, order="C", copy=True)
        if c.ndim != 3 or min(c.shape) < 1:
            raise DimensionError(f"centroids must have shape (m, k, sub_dim), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("centroids contain NaN or Inf")
        c.setflags(write=False)
        self.centroids = c
        m, k, _ = c.shape
        if config is None:
            config = PQConfig(num_subspaces=m, centroids_per_subspace=k)
        elif (config.num_subspaces, config.centroids_per_subspace) != (m, k):
            raise ConfigError("config does not match centroid array shape")
        self.config = config

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def k(self) -> int:
        return self.centroids.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.m * self.sub_dim

    def __eq__(self, other):
        return isinstance(other, PQCodebook) and np.array_equal(self.centroids, other.centroids)

    def __repr__(self):
        return f"PQCodebook(m={self.m}, k={self.k}, sub_dim={self.sub_dim})"

    def _check_dim(self, d):
        if d != self.dim:
            raise DimensionError(f"codebook dimension {self.dim} != input dimension {d}")

    def encode(self, X) -> np.ndarray:
        """Quantize every row of ``X``; returns int32 codes of shape (n, m)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionError("encode expects a 2-D array")
        self._check_dim(X.shape[1])
        codes = np.empty((X.shape[0], self.m), dtype=np.int32)
        s = self.sub_dim
        for j in range(self.m):
            codes[:, j], _ = kernels.assign(X[:, j * s:(j + 1) * s], self.centroids[j])
        return codes

    def decode(self, codes) -> np.ndarray:
        codes = np.asarray(codes)
        if codes.ndim != 2 or codes.shape[1] != self.m:
            raise CodeError(f"codes must have shape (n, {self.m})")
        if codes.size and (codes.min() < 0 or codes.max() >= self.k):
            raise CodeError(f"code index outside [0, {self.k})")
        parts = [self.centroids[j][codes[:, j]] for j in range(self.m)]
        return np.concatenate(parts, axis=1) if parts else np.zeros((codes.shape[0], 0))

    def residuals(self, X) -> np.ndarray:
        """Squared reconstruction error of every row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        diff = X - self.decode(self.encode(X))
        return np.einsum("ij,ij->i", diff, diff)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC, VERSION, self.m, self.k, self.sub_dim)
        return header + self.centroids.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "PQCodebook":
        if len(data) < _HEADER.size or data[:4] != MAGIC:
            raise FormatError("not an SCPQ codebook")
        _, version, m, k, sub_dim = _HEADER.unpack_from(data)
        if version != VERSION:
            raise FormatError(f"unsupported SCPQ version {version}")
        count = m * k * sub_dim
        if len(data) != _HEADER.size + 4 * count:
            raise FormatError("SCPQ body length does not match header")
        c = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size)
        return cls(c.reshape(m, k, sub_dim).astype(np.float64))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PQCodebook":
        return cls.from_bytes(Path(path).read_bytes())


def quantize(e, cb: PQCodebook) -> np.ndarray:
    """Nearest-centroid index per subspace (ties go to the lowest index)."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim != 1:
        raise DimensionError("quantize expects a single 1-D embedding")
    return cb.encode(e[None, :])[0]


def reconstruct(code, cb: PQCodebook) -> np.ndarray:
    code = np.asarray(code)
    if code.ndim != 1:
        raise CodeError("code must be 1-D")
    return cb.decode(code[None, :])[0]


def reconstruction_mse(eset: EmbeddingSet, cb: PQCodebook) -> float:
    if len(eset) == 0:
        raise EmptyInputError("cannot compute reconstruction error of an empty set")
    return float(np.mean(cb.residuals(eset.vectors)))


def train_codebook(train: EmbeddingSet, cfg: PQConfig) -> PQCodebook:
    """Fit one k-means codebook per subspace.

    Seeding is k-means++ from a per-subspace stream spawned off ``cfg.seed``;
    Lloyd iterations stop after ``cfg.kmeans_iters`` or once assignments no
    longer change. Deterministic for fixed inputs and seed.
    """
    cfg.validate(train.dim if len(train) else None)
    n = len(train)
    k = cfg.centroids_per_subspace
    if n < k:
        raise InsufficientDataError(f"{n} training rows for {k} centroids per subspace")
    m = cfg.num_subspaces
    s = train.dim // m
    streams = np.random.SeedSequence(cfg.seed).spawn(m)
    centroids = np.empty((m, k, s))
    for j in range(m):
        X = np.ascontiguousarray(train.vectors[:, j * s:(j + 1) * s])
        rng = np.random.default_rng(streams[j])
        centroids[j] = _kmeans(X, k, cfg.kmeans_iters, rng, subspace=j)
    # storage precision; keeps saved and in-memory codebooks interchangeable
    return PQCodebook(centroids.astype(np.float32).astype(np.float64), cfg)


def _kmeans_pp(X, k, rng, subspace):
    n = X.shape[0]
    C = np.empty((k, X.shape[1]))
    C[0] = X[rng.integers(n)]
    d2 = kernels.sq_dists(X, C[0])
    for c in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            raise InsufficientDataError(f"subspace {subspace} has fewer than {k} distinct training vectors")
        idx = rng.choice(n, p=d2 / total)
        C[c] = X[idx]
        np.minimum(d2, kernels.sq_dists(X, C[c]), out=d2)
    return C


def _kmeans(X, k, iters, rng, subspace=0):
    C = _kmeans_pp(X, k, rng, subspace)
    labels, dists = kernels.assign(X, C)
    for _ in range(iters):
        C = _update_centroids(X, labels, dists, C)
        new_labels, dists = kernels.assign(X, C)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return C


def _update_centroids(X, labels, dists, C):
    k, d = C.shape
    labels = labels.copy()
    dists = dists.copy()
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        # farthest point from its own centroid, taken from a cluster that can spare it
        donors = counts[labels] > 1
        if not donors.any():
            continue
        p = int(np.argmax(np.where(donors, dists, -1.0)))
        counts[labels[p]] -= 1
        labels[p] = c
        counts[c] = 1
        dists[p] = 0.0
    new = np.empty_like(C)
    for j in range(d):
        new[:, j] = np.bincount(labels, weights=X[:, j], minlength=k)
    out = C.copy()
    filled = counts > 0
    out[filled] = new[filled] / counts[filled, None]
    return out
