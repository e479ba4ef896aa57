"""Embedding containers, the squared Euclidean distance and embedding files.

All arithmetic is float64; files store float32. Two on-disk layouts are
understood by :func:`read_embeddings`:

* binary ``SCRT``: magic, then u32 LE version/count/dim, count*dim f32 LE
  row-major, then one newline-terminated UTF-8 id per row;
* text: one ``id v1 ... vD`` line per row, whitespace separated.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError, FormatError

MAGIC = b"SCRT"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def as_embedding(values, dim: int | None = None) -> np.ndarray:
    """Validate ``values`` as a finite 1-D float64 vector."""
    e = np.asarray(values, dtype=np.float64)
    if e.ndim != 1 or e.shape[0] < 1:
        raise DimensionError(f"embedding must be a non-empty 1-D vector, got shape {e.shape}")
    if dim is not None and e.shape[0] != dim:
        raise DimensionError(f"expected dimension {dim}, got {e.shape[0]}")
    if not np.all(np.isfinite(e)):
        raise ValueError("embedding contains NaN or Inf")
    return e


def squared_euclidean(a, b) -> float:
    """Sum of squared coordinate differences between two embeddings."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(diff @ diff)


@dataclass(frozen=True)
class EmbeddingSet:
    """Immutable collection of same-dimension embeddings with unique ids."""

    ids: tuple
    vectors: np.ndarray

    def __post_init__(self):
        vecs = np.array(self.vectors, dtype=np.float64, order="C", copy=True)
        if vecs.ndim != 2:
            if vecs.size == 0:
                vecs = vecs.reshape(0, 0)
            else:
                raise DimensionError(f"vectors must be 2-D, got shape {vecs.shape}")
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != vecs.shape[0]:
            raise ValueError(f"{len(ids)} ids for {vecs.shape[0]} rows")
        if len(set(ids)) != len(ids):
            raise ValueError("ids must be unique")
        if vecs.shape[0] and vecs.shape[1] < 1:
            raise DimensionError("dimension must be at least 1")
        if not np.all(np.isfinite(vecs)):
            raise ValueError("embedding set contains NaN or Inf")
        vecs.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", vecs)

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]], ids: Iterable[str] | None = None,
                  dim: int | None = None) -> "EmbeddingSet":
        rows = list(rows)
        if ids is None:
            ids = [f"r{i}" for i in range(len(rows))]
        if not rows:
            return cls(tuple(ids), np.zeros((0, dim or 0)))
        return cls(tuple(ids), np.asarray(rows, dtype=np.float64))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __getitem__(self, i: int) -> np.ndarray:
        return self.vectors[i]

    def index_of(self, id_: str) -> int:
        try:
            return self._id_index[id_]
        except KeyError:
            raise KeyError(id_) from None

    @property
    def _id_index(self) -> dict:
        cache = self.__dict__.get("_index_cache")
        if cache is None:
            cache = {id_: i for i, id_ in enumerate(self.ids)}
            object.__setattr__(self, "_index_cache", cache)
        return cache

    def subset(self, rows: Sequence[int]) -> "EmbeddingSet":
        rows = list(rows)
        return EmbeddingSet(tuple(self.ids[i] for i in rows), self.vectors[rows])


def _check_ids_writable(ids):
    for id_ in ids:
        if not id_ or any(ch.isspace() for ch in id_):
            raise FormatError(f"id {id_!r} is empty or contains whitespace")


def write_embeddings(path, eset: EmbeddingSet, fmt: str = "binary") -> None:
    """Write ``eset`` as SCRT binary (default) or whitespace text."""
    _check_ids_writable(eset.ids)
    path = Path(path)
    if fmt == "binary":
        dim = eset.dim if len(eset) else (eset.vectors.shape[1] if eset.vectors.ndim == 2 else 0)
        body = np.ascontiguousarray(eset.vectors, dtype="<f4").tobytes()
        ids = "".join(f"{i}\n" for i in eset.ids).encode("utf-8")
        path.write_bytes(_HEADER.pack(MAGIC, VERSION, len(eset), dim) + body + ids)
    elif fmt == "text":
        with path.open("w", encoding="utf-8") as fh:
            for id_, row in zip(eset.ids, eset.vectors.astype(np.float32)):
                fh.write(id_ + " " + " ".join(repr(float(v)) for v in row) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def read_embeddings(path) -> EmbeddingSet:
    """Read an embedding file, sniffing the magic bytes to pick the format."""
    data = Path(path).read_bytes()
    if data[:4] == MAGIC:
        return _parse_binary(data)
    return _parse_text(data.decode("utf-8"))


def _parse_binary(data: bytes) -> EmbeddingSet:
    if len(data) < _HEADER.size:
        raise FormatError("truncated SCRT header")
    _, version, count, dim = _HEADER.unpack_from(data)
    if version != VERSION:
        raise FormatError(f"unsupported SCRT version {version}")
    nbytes = count * dim * 4
    end = _HEADER.size + nbytes
    if len(data) < end:
        raise FormatError("truncated SCRT body")
    vecs = np.frombuffer(data, dtype="<f4", count=count * dim, offset=_HEADER.size)
    tail = data[end:].decode("utf-8")
    ids = tail.split("\n")
    if ids and ids[-1] == "":
        ids.pop()
    if len(ids) != count:
        raise FormatError(f"expected {count} ids, found {len(ids)}")
    return EmbeddingSet(tuple(ids), vecs.reshape(count, dim).astype(np.float64))


def _parse_text(text: str) -> EmbeddingSet:
    ids, rows = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        ids.append(parts[0])
        try:
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        if len(rows[-1]) != len(rows[0]):
            raise FormatError(f"line {lineno}: expected {len(rows[0])} values, got {len(rows[-1])}")
    if not rows:
        return EmbeddingSet((), np.zeros((0, 0)))
    if not rows[0]:
        raise FormatError("text rows carry no coordinates")
    # round through float32 so text and binary files hold identical values
    vecs = np.asarray(rows, dtype=np.float32).astype(np.float64)
    return EmbeddingSet(tuple(ids), vecs)


def require_nonempty(eset: EmbeddingSet, what: str = "embedding set") -> None:
    if len(eset) == 0:
        raise EmptyInputError(f"{what} is empty")
