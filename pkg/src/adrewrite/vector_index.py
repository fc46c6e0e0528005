"""Exact inner-product search over a sealed, in-memory corpus.

Ordering is by score descending with ties broken by ``doc_id`` ascending.
Scores are accumulated one dimension at a time across the whole corpus, the
same left-to-right order used by :func:`adrewrite.embedding.sequential_dot`,
so ranking decisions do not depend on the BLAS build.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embedding import EmbeddingVector, sequential_dot
from .errors import DataError, DimMismatch, DuplicateId, EmptyIndex, SnapshotError, UnknownDoc

MAGIC = b"RRBIDX1"
_HEADER = struct.Struct("<II")
_IDLEN = struct.Struct("<I")


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    score: float
    rank: int


class FlatIndex:
    """Sealed flat index. Build with :func:`build` or :meth:`load`."""

    def __init__(self, ids: Sequence[str], vectors: np.ndarray):
        self._ids = tuple(ids)
        self.dim = int(vectors.shape[1]) if vectors.ndim == 2 else 0
        vecs = np.ascontiguousarray(vectors, dtype=np.float32)
        vecs.flags.writeable = False
        self._vectors = vecs
        # one row per dimension, contiguous over documents
        cols = np.ascontiguousarray(vecs.T, dtype=np.float64)
        cols.flags.writeable = False
        self._columns = cols
        self._pos = {d: i for i, d in enumerate(self._ids)}
        order = sorted(range(len(self._ids)), key=self._ids.__getitem__)
        id_rank = np.empty(len(self._ids), dtype=np.int64)
        id_rank[order] = np.arange(len(self._ids))
        id_rank.flags.writeable = False
        self._id_rank = id_rank

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._pos

    @property
    def ids(self) -> tuple[str, ...]:
        return self._ids

    def vector(self, doc_id: str) -> EmbeddingVector:
        try:
            return self._vectors[self._pos[doc_id]]
        except KeyError:
            raise UnknownDoc(doc_id) from None

    def _check_query(self, query: np.ndarray) -> np.ndarray:
        if not self._ids:
            raise EmptyIndex("index has no entries")
        q = np.asarray(query)
        if q.shape != (self.dim,):
            raise DimMismatch(f"query shape {q.shape} does not match index dim {self.dim}")
        return q.astype(np.float64)

    def scores(self, query: EmbeddingVector) -> np.ndarray:
        """Inner product of ``query`` with every entry, in insertion order."""
        q = self._check_query(query)
        acc = np.zeros(len(self._ids), dtype=np.float64)
        tmp = np.empty_like(acc)
        for j in range(self.dim):
            np.multiply(self._columns[j], q[j], out=tmp)
            acc += tmp
        return acc

    def score_of(self, query: EmbeddingVector, vector: EmbeddingVector) -> float:
        """Score an arbitrary vector exactly as if it were stored in the index."""
        q = self._check_query(query)
        v = np.asarray(vector)
        if v.shape != (self.dim,):
            raise DimMismatch(f"vector shape {v.shape} does not match index dim {self.dim}")
        return sequential_dot(v.astype(np.float32), q)

    def _top(self, scores: np.ndarray, k: int) -> list[SearchHit]:
        n = len(scores)
        k = min(k, n)
        if k < n:
            kth = np.partition(scores, n - k)[n - k]
            cand = np.flatnonzero(scores >= kth)
        else:
            cand = np.arange(n)
        order = cand[np.lexsort((self._id_rank[cand], -scores[cand]))][:k]
        return [SearchHit(self._ids[i], float(scores[i]), r) for r, i in enumerate(order, 1)]

    def search(
        self,
        query: EmbeddingVector,
        k: int,
        substitute: tuple[str, EmbeddingVector] | None = None,
    ) -> list[SearchHit]:
        """Top ``min(k, len(self))`` hits.

        ``substitute=(doc_id, vector)`` ranks as if that entry's vector were
        replaced, leaving every other entry untouched.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        scores = self.scores(query)
        if substitute is not None:
            scores = self._substituted(scores, query, *substitute)
        return self._top(scores, k)

    def _substituted(self, scores, query, doc_id, vector):
        if doc_id not in self._pos:
            raise UnknownDoc(doc_id)
        scores = scores.copy()
        scores[self._pos[doc_id]] = self.score_of(query, vector)
        return scores

    def rank_in(self, scores: np.ndarray, doc_id: str) -> int:
        """1-based rank of ``doc_id`` given a precomputed score array."""
        try:
            i = self._pos[doc_id]
        except KeyError:
            raise UnknownDoc(doc_id) from None
        s = scores[i]
        ahead = np.count_nonzero(scores > s)
        ahead += np.count_nonzero((scores == s) & (self._id_rank < self._id_rank[i]))
        return int(ahead) + 1

    def rank_of(
        self,
        query: EmbeddingVector,
        doc_id: str,
        substitute: EmbeddingVector | None = None,
    ) -> int:
        """Full-corpus rank of ``doc_id``; optionally with its vector replaced."""
        if doc_id not in self._pos:
            raise UnknownDoc(doc_id)
        scores = self.scores(query)
        if substitute is not None:
            scores = self._substituted(scores, query, doc_id, substitute)
        return self.rank_in(scores, doc_id)

    def with_substitution(self, scores: np.ndarray, query, doc_id, vector) -> np.ndarray:
        """Copy of ``scores`` with ``doc_id`` rescored against ``vector``."""
        return self._substituted(scores, query, doc_id, vector)

    def top_from_scores(self, scores: np.ndarray, k: int) -> list[SearchHit]:
        return self._top(scores, k)

    # -- snapshots ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        parts = [MAGIC, _HEADER.pack(self.dim, len(self._ids))]
        for doc_id, vec in zip(self._ids, self._vectors):
            raw = doc_id.encode("utf-8")
            parts.append(_IDLEN.pack(len(raw)))
            parts.append(raw)
            parts.append(vec.astype("<f4").tobytes())
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path: str | Path) -> "FlatIndex":
        data = Path(path).read_bytes()
        if data[: len(MAGIC)] != MAGIC:
            raise SnapshotError("bad magic", 0)
        off = len(MAGIC)
        if len(data) < off + _HEADER.size:
            raise SnapshotError("truncated header", off)
        dim, count = _HEADER.unpack_from(data, off)
        off += _HEADER.size
        if count * (_IDLEN.size + 4 * dim) > len(data) - off:
            raise SnapshotError(f"header claims {count} entries of dim {dim}, file too short", len(MAGIC))
        ids: list[str] = []
        vecs = np.empty((count, dim), dtype=np.float32)
        width = 4 * dim
        for i in range(count):
            if len(data) < off + _IDLEN.size:
                raise SnapshotError(f"truncated id length for entry {i}", off)
            (n,) = _IDLEN.unpack_from(data, off)
            off += _IDLEN.size
            if len(data) < off + n:
                raise SnapshotError(f"truncated id for entry {i}", off)
            try:
                ids.append(data[off:off + n].decode("utf-8"))
            except UnicodeDecodeError:
                raise SnapshotError(f"id of entry {i} is not UTF-8", off) from None
            off += n
            if len(data) < off + width:
                raise SnapshotError(f"truncated vector for entry {i}", off)
            vecs[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
            off += width
        if off != len(data):
            raise SnapshotError("trailing bytes after last entry", off)
        if not np.all(np.isfinite(vecs)):
            raise SnapshotError("non-finite vector values", len(MAGIC) + _HEADER.size)
        return build(zip(ids, vecs), dim=dim)


def build(items: Iterable[tuple[str, EmbeddingVector]], dim: int | None = None) -> FlatIndex:
    """Seal ``(doc_id, vector)`` pairs into a :class:`FlatIndex`."""
    ids: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    for doc_id, vec in items:
        if doc_id in seen:
            raise DuplicateId(doc_id)
        v = np.asarray(vec, dtype=np.float32).ravel()
        if dim is None:
            dim = v.shape[0]
        if v.shape[0] != dim:
            raise DimMismatch(f"{doc_id!r} has width {v.shape[0]}, expected {dim}")
        if not np.all(np.isfinite(v)) or abs(float(np.sqrt(np.dot(v.astype(np.float64), v))) - 1.0) > 1e-6:
            raise DataError(f"vector for {doc_id!r} is not a finite unit vector")
        seen.add(doc_id)
        ids.append(doc_id)
        rows.append(v)
    matrix = np.vstack(rows) if rows else np.zeros((0, dim or 0), dtype=np.float32)
    return FlatIndex(ids, matrix)
