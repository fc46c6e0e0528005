"""Unit embedding vectors and the backends that produce them.

Vectors are stored as read-only ``float32`` numpy arrays of unit length.
Every similarity in the package is a *sequential* float64 dot product: the
products are accumulated left to right, never pairwise or via BLAS, so a
score computed here is bitwise identical to the same score computed by
:class:`adrewrite.vector_index.FlatIndex` or by a plain Python loop.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Protocol, Sequence

import httpx
import numpy as np

from .errors import DimMismatch, NonFinite, ServiceUnavailable, ZeroVector

logger = logging.getLogger(__name__)

DEFAULT_DIM = 384
DEFAULT_BATCH_SIZE = 64
EMBEDDER_URL_ENV = "ADREWRITE_EMBEDDER_URL"

_ZERO_NORM = 1e-12
# float32 rounding moves a unit vector's norm by at most 2**-24
_ALREADY_UNIT = 1e-7

EmbeddingVector = np.ndarray


def normalize(raw: Iterable[float] | np.ndarray) -> EmbeddingVector:
    """Scale ``raw`` to unit l2 norm and return it as read-only float32.

    Inputs that are already unit length (to float32 precision) are returned
    unchanged, which makes the function idempotent bit for bit.
    """
    x = np.asarray(raw, dtype=np.float64).ravel()
    if x.size == 0:
        raise ZeroVector("cannot normalize an empty vector")
    if not np.all(np.isfinite(x)):
        raise NonFinite("vector contains NaN or Inf")
    norm = float(np.sqrt(np.dot(x, x)))
    if norm < _ZERO_NORM:
        raise ZeroVector(f"vector norm {norm!r} is below {_ZERO_NORM}")
    if abs(norm - 1.0) <= _ALREADY_UNIT:
        out = x.astype(np.float32)
    else:
        out = (x / norm).astype(np.float32)
    out.flags.writeable = False
    return out


def sequential_dot(a: np.ndarray, b: np.ndarray) -> float:
    """Left-to-right float64 dot product (no pairwise summation)."""
    prods = np.asarray(a, dtype=np.float64) * np.asarray(b, dtype=np.float64)
    if prods.size == 0:
        return 0.0
    return float(np.add.accumulate(prods)[-1])


def cosine_sim(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity of two unit vectors.

    Identical vectors score exactly 1.0; everything else is the sequential
    dot product clipped to [-1, 1].
    """
    if a.shape != b.shape:
        raise DimMismatch(f"dims differ: {a.shape} vs {b.shape}")
    if a is b or np.array_equal(a, b):
        return 1.0
    return min(1.0, max(-1.0, sequential_dot(a, b)))


# ---------------------------------------------------------------------------
# embedders


@dataclass(frozen=True)
class EmbedderDescriptor:
    kind: str = "deterministic-test"  # or "remote-service"
    dim: int = DEFAULT_DIM
    endpoint: str | None = None
    model_name: str | None = None
    batch_size: int = DEFAULT_BATCH_SIZE
    max_in_flight: int = 4
    retry_limit: int = 3
    timeout: float = 30.0

    def __post_init__(self):
        if self.kind not in ("deterministic-test", "remote-service"):
            raise ValueError(f"unknown embedder kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.kind == "remote-service" and not (
            self.endpoint or os.environ.get(EMBEDDER_URL_ENV)
        ):
            raise ValueError("remote-service embedder requires an endpoint")


class Embedder(Protocol):
    dim: int
    batch_size: int

    def embed_raw(self, texts: Sequence[str]) -> list[Sequence[float]]:
        """Return one unnormalized vector per text (a single request)."""


_TOKEN_RE = re.compile(r"[^\W_]+")


@lru_cache(maxsize=1 << 16)
def _token_slot(token: str, dim: int) -> tuple[int, float]:
    data = token.encode("utf-8")
    idx = int.from_bytes(hashlib.blake2b(data, digest_size=8, key=b"index").digest(), "little")
    sgn = hashlib.blake2b(data, digest_size=1, key=b"sign").digest()[0] & 1
    return idx % dim, (1.0 if sgn else -1.0)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class HashingEmbedder:
    """Signed feature-hashing bag of tokens.

    Lowercases, splits on anything that is not a letter or digit, hashes each
    token to a slot in ``[0, dim)`` with a +-1 sign taken from a second keyed
    hash. Deterministic across processes and platforms, and two texts that
    share tokens get a positive similarity.
    """

    def __init__(self, dim: int = DEFAULT_DIM, batch_size: int = DEFAULT_BATCH_SIZE):
        self.dim = dim
        self.batch_size = batch_size

    def embed_raw(self, texts):
        out = []
        for text in texts:
            vec = np.zeros(self.dim, dtype=np.float64)
            for tok in tokenize(text):
                i, s = _token_slot(tok, self.dim)
                vec[i] += s
            out.append(vec)
        return out


class RemoteEmbedder:
    """Client for the embedding service.

    Wire protocol: ``POST {"texts": [...]}`` answered by
    ``{"vectors": [[...], ...]}``. Failed requests are retried with
    exponential backoff; at most ``max_in_flight`` requests are open at once
    across all threads sharing this client.
    """

    def __init__(
        self,
        endpoint: str,
        dim: int = DEFAULT_DIM,
        batch_size: int = DEFAULT_BATCH_SIZE,
        model_name: str | None = None,
        max_in_flight: int = 4,
        retry_limit: int = 3,
        timeout: float = 30.0,
        backoff: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.dim = dim
        self.batch_size = batch_size
        self.model_name = model_name
        self.retry_limit = retry_limit
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self):
        self._client.close()

    def embed_raw(self, texts):
        body = {"texts": list(texts)}
        if self.model_name:
            body["model"] = self.model_name
        last_exc: Exception | None = None
        for attempt in range(self.retry_limit + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post(self.endpoint, json=body)
                resp.raise_for_status()
                vectors = resp.json()["vectors"]
            except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
                last_exc = exc
                logger.warning("embedder request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if len(vectors) != len(texts):
                raise DimMismatch(f"service returned {len(vectors)} vectors for {len(texts)} texts")
            return vectors
        raise ServiceUnavailable(f"embedding service {self.endpoint} failed: {last_exc}")


def make_embedder(desc: EmbedderDescriptor, **kwargs) -> Embedder:
    if desc.kind == "deterministic-test":
        return HashingEmbedder(dim=desc.dim, batch_size=desc.batch_size)
    endpoint = os.environ.get(EMBEDDER_URL_ENV) or desc.endpoint
    return RemoteEmbedder(
        endpoint,
        dim=desc.dim,
        batch_size=desc.batch_size,
        model_name=desc.model_name,
        max_in_flight=desc.max_in_flight,
        retry_limit=desc.retry_limit,
        timeout=desc.timeout,
        **kwargs,
    )


def embed_batch(texts: Sequence[str], embedder: Embedder | EmbedderDescriptor) -> list[EmbeddingVector]:
    """Embed ``texts`` in chunks of ``batch_size``; output order matches input."""
    if isinstance(embedder, EmbedderDescriptor):
        embedder = make_embedder(embedder)
    texts = list(texts)
    out: list[EmbeddingVector] = []
    for start in range(0, len(texts), embedder.batch_size):
        chunk = texts[start:start + embedder.batch_size]
        for row in embedder.embed_raw(chunk):
            if len(row) != embedder.dim:
                raise DimMismatch(f"expected width {embedder.dim}, got {len(row)}")
            out.append(normalize(row))
    return out


def embed_one(text: str, embedder: Embedder) -> EmbeddingVector:
    return embed_batch([text], embedder)[0]


class CachingEmbedder:
    """Memoize raw vectors per text in front of another embedder."""

    def __init__(self, inner: Embedder, max_entries: int = 200_000):
        self.inner = inner
        self.dim = inner.dim
        self.batch_size = inner.batch_size
        self.max_entries = max_entries
        self._cache: dict[str, Sequence[float]] = {}
        self._lock = threading.Lock()

    def embed_raw(self, texts):
        with self._lock:
            missing = list(dict.fromkeys(t for t in texts if t not in self._cache))
        if missing:
            rows = self.inner.embed_raw(missing)
            if len(rows) != len(missing):
                raise DimMismatch(f"embedder returned {len(rows)} vectors for {len(missing)} texts")
            with self._lock:
                if len(self._cache) + len(missing) > self.max_entries:
                    self._cache.clear()
                fetched = dict(zip(missing, rows))
                self._cache.update(fetched)
        else:
            fetched = {}
        with self._lock:
            return [fetched[t] if t in fetched else self._cache[t] for t in texts]
