"""Embedding backends and similarity arithmetic.

Two backends: a remote HTTP endpoint speaking the prevailing embeddings
wire shape, and a deterministic hashed bag-of-tokens mock for hermetic
runs. All vectors are L2-normalized at the construction boundary so index
similarity reduces to a dot product.
"""

from __future__ import annotations

import hashlib
import logging
import threading
import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import requests

from .corpus import Tokenizer, WordTokenizer
from .errors import (
    BackendContractViolation,
    DimensionMismatch,
    EmbedderUnavailable,
    ZeroVector,
)

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 32
DEFAULT_RETRIES = 3
DEFAULT_BACKOFF_BASE_S = 0.5
DEFAULT_HASH_SEED = 1315423911


@dataclass(frozen=True)
class EmbeddingVector:
    """Unit-norm vector; values are float32 so persistence is bit-exact."""

    dims: int
    values: np.ndarray

    @classmethod
    def from_raw(cls, raw: Sequence[float] | np.ndarray) -> "EmbeddingVector":
        arr = np.asarray(raw, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding contains non-finite entries")
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise ZeroVector("cannot normalize a zero vector")
        out = (arr / norm).astype(np.float32)
        out.setflags(write=False)
        return cls(dims=out.size, values=out)

    def as_float64(self) -> np.ndarray:
        return self.values.astype(np.float64)


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """dot(a, b) / (|a| |b|), symmetric under fixed summation order."""
    if a.dims != b.dims:
        raise DimensionMismatch(f"dims {a.dims} != {b.dims}")
    av, bv = a.as_float64(), b.as_float64()
    na, nb = float(np.linalg.norm(av)), float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine undefined for zero vector")
    return float(np.dot(av, bv) / (na * nb))


class EmbedderBackend(Protocol):
    dims: int

    def fingerprint(self) -> str: ...

    def embed_text(self, text: str) -> EmbeddingVector: ...

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


class HashEmbedder:
    """Deterministic hashed bag-of-tokens embedding.

    Each token is hashed with a keyed 64-bit hash; the hash picks an index
    in [0, dims) and a sign, and the vector is the signed token-count
    accumulation, L2-normalized. Equal texts give bitwise-equal vectors on
    every platform, and token overlap gives retrieval tests real
    discriminative power.
    """

    def __init__(self, dims: int, *, seed: int = DEFAULT_HASH_SEED,
                 tokenizer: Tokenizer | None = None):
        if dims < 1:
            raise ValueError("dims must be >= 1")
        self.dims = dims
        self.seed = seed
        self._tokenizer = tokenizer or WordTokenizer()
        self._key = seed.to_bytes(8, "little", signed=False)
        self.calls = 0
        self._lock = threading.Lock()

    def fingerprint(self) -> str:
        return f"hash_mock(dims={self.dims},seed={self.seed})"

    def _token_hash(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
        return int.from_bytes(digest, "little")

    def embed_text(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("cannot embed empty text")
        tokens = self._tokenizer.tokenize(text)
        if not tokens:
            raise ValueError("text has no tokens")
        acc = np.zeros(self.dims, dtype=np.float64)
        for token in tokens:
            h = self._token_hash(token)
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            acc[h % self.dims] += sign
        with self._lock:
            self.calls += 1
        if not np.any(acc):
            # Sign cancellations can zero the accumulation on tiny dims.
            raise ZeroVector("token hash accumulation cancelled to zero")
        return EmbeddingVector.from_raw(acc)

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self.embed_text(t) for t in texts]


class RemoteEmbedder:
    """HTTP embeddings client with bounded retry and exponential backoff.

    Wire shape: POST {model, input: [str, ...]} to the endpoint; response
    {"data": [{"index": int, "embedding": [float, ...]}, ...]}.
    """

    def __init__(self, endpoint: str, model_name: str, dims: int, *,
                 timeout_s: float = 30.0,
                 max_retries: int = DEFAULT_RETRIES,
                 backoff_base_s: float = DEFAULT_BACKOFF_BASE_S,
                 batch_size: int = DEFAULT_BATCH_SIZE,
                 session: requests.Session | None = None):
        self.endpoint = endpoint
        self.model_name = model_name
        self.dims = dims
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s
        self.batch_size = batch_size
        self._session = session or requests.Session()
        self.calls = 0
        self._lock = threading.Lock()

    def fingerprint(self) -> str:
        return f"remote(endpoint={self.endpoint},model={self.model_name},dims={self.dims})"

    def _post(self, texts: Sequence[str]) -> list[list[float]]:
        payload = {"model": self.model_name, "input": list(texts)}
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_base_s * (2 ** (attempt - 1)))
            try:
                resp = self._session.post(self.endpoint, json=payload, timeout=self.timeout_s)
                resp.raise_for_status()
                body = resp.json()
                break
            except (requests.RequestException, ValueError) as exc:
                logger.warning("embedding request failed (attempt %d): %s", attempt + 1, exc)
                last_exc = exc
        else:
            raise EmbedderUnavailable(
                f"embedding endpoint failed after {self.max_retries + 1} attempts") from last_exc

        try:
            rows = sorted(body["data"], key=lambda r: r["index"])
            vectors = [row["embedding"] for row in rows]
        except (KeyError, TypeError) as exc:
            raise BackendContractViolation(f"malformed embeddings response: {exc}") from exc
        if len(vectors) != len(texts):
            raise BackendContractViolation(
                f"expected {len(texts)} embeddings, got {len(vectors)}")
        return vectors

    def embed_text(self, text: str) -> EmbeddingVector:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if any(not t for t in texts):
            raise ValueError("cannot embed empty text")
        out: list[EmbeddingVector] = []
        for i in range(0, len(texts), self.batch_size):
            batch = texts[i:i + self.batch_size]
            for values in self._post(batch):
                if len(values) != self.dims:
                    raise BackendContractViolation(
                        f"backend returned {len(values)} dims, expected {self.dims}")
                out.append(EmbeddingVector.from_raw(values))
            with self._lock:
                self.calls += len(batch)
        return out
