"""In-memory vector index with exact top-k cosine retrieval.

Retrieval is a linear scan over normalized vectors (dot product == cosine),
so results are exact, and a brute-force pairwise oracle is provided for
verification. Ranking is deterministic: scores are rounded to 12
significant digits and ties break by chunk_id ascending, which makes
rankings independent of insertion order and immune to last-ulp noise.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import Chunk
from .embedder import EmbeddingVector, cosine_similarity
from .errors import DimensionMismatch, DuplicateChunk, EmptyIndex, ParseError

DEFAULT_TOP_K = 10


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: str
    score: float
    rank: int


def _round_sig(score: float) -> float:
    # 12 significant digits: the tie-comparison granularity.
    return float(f"{score:.12g}")


class VectorIndex:
    """chunk_id -> unit vector store with exact top-k search.

    Build phase is exclusive-writer; queries are read-only and safe for
    concurrent readers.
    """

    def __init__(self, dims: int):
        if dims < 1:
            raise ValueError("dims must be >= 1")
        self.dims = dims
        self._vectors: dict[str, EmbeddingVector] = {}
        self._chunks: dict[str, Chunk] = {}
        self._matrix: np.ndarray | None = None
        self._matrix_ids: list[str] = []
        self._row_norms: np.ndarray | None = None
        self._matrix_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._vectors)

    def chunk_ids(self) -> list[str]:
        return list(self._vectors)

    def vectors(self) -> Mapping[str, EmbeddingVector]:
        return dict(self._vectors)

    def get_chunk(self, chunk_id: str) -> Chunk | None:
        return self._chunks.get(chunk_id)

    def add_vector(self, chunk_id: str, vector: EmbeddingVector) -> None:
        if chunk_id in self._vectors:
            raise DuplicateChunk(f"chunk {chunk_id!r} already indexed")
        if vector.dims != self.dims:
            raise DimensionMismatch(f"vector dims {vector.dims} != index dims {self.dims}")
        self._vectors[chunk_id] = vector
        self._matrix = None

    def add_chunk(self, chunk: Chunk, vector: EmbeddingVector) -> None:
        self.add_vector(chunk.chunk_id, vector)
        self._chunks[chunk.chunk_id] = chunk

    def bind_chunks(self, chunks: list[Chunk]) -> int:
        """Attach chunk objects (e.g. after loading a vector snapshot)."""
        bound = 0
        for chunk in chunks:
            if chunk.chunk_id in self._vectors:
                self._chunks[chunk.chunk_id] = chunk
                bound += 1
        return bound

    def _ensure_matrix(self) -> tuple[list[str], np.ndarray, np.ndarray]:
        # Concurrent readers may race to build the cache after the last add.
        with self._matrix_lock:
            if self._matrix is None:
                self._matrix_ids = list(self._vectors)
                self._matrix = np.stack(
                    [self._vectors[cid].as_float64() for cid in self._matrix_ids])
                self._row_norms = np.linalg.norm(self._matrix, axis=1)
            return self._matrix_ids, self._matrix, self._row_norms

    def retrieve_top_k(self, query_vector: EmbeddingVector, k: int = DEFAULT_TOP_K) -> list[RetrievalHit]:
        """Exact top-k by cosine; k is clamped to the index size."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self._vectors:
            raise EmptyIndex("cannot retrieve from an empty index")
        if query_vector.dims != self.dims:
            raise DimensionMismatch(f"query dims {query_vector.dims} != index dims {self.dims}")
        ids, matrix, row_norms = self._ensure_matrix()
        query = query_vector.as_float64()
        # True cosine, not raw dot: stored vectors are float32-quantized
        # unit vectors, so raw dots can stray past 1 by ~1e-7.
        scores = (matrix @ query) / (row_norms * float(np.linalg.norm(query)))
        order = sorted(range(len(ids)), key=lambda i: (-_round_sig(float(scores[i])), ids[i]))
        return [
            RetrievalHit(chunk_id=ids[i], score=float(scores[i]), rank=rank)
            for rank, i in enumerate(order[:k], start=1)
        ]


def brute_force_rank(entries: Mapping[str, EmbeddingVector],
                     query_vector: EmbeddingVector) -> list[RetrievalHit]:
    """Oracle: full ranking by direct pairwise cosine, same tie rule."""
    if not entries:
        raise EmptyIndex("no entries to rank")
    scored = [(cid, cosine_similarity(vec, query_vector)) for cid, vec in entries.items()]
    scored.sort(key=lambda item: (-_round_sig(item[1]), item[0]))
    return [
        RetrievalHit(chunk_id=cid, score=score, rank=rank)
        for rank, (cid, score) in enumerate(scored, start=1)
    ]


def save_snapshot(index: VectorIndex, path: str | Path, *, fingerprint: str) -> None:
    """Persist vectors: a JSON header line, then one record per entry.

    Vector bytes are little-endian float32 base64, so a round-trip is
    bit-exact.
    """
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "dims": index.dims,
            "count": len(index),
            "fingerprint": fingerprint,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for chunk_id, vec in index.vectors().items():
            data = vec.values.astype("<f4", copy=False).tobytes()
            record = {"chunk_id": chunk_id, "vector": base64.b64encode(data).decode("ascii")}
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def load_snapshot(path: str | Path) -> tuple[VectorIndex, str]:
    """Load a snapshot; returns (index, fingerprint)."""
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
            dims, count, fingerprint = header["dims"], header["count"], header["fingerprint"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"bad snapshot header: {exc}", line=1, path=str(path)) from exc
        index = VectorIndex(dims)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                raw = base64.b64decode(record["vector"])
                values = np.frombuffer(raw, dtype="<f4")
                # Stored vectors are already normalized float32; rebuild
                # them verbatim so the round-trip stays bit-exact.
                index.add_vector(record["chunk_id"], EmbeddingVector(dims=len(values), values=values))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ParseError(f"bad snapshot record: {exc}", line=lineno, path=str(path)) from exc
    if len(index) != count:
        raise ParseError(f"snapshot count {count} != {len(index)} records", path=str(path))
    return index, fingerprint
