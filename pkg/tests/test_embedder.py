from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragbench.embedder import (
    EmbeddingVector,
    HashEmbedder,
    RemoteEmbedder,
    cosine_similarity,
)
from ragbench.errors import (
    BackendContractViolation,
    DimensionMismatch,
    EmbedderUnavailable,
    ZeroVector,
)


class TestEmbeddingVector:
    def test_normalized_at_construction(self):
        vec = EmbeddingVector.from_raw([3.0, 4.0])
        assert vec.dims == 2
        assert abs(float(np.linalg.norm(vec.as_float64())) - 1.0) < 1e-6

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVector):
            EmbeddingVector.from_raw([0.0, 0.0, 0.0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingVector.from_raw([1.0, float("nan")])

    @given(st.lists(st.floats(min_value=-100, max_value=100), min_size=1, max_size=64)
           .filter(lambda v: any(abs(x) > 1e-3 for x in v)))
    def test_unit_norm_invariant(self, values):
        vec = EmbeddingVector.from_raw(values)
        assert abs(float(np.linalg.norm(vec.as_float64())) - 1.0) < 1e-6


class TestCosineSimilarity:
    def test_identity(self):
        v = EmbeddingVector.from_raw([0.3, -0.2, 0.9])
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal(self):
        a = EmbeddingVector.from_raw([1.0, 0.0])
        b = EmbeddingVector.from_raw([0.0, 1.0])
        assert cosine_similarity(a, b) == 0.0

    def test_45_degrees(self):
        a = EmbeddingVector.from_raw([1.0, 1.0])
        b = EmbeddingVector.from_raw([1.0, 0.0])
        assert cosine_similarity(a, b) == pytest.approx(0.70710678, abs=1e-8)

    def test_dims_mismatch(self):
        a = EmbeddingVector.from_raw([1.0, 0.0])
        b = EmbeddingVector.from_raw([1.0, 0.0, 0.0])
        with pytest.raises(DimensionMismatch):
            cosine_similarity(a, b)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=40)
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a = EmbeddingVector.from_raw(rng.normal(size=32))
        b = EmbeddingVector.from_raw(rng.normal(size=32))
        assert cosine_similarity(a, b) == cosine_similarity(b, a)
        assert abs(cosine_similarity(a, b)) <= 1.0 + 1e-9


class TestHashEmbedder:
    def test_deterministic_across_instances(self):
        a = HashEmbedder(8).embed_text("revenue")
        b = HashEmbedder(8).embed_text("revenue")
        assert a.values.tobytes() == b.values.tobytes()

    def test_repetition_preserves_direction(self):
        emb = HashEmbedder(64)
        once = emb.embed_text("revenue")
        twice = emb.embed_text("revenue revenue")
        assert cosine_similarity(once, twice) == pytest.approx(1.0, abs=1e-9)

    def test_disjoint_token_sets_nearly_orthogonal(self):
        emb = HashEmbedder(4096)
        exceeded = 0
        sims = []
        for pair in range(100):
            left = " ".join(f"tok{pair}a{i}" for i in range(20))
            right = " ".join(f"tok{pair}b{i}" for i in range(20))
            sim = abs(cosine_similarity(emb.embed_text(left), emb.embed_text(right)))
            sims.append(sim)
            if sim >= 0.2:
                exceeded += 1
        assert exceeded <= 5
        assert sum(sims) / len(sims) < 0.1

    def test_dims_respected(self):
        assert HashEmbedder(17).embed_text("a b c").dims == 17

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            HashEmbedder(8).embed_text("")

    def test_batch_matches_single(self):
        emb = HashEmbedder(32)
        batch = emb.embed_batch(["alpha beta", "gamma"])
        assert batch[0].values.tobytes() == emb.embed_text("alpha beta").values.tobytes()
        assert batch[1].values.tobytes() == emb.embed_text("gamma").values.tobytes()

    def test_seed_changes_vectors(self):
        a = HashEmbedder(64, seed=1).embed_text("term")
        b = HashEmbedder(64, seed=2).embed_text("term")
        assert a.values.tobytes() != b.values.tobytes()

    def test_call_counter(self):
        emb = HashEmbedder(8)
        emb.embed_text("x")
        emb.embed_batch(["y", "z"])
        assert emb.calls == 3


class TestRemoteEmbedder:
    def test_round_trip(self, backend_server):
        emb = RemoteEmbedder(f"{backend_server}/embeddings", "stub-model", dims=8)
        vec = emb.embed_text("hello world")
        assert vec.dims == 8
        assert abs(float(np.linalg.norm(vec.as_float64())) - 1.0) < 1e-6

    def test_batch_order_preserved(self, backend_server):
        emb = RemoteEmbedder(f"{backend_server}/embeddings", "stub-model", dims=8)
        batch = emb.embed_batch(["one", "two", "three"])
        singles = [emb.embed_text(t) for t in ("one", "two", "three")]
        for got, want in zip(batch, singles):
            assert got.values.tobytes() == want.values.tobytes()

    def test_dims_contract_enforced(self, backend_server):
        emb = RemoteEmbedder(f"{backend_server}/embeddings-bad-dims", "stub-model", dims=8)
        with pytest.raises(BackendContractViolation):
            emb.embed_text("hello")

    def test_unavailable_after_retries(self, backend_server):
        emb = RemoteEmbedder(f"{backend_server}/down", "stub-model", dims=8,
                             max_retries=2, backoff_base_s=0.01)
        with pytest.raises(EmbedderUnavailable):
            emb.embed_text("hello")
