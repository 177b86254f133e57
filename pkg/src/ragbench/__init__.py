"""Retrieval-augmented question answering with iterative reasoning and a
benchmark harness."""

__version__ = "0.1.0"

from .corpus import Chunk, CorpusStore, Document, split_into_chunks, tokenize
from .embedder import EmbeddingVector, HashEmbedder, RemoteEmbedder, cosine_similarity
from .evaluation import (
    DifficultyCategory,
    Judge,
    MetricRecord,
    aggregate,
    context_similarity,
    correctness_to_pct,
)
from .generator import (
    ChatMessage,
    GenerationParams,
    RemoteGenerator,
    ScriptedBehavior,
    ScriptedGenerator,
    ScriptedRule,
    build_rag_prompt,
)
from .ooda import Conclusion, OodaReasoner, Task
from .rag import AugmentationSpec, RagAnswer, RagEngine, augment
from .vindex import RetrievalHit, VectorIndex, brute_force_rank, load_snapshot, save_snapshot

__all__ = [
    "__version__",
    "AugmentationSpec",
    "ChatMessage",
    "Chunk",
    "Conclusion",
    "CorpusStore",
    "DifficultyCategory",
    "Document",
    "EmbeddingVector",
    "GenerationParams",
    "HashEmbedder",
    "Judge",
    "MetricRecord",
    "OodaReasoner",
    "RagAnswer",
    "RagEngine",
    "RemoteEmbedder",
    "RemoteGenerator",
    "RetrievalHit",
    "ScriptedBehavior",
    "ScriptedGenerator",
    "ScriptedRule",
    "Task",
    "VectorIndex",
    "aggregate",
    "augment",
    "brute_force_rank",
    "build_rag_prompt",
    "context_similarity",
    "correctness_to_pct",
    "cosine_similarity",
    "load_snapshot",
    "save_snapshot",
    "split_into_chunks",
    "tokenize",
]
