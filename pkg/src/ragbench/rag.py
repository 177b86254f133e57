"""One-pass Retrieve -> Augment -> Generate pipeline.

``answer_one_pass`` performs exactly one retrieval and one generation call
per question and returns the full evidence trail alongside the answer.
Errors propagate with a ``stage`` label ("retrieve", "augment",
"generate") so downstream records can attribute failures.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .corpus import Tokenizer
from .embedder import EmbedderBackend
from .errors import ConfigError, EngineError, InvalidQuestion
from .generator import (
    DEFAULT_CONTEXT_BUDGET_TOKENS,
    ChatMessage,
    GenerationParams,
    GeneratorBackend,
    PromptContext,
    RAG_PROMPT_VERSION,
    build_rag_prompt,
)
from .vindex import DEFAULT_TOP_K, RetrievalHit, VectorIndex


@dataclass(frozen=True)
class RetrievedContext:
    """A retrieval hit carrying its chunk text and provenance tag.

    ``rank`` is the original retrieval rank; list order is the final
    (possibly augmented) prompt order.
    """

    chunk_id: str
    score: float
    rank: int
    text: str
    tag: str


@dataclass(frozen=True)
class RagAnswer:
    question: str
    answer_text: str
    retrieved: list[RetrievedContext]
    prompt_version: str
    config_id: str
    latency_ms: float


@dataclass(frozen=True)
class AugmentationSpec:
    """Augmentation knobs for the "A" step.

    Baseline is pure passthrough with metadata tags attached. When
    ``boost_keywords`` is non-empty, contexts containing any keyword
    (case-insensitive) move ahead of the rest, stably within each group.
    """

    boost_keywords: tuple[str, ...] = ()


def _provenance_tag(chunk_id: str, metadata: dict[str, str]) -> str:
    if not metadata:
        return chunk_id
    parts = "; ".join(f"{k}={metadata[k]}" for k in sorted(metadata))
    return f"{chunk_id}; {parts}"


def augment(contexts: list[RetrievedContext],
            spec: AugmentationSpec | None = None) -> list[RetrievedContext]:
    """Reorder contexts per the augmentation spec; always a permutation."""
    if spec is None or not spec.boost_keywords:
        return list(contexts)
    needles = tuple(k.lower() for k in spec.boost_keywords)
    hits = [c for c in contexts if any(n in c.text.lower() for n in needles)]
    rest = [c for c in contexts if not any(n in c.text.lower() for n in needles)]
    return hits + rest


class RagEngine:
    """Binds an index, an embedder and a generator into the one-pass flow."""

    def __init__(
        self,
        index: VectorIndex,
        embedder: EmbedderBackend,
        generator: GeneratorBackend,
        *,
        k: int = DEFAULT_TOP_K,
        augmentation: AugmentationSpec | None = None,
        params: GenerationParams | None = None,
        context_budget_tokens: int = DEFAULT_CONTEXT_BUDGET_TOKENS,
        tokenizer: Tokenizer | None = None,
        config_id: str = "adhoc",
    ):
        self.index = index
        self.embedder = embedder
        self.generator = generator
        self.k = k
        self.augmentation = augmentation or AugmentationSpec()
        self.params = params or GenerationParams()
        self.context_budget_tokens = context_budget_tokens
        self.tokenizer = tokenizer
        self.config_id = config_id

    def _contexts_for(self, hits: list[RetrievalHit]) -> list[RetrievedContext]:
        out = []
        for hit in hits:
            chunk = self.index.get_chunk(hit.chunk_id)
            if chunk is None:
                raise ConfigError(
                    f"chunk {hit.chunk_id!r} has no bound text; bind_chunks() after loading a snapshot")
            out.append(RetrievedContext(
                chunk_id=hit.chunk_id, score=hit.score, rank=hit.rank,
                text=chunk.text, tag=_provenance_tag(hit.chunk_id, chunk.metadata)))
        return out

    def _staged(self, exc: EngineError, stage: str) -> EngineError:
        if exc.stage is None:
            exc.stage = stage
        return exc

    def answer_one_pass(self, question: str, *, k: int | None = None) -> RagAnswer:
        if not question or not question.strip():
            raise InvalidQuestion("question must be non-empty")
        started = time.perf_counter()

        try:
            query_vec = self.embedder.embed_text(question)
            hits = self.index.retrieve_top_k(query_vec, k or self.k)
            contexts = self._contexts_for(hits)
        except EngineError as exc:
            raise self._staged(exc, "retrieve")

        try:
            ordered = augment(contexts, self.augmentation)
        except EngineError as exc:  # pragma: no cover - augment defines no errors
            raise self._staged(exc, "augment")

        messages = self.build_prompt(question, ordered)
        try:
            answer_text = self.generator.complete(messages, self.params)
        except EngineError as exc:
            raise self._staged(exc, "generate")

        return RagAnswer(
            question=question,
            answer_text=answer_text,
            retrieved=ordered,
            prompt_version=RAG_PROMPT_VERSION,
            config_id=self.config_id,
            latency_ms=(time.perf_counter() - started) * 1000.0,
        )

    def build_prompt(self, question: str, ordered: list[RetrievedContext]) -> list[ChatMessage]:
        return build_rag_prompt(
            question,
            [PromptContext(tag=c.tag, text=c.text) for c in ordered],
            budget_tokens=self.context_budget_tokens,
            tokenizer=self.tokenizer,
        )
