"""Fine-tuning dataset preparation and export.

Builds query-context-answer triplets either by prompting a generator over
corpus chunks (numbered Q:/A: blocks; unparseable output is rejected,
never repaired) or by pairing benchmark questions with their reference
contexts. Exports ship in the prevailing ingestion formats of external
tuning services: query-context pairs for embedder tuning, and
query-answer conversations with no context text for generator tuning.
Training itself happens elsewhere.
"""

from __future__ import annotations

import json
import logging
import os
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .benchmark import BenchmarkQuestion
from .corpus import Chunk
from .errors import EngineError, InvalidSample, ParseError
from .generator import ChatMessage, GenerationParams, GeneratorBackend
from .prompts import TRIPLET_GEN

logger = logging.getLogger(__name__)

DEFAULT_PER_CHUNK = 3

_PAIR_SPLIT = re.compile(r"^\s*\d+\.\s*Q:", re.MULTILINE)
_ANSWER_SPLIT = re.compile(r"^A:", re.MULTILINE)


@dataclass(frozen=True)
class Triplet:
    """One fine-tuning example.

    ``chunk_id`` is the provenance id: the source chunk for generated
    triplets, the source question for dataset-derived ones.
    """

    query: str
    context: str
    answer: str
    chunk_id: str
    origin: str  # generated | dataset


@dataclass
class TripletGenerationResult:
    triplets: list[Triplet] = field(default_factory=list)
    rejections: list[dict] = field(default_factory=list)

    @property
    def error_summary(self) -> str:
        return "; ".join(f"{r['chunk_id']}: {r['reason']}" for r in self.rejections)


def _parse_pairs(response: str) -> list[tuple[str, str]]:
    pairs = []
    for segment in _PAIR_SPLIT.split(response)[1:]:
        parts = _ANSWER_SPLIT.split(segment, maxsplit=1)
        if len(parts) != 2:
            continue
        query = parts[0].strip()
        answer = _PAIR_SPLIT.split(parts[1])[0].strip()
        if query and answer:
            pairs.append((query, answer))
    return pairs


def generate_triplets(chunks: Sequence[Chunk], generator: GeneratorBackend,
                      per_chunk: int = DEFAULT_PER_CHUNK,
                      params: GenerationParams | None = None) -> TripletGenerationResult:
    """Prompt the generator for ``per_chunk`` Q/A pairs over each chunk.

    Chunks whose output parses short of ``per_chunk`` pairs get a
    rejection entry; generator failures are recorded the same way and the
    run continues, so a partial result is always returned.
    """
    if per_chunk < 1:
        raise ValueError("per_chunk must be >= 1")
    result = TripletGenerationResult()
    for chunk in chunks:
        prompt = TRIPLET_GEN.render(n=per_chunk, context=chunk.text)
        try:
            response = generator.complete(
                [ChatMessage(role="user", content=prompt)], params)
        except EngineError as exc:
            result.rejections.append(
                {"chunk_id": chunk.chunk_id, "reason": f"generator failed: {exc}"})
            continue
        pairs = _parse_pairs(response)[:per_chunk]
        if len(pairs) < per_chunk:
            result.rejections.append({
                "chunk_id": chunk.chunk_id,
                "reason": f"parsed {len(pairs)} of {per_chunk} pairs"})
        for query, answer in pairs:
            result.triplets.append(Triplet(
                query=query, context=chunk.text, answer=answer,
                chunk_id=chunk.chunk_id, origin="generated"))
    return result


def triplets_from_dataset(questions: Sequence[BenchmarkQuestion]) -> list[Triplet]:
    """One triplet per (question, reference context) pairing."""
    triplets = []
    for q in questions:
        if not q.reference_contexts:
            logger.info("question %s has no reference contexts; skipped", q.question_id)
            continue
        for ctx in q.reference_contexts:
            triplets.append(Triplet(
                query=q.question, context=ctx, answer=q.reference_answer,
                chunk_id=q.question_id, origin="dataset"))
    return triplets


def sample_subset(triplets: Sequence[Triplet], n: int, seed: int) -> list[Triplet]:
    """Seed-deterministic sample without replacement."""
    if n > len(triplets):
        raise InvalidSample(f"cannot sample {n} from {len(triplets)} triplets")
    return random.Random(seed).sample(list(triplets), n)


def _atomic_write(path: str | Path, lines: list[str]) -> int:
    tmp = Path(str(path) + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
        os.replace(tmp, path)
    except OSError:
        tmp.unlink(missing_ok=True)
        raise
    return len(lines)


def export_embedder_pairs(triplets: Sequence[Triplet], path: str | Path) -> int:
    """Write {query, positive_context, chunk_id} records for embedder tuning."""
    lines = [
        json.dumps({"query": t.query, "positive_context": t.context, "chunk_id": t.chunk_id},
                   ensure_ascii=False, sort_keys=True)
        for t in triplets
    ]
    return _atomic_write(path, lines)


def export_generator_pairs(triplets: Sequence[Triplet], path: str | Path) -> int:
    """Write query-answer conversations for generator tuning.

    The context field is excluded at the field level: answering behavior
    is tuned to depend on the query alone, not on retrieved documents.
    """
    lines = [
        json.dumps({
            "messages": [
                {"role": "user", "content": t.query},
                {"role": "assistant", "content": t.answer},
            ],
            "chunk_id": t.chunk_id,
        }, ensure_ascii=False, sort_keys=True)
        for t in triplets
    ]
    return _atomic_write(path, lines)


def load_embedder_pairs(path: str | Path) -> list[dict]:
    return _load_jsonl(path, required=("query", "positive_context", "chunk_id"))


def load_generator_pairs(path: str | Path) -> list[dict]:
    return _load_jsonl(path, required=("messages", "chunk_id"))


def _load_jsonl(path: str | Path, required: tuple[str, ...]) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                for key in required:
                    row[key]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad export row: {exc}", line=lineno, path=str(path)) from exc
            rows.append(row)
    return rows


def save_rejections(rejections: Sequence[dict], path: str | Path) -> int:
    lines = [json.dumps(r, ensure_ascii=False, sort_keys=True) for r in rejections]
    return _atomic_write(path, lines)
