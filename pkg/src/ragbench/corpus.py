"""Document ingestion and token-bounded chunking.

The engine tokenizer splits on whitespace and treats punctuation marks as
standalone tokens. It is deterministic and dependency-free; anything
implementing the :class:`Tokenizer` protocol (e.g. a subword tokenizer)
can be substituted wherever a tokenizer is accepted.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .errors import DuplicateDocument, EmptyDocument, InvalidChunkSpec, ParseError

_TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_SENTENCE_END = {".", "!", "?"}

DEFAULT_CHUNK_SIZE = 1024
DEFAULT_CHUNK_OVERLAP = 0


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> list[str]: ...

    def token_spans(self, text: str) -> list[tuple[int, int]]: ...


class WordTokenizer:
    """Whitespace tokenizer with punctuation as standalone tokens."""

    def tokenize(self, text: str) -> list[str]:
        return _TOKEN_PATTERN.findall(text)

    def token_spans(self, text: str) -> list[tuple[int, int]]:
        """Character (start, end) span of each token, in order."""
        return [m.span() for m in _TOKEN_PATTERN.finditer(text)]

    def count(self, text: str) -> int:
        return len(_TOKEN_PATTERN.findall(text))


DEFAULT_TOKENIZER = WordTokenizer()


def tokenize(text: str) -> list[str]:
    """Tokenize with the engine default tokenizer."""
    return DEFAULT_TOKENIZER.tokenize(text)


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    metadata: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class Chunk:
    """A token-bounded slice of a source document.

    ``chunk_id`` is ``{doc_id}#{seq}``; ``metadata`` inherits the document
    metadata plus the chunk's ``seq``.
    """

    chunk_id: str
    doc_id: str
    seq: int
    text: str
    token_count: int
    metadata: dict[str, str] = field(default_factory=dict)


class CorpusStore:
    """In-memory document store with line-delimited persistence.

    Ingestion is exclusive-writer; once loaded, reads are safe from any
    number of concurrent readers.
    """

    def __init__(self) -> None:
        self._docs: dict[str, Document] = {}

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def get(self, doc_id: str) -> Document:
        return self._docs[doc_id]

    def documents(self) -> list[Document]:
        return list(self._docs.values())

    def ingest_document(self, doc_id: str, text: str, metadata: dict[str, str] | None = None) -> Document:
        if doc_id in self._docs:
            raise DuplicateDocument(f"document {doc_id!r} already ingested")
        if not text:
            raise EmptyDocument(f"document {doc_id!r} has empty text")
        doc = Document(doc_id=doc_id, text=text, metadata=dict(metadata or {}))
        self._docs[doc_id] = doc
        return doc

    def ingest_text_file(self, path: str | Path) -> Document:
        """Ingest one UTF-8 plain-text file; the filename stem is the doc id."""
        p = Path(path)
        return self.ingest_document(p.stem, p.read_text(encoding="utf-8"))

    def ingest_record_file(self, path: str | Path) -> list[Document]:
        """Ingest a line-delimited record file with {doc_id, text, metadata}."""
        docs = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    docs.append(self.ingest_document(row["doc_id"], row["text"], row.get("metadata", {})))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ParseError(f"bad corpus record: {exc}", line=lineno, path=str(path)) from exc
        return docs

    def save(self, path: str | Path) -> int:
        with open(path, "w", encoding="utf-8") as fh:
            for doc in self._docs.values():
                fh.write(json.dumps(
                    {"doc_id": doc.doc_id, "text": doc.text, "metadata": doc.metadata},
                    ensure_ascii=False, sort_keys=True))
                fh.write("\n")
        return len(self._docs)

    @classmethod
    def load(cls, path: str | Path) -> "CorpusStore":
        store = cls()
        store.ingest_record_file(path)
        return store


def split_into_chunks(
    document: Document,
    chunk_size_tokens: int = DEFAULT_CHUNK_SIZE,
    overlap_tokens: int = DEFAULT_CHUNK_OVERLAP,
    *,
    tokenizer: Tokenizer | None = None,
    snap_to_sentence: bool = False,
) -> list[Chunk]:
    """Split a document into chunks of at most ``chunk_size_tokens`` tokens.

    Consecutive chunks share exactly ``overlap_tokens`` tokens (except
    possibly at the final chunk) and every source token lands in at least
    one chunk. Chunk text is the original character span, so the source
    formatting inside a chunk is preserved.

    With ``snap_to_sentence``, a chunk boundary backs up to the nearest
    sentence-ending punctuation within 10% of the chunk size.
    """
    if chunk_size_tokens < 1:
        raise InvalidChunkSpec(f"chunk size must be >= 1, got {chunk_size_tokens}")
    if overlap_tokens < 0 or overlap_tokens >= chunk_size_tokens:
        raise InvalidChunkSpec(
            f"overlap must satisfy 0 <= overlap < size, got overlap={overlap_tokens} size={chunk_size_tokens}")

    tok = tokenizer or DEFAULT_TOKENIZER
    spans = tok.token_spans(document.text)
    n = len(spans)
    if n == 0:
        return []

    chunks: list[Chunk] = []
    start = 0
    while start < n:
        end = min(start + chunk_size_tokens, n)
        if snap_to_sentence and end < n:
            end = _snap_back(document.text, spans, start, end, chunk_size_tokens, overlap_tokens)
        text = document.text[spans[start][0]:spans[end - 1][1]]
        seq = len(chunks)
        chunks.append(Chunk(
            chunk_id=f"{document.doc_id}#{seq}",
            doc_id=document.doc_id,
            seq=seq,
            text=text,
            token_count=end - start,
            metadata={**document.metadata, "seq": str(seq)},
        ))
        if end >= n:
            break
        start = end - overlap_tokens
    return chunks


def _snap_back(text: str, spans: list[tuple[int, int]], start: int, end: int,
               size: int, overlap: int) -> int:
    # Back up at most 10% of the chunk size, and never so far that the
    # chunk no longer advances past the overlap.
    budget = max(1, size // 10)
    floor = max(start + overlap + 1, end - budget)
    for i in range(end - 1, floor - 1, -1):
        if text[spans[i][0]:spans[i][1]] in _SENTENCE_END:
            return i + 1
    return end


def chunk_corpus(
    store: CorpusStore,
    chunk_size_tokens: int = DEFAULT_CHUNK_SIZE,
    overlap_tokens: int = DEFAULT_CHUNK_OVERLAP,
    *,
    tokenizer: Tokenizer | None = None,
    snap_to_sentence: bool = False,
) -> list[Chunk]:
    """Chunk every document in the store, in ingestion order."""
    out: list[Chunk] = []
    for doc in store.documents():
        out.extend(split_into_chunks(
            doc, chunk_size_tokens, overlap_tokens,
            tokenizer=tokenizer, snap_to_sentence=snap_to_sentence))
    return out


def ingest_paths(store: CorpusStore, paths: Iterable[str | Path]) -> list[Document]:
    """Ingest a mix of .txt files, record files (.jsonl), and directories."""
    docs: list[Document] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            for child in sorted(p.iterdir()):
                if child.suffix == ".txt":
                    docs.append(store.ingest_text_file(child))
                elif child.suffix == ".jsonl":
                    docs.extend(store.ingest_record_file(child))
        elif p.suffix == ".jsonl":
            docs.extend(store.ingest_record_file(p))
        else:
            docs.append(store.ingest_text_file(p))
    return docs
