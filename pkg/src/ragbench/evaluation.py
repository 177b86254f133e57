"""Answer and retrieval quality metrics.

Binary relevancy/faithfulness verdicts and the 1-5 correctness score come
from an LLM judge driven by versioned rubric prompts; context similarity
is cosine between retrieved and reference contexts thresholded at 0.8;
correctness converts to a percentage by subtracting 1 and dividing by 4.
Aggregation partitions questions into the easier band (category codes 0-2)
and the harder band (codes 3-6).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, fields
from enum import IntEnum
from pathlib import Path
from typing import Mapping, Sequence

from .embedder import EmbedderBackend, cosine_similarity
from .errors import (
    BackendContractViolation,
    DuplicateVerdict,
    EngineError,
    InvalidScore,
    MetricUnavailable,
    ParseError,
    ReferenceMissing,
    UnknownCategory,
)
from .generator import ChatMessage, GenerationParams, GeneratorBackend
from .prompts import JUDGE_CORRECTNESS, JUDGE_FAITHFULNESS, JUDGE_RELEVANCY

CONTEXT_SIMILARITY_THRESHOLD = 0.8


class DifficultyCategory(IntEnum):
    """Question difficulty classes; codes 0-2 are the easier band."""

    RETRIEVE = 0
    COMPARE = 1
    CALC_CHANGE = 2
    CALC_COMPLEX = 3
    CALC_AND_JUDGE = 4
    EXPLAIN_FACTORS = 5
    OTHER_ADVANCED = 6

    @property
    def label(self) -> str:
        return f"{self.value}-{self.name.replace('_', '-')}"

    @property
    def band(self) -> str:
        return "easier" if self.value <= 2 else "harder"

    @classmethod
    def from_code(cls, code: int) -> "DifficultyCategory":
        try:
            return cls(code)
        except ValueError:
            raise UnknownCategory(f"category code {code!r} not in 0..6") from None


EASIER_CATEGORIES = tuple(c for c in DifficultyCategory if c.band == "easier")
HARDER_CATEGORIES = tuple(c for c in DifficultyCategory if c.band == "harder")


@dataclass(frozen=True)
class JudgeVerdict:
    metric: str  # relevancy | faithfulness | correctness
    score: float
    justification: str
    judge_backend_id: str
    prompt_version: str


def _render_contexts(contexts: Sequence[str]) -> str:
    if not contexts:
        return "(none)"
    return "\n".join(f"[{i}] {c}" for i, c in enumerate(contexts, start=1))


class Judge:
    """LLM-as-judge over a generation backend with versioned rubrics."""

    def __init__(self, backend: GeneratorBackend,
                 params: GenerationParams | None = None):
        self.backend = backend
        self.params = params or GenerationParams()

    def _ask(self, prompt: str) -> str:
        try:
            return self.backend.complete(
                [ChatMessage(role="user", content=prompt)], self.params)
        except EngineError as exc:
            raise MetricUnavailable(f"judge backend failed: {exc}") from exc

    def _parse_binary(self, metric: str, response: str, prompt_version: str) -> JudgeVerdict:
        m = re.search(r"VERDICT:\s*([01])\b", response)
        if not m:
            raise BackendContractViolation(
                f"{metric} judge did not emit a binary verdict: {response[:120]!r}")
        return JudgeVerdict(
            metric=metric,
            score=float(m.group(1)),
            justification=_extract_justification(response),
            judge_backend_id=self.backend.fingerprint(),
            prompt_version=prompt_version,
        )

    def judge_relevancy(self, query: str, response: str,
                        contexts: Sequence[str]) -> JudgeVerdict:
        """Is the response in line with the context for this query? 0 or 1."""
        if not response.strip():
            return JudgeVerdict("relevancy", 0.0, "empty response",
                                self.backend.fingerprint(), JUDGE_RELEVANCY.version_string)
        prompt = JUDGE_RELEVANCY.render(
            query=query, response=response, contexts=_render_contexts(contexts))
        return self._parse_binary("relevancy", self._ask(prompt),
                                  JUDGE_RELEVANCY.version_string)

    def judge_faithfulness(self, response: str,
                           contexts: Sequence[str]) -> JudgeVerdict:
        """Is the response supported by the retrieved context? 0 or 1."""
        if not response.strip():
            return JudgeVerdict("faithfulness", 0.0, "empty response",
                                self.backend.fingerprint(), JUDGE_FAITHFULNESS.version_string)
        if not contexts:
            return JudgeVerdict("faithfulness", 0.0, "no context can support the response",
                                self.backend.fingerprint(), JUDGE_FAITHFULNESS.version_string)
        prompt = JUDGE_FAITHFULNESS.render(
            response=response, contexts=_render_contexts(contexts))
        return self._parse_binary("faithfulness", self._ask(prompt),
                                  JUDGE_FAITHFULNESS.version_string)

    def judge_correctness(self, query: str, response: str,
                          reference_answer: str) -> JudgeVerdict:
        """1-5 score against the reference answer: 1 irrelevant, 2-3
        relevant with possible errors, 4-5 fully correct."""
        if not reference_answer:
            raise ReferenceMissing("correctness judging requires a reference answer")
        prompt = JUDGE_CORRECTNESS.render(
            query=query, response=response, reference=reference_answer)
        raw = self._ask(prompt)
        m = re.search(r"SCORE:\s*([0-9]+(?:\.[0-9]+)?)", raw)
        if not m:
            raise BackendContractViolation(
                f"correctness judge did not emit a score: {raw[:120]!r}")
        score = float(m.group(1))
        if not 1.0 <= score <= 5.0:
            # Contract enforcement: out-of-range scores are violations,
            # never clamped.
            raise BackendContractViolation(f"correctness score {score} outside [1, 5]")
        return JudgeVerdict("correctness", score, _extract_justification(raw),
                            self.backend.fingerprint(), JUDGE_CORRECTNESS.version_string)


def _extract_justification(response: str) -> str:
    m = re.search(r"JUSTIFICATION:\s*(.+)", response, re.DOTALL)
    return m.group(1).strip() if m else response.strip()


def similarity_binary(raw: float) -> int:
    """Round a raw cosine to 0/1 at the 0.8 threshold; 0.8 itself maps to 1."""
    return 1 if raw >= CONTEXT_SIMILARITY_THRESHOLD else 0


def context_similarity(embedder: EmbedderBackend,
                       retrieved_contexts: Sequence[str],
                       reference_contexts: Sequence[str]) -> tuple[float, int]:
    """(raw cosine, binary) between concatenated retrieved and reference texts.

    Retrieved texts concatenate in rank order.
    """
    if not reference_contexts:
        raise ReferenceMissing("no reference contexts to compare against")
    if not retrieved_contexts:
        raise ValueError("no retrieved contexts to compare")
    retrieved_vec = embedder.embed_text("\n\n".join(retrieved_contexts))
    reference_vec = embedder.embed_text("\n\n".join(reference_contexts))
    raw = cosine_similarity(retrieved_vec, reference_vec)
    return raw, similarity_binary(raw)


def correctness_to_pct(score: float) -> float:
    """Map a 1-5 correctness score to [0, 1]: (score - 1) / 4."""
    if not 1.0 <= score <= 5.0:
        raise InvalidScore(f"correctness score {score} outside [1, 5]")
    return (score - 1.0) / 4.0


def percent_half_up(fraction: float) -> int:
    """Render a fraction as an integer percent, rounding half up."""
    return int(math.floor(fraction * 100.0 + 0.5))


@dataclass
class MetricRecord:
    """Per-question, per-configuration outcome with all metric scores.

    Metric fields are None when a judge was unavailable or the answer
    stage failed; ``status`` is "ok" or "failed" and ``error`` carries the
    stage-labelled reason. ``trace_ref`` links iterative-reasoning records
    to their episode trace file.
    """

    question_id: str
    config_id: str
    status: str = "ok"
    answer_text: str | None = None
    relevancy: float | None = None
    faithfulness: float | None = None
    context_similarity_raw: float | None = None
    context_similarity_binary: int | None = None
    correctness_raw: float | None = None
    correctness_pct: float | None = None
    human_correct: int | None = None
    trace_ref: str | None = None
    error: str | None = None

    def __post_init__(self) -> None:
        if self.relevancy is not None and self.relevancy not in (0.0, 1.0):
            raise InvalidScore(f"relevancy must be 0 or 1, got {self.relevancy}")
        if self.faithfulness is not None and self.faithfulness not in (0.0, 1.0):
            raise InvalidScore(f"faithfulness must be 0 or 1, got {self.faithfulness}")
        if self.correctness_raw is not None:
            expected = correctness_to_pct(self.correctness_raw)
            if self.correctness_pct is None:
                self.correctness_pct = expected
            elif abs(self.correctness_pct - expected) > 1e-12:
                raise InvalidScore(
                    f"correctness_pct {self.correctness_pct} inconsistent with raw {self.correctness_raw}")
        if self.context_similarity_raw is not None:
            expected_bin = similarity_binary(self.context_similarity_raw)
            if self.context_similarity_binary is None:
                self.context_similarity_binary = expected_bin
            elif self.context_similarity_binary != expected_bin:
                raise InvalidScore("context_similarity_binary inconsistent with the 0.8 rule")
        if self.human_correct is not None and self.human_correct not in (0, 1):
            raise InvalidScore(f"human_correct must be 0 or 1, got {self.human_correct}")

    def to_json(self) -> str:
        payload = {f.name: getattr(self, f.name) for f in fields(self)}
        return json.dumps(payload, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricRecord":
        return cls(**json.loads(line))


def save_records(records: Sequence[MetricRecord], path: str | Path) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")
    return len(records)


def load_records(path: str | Path) -> list[MetricRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(MetricRecord.from_json(line))
            except (json.JSONDecodeError, TypeError, InvalidScore) as exc:
                raise ParseError(f"bad metric record: {exc}", line=lineno, path=str(path)) from exc
    return records


def load_human_verdicts(path: str | Path,
                        known_question_ids: set[str]) -> dict[str, int]:
    """Read line-delimited {question_id, verdict, grader_id, note?} rows.

    Verdicts are binary; unknown question ids, non-binary verdicts and
    malformed rows are rejected with their row numbers.
    """
    verdicts: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                qid = row["question_id"]
                verdict = row["verdict"]
                row["grader_id"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad human-verdict row: {exc}", line=lineno, path=str(path)) from exc
            if verdict not in (0, 1):
                raise ParseError(f"verdict must be 0 or 1, got {verdict!r}",
                                 line=lineno, path=str(path))
            if qid not in known_question_ids:
                raise ParseError(f"unknown question_id {qid!r}", line=lineno, path=str(path))
            if qid in verdicts:
                raise DuplicateVerdict(f"duplicate verdict for question {qid!r} at row {lineno}")
            verdicts[qid] = int(verdict)
    return verdicts


def merge_human_verdicts(records: Sequence[MetricRecord],
                         verdicts: Mapping[str, int]) -> list[MetricRecord]:
    """Return new records with human_correct filled where a verdict exists."""
    merged = []
    for record in records:
        if record.question_id in verdicts:
            payload = {f.name: getattr(record, f.name) for f in fields(record)}
            payload["human_correct"] = verdicts[record.question_id]
            merged.append(MetricRecord(**payload))
        else:
            merged.append(record)
    return merged


@dataclass(frozen=True)
class BandStat:
    question_count: int
    graded_count: int
    human_mean: float | None  # None when no question in the band is graded


@dataclass(frozen=True)
class AggregateReport:
    easier: BandStat
    harder: BandStat
    overall: BandStat
    auto_correctness_mean: float | None
    relevancy_mean: float | None
    faithfulness_mean: float | None
    context_similarity_mean: float | None


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _band_stat(records: list[MetricRecord]) -> BandStat:
    graded = [r.human_correct for r in records if r.human_correct is not None]
    return BandStat(
        question_count=len(records),
        graded_count=len(graded),
        human_mean=_mean([float(v) for v in graded]),
    )


def aggregate(records: Sequence[MetricRecord],
              categories: Mapping[str, DifficultyCategory]) -> AggregateReport:
    """Band-partitioned means over one configuration's records.

    Human columns average the binary human verdicts per band; automated
    correctness and the retrieval metrics average over all records that
    carry the metric. Empty bands report None (rendered N/A downstream).
    """
    for record in records:
        if record.question_id not in categories:
            raise UnknownCategory(f"no category for question {record.question_id!r}")
    easier = [r for r in records if categories[r.question_id].band == "easier"]
    harder = [r for r in records if categories[r.question_id].band == "harder"]
    return AggregateReport(
        easier=_band_stat(easier),
        harder=_band_stat(harder),
        overall=_band_stat(list(records)),
        auto_correctness_mean=_mean(
            [r.correctness_pct for r in records if r.correctness_pct is not None]),
        relevancy_mean=_mean(
            [r.relevancy for r in records if r.relevancy is not None]),
        faithfulness_mean=_mean(
            [r.faithfulness for r in records if r.faithfulness is not None]),
        context_similarity_mean=_mean(
            [r.context_similarity_raw for r in records if r.context_similarity_raw is not None]),
    )
