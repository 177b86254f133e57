"""Dataset loading, system configurations, benchmark runs and reports.

A run materializes system configurations (retriever backend x generator
backend x reasoning mode), answers every question in the chosen split,
scores each answer, and renders a retrieval-quality table and an
answer-correctness table. Iterative-reasoning configurations are excluded
from the retrieval-quality table because their multi-step retrievals are
not comparable to the one-pass systems.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .embedder import EmbedderBackend
from .errors import (
    BackendContractViolation,
    EngineError,
    InvalidSplit,
    ManifestWriteFailure,
    MetricUnavailable,
    ParseError,
    ReferenceMissing,
    UnknownCategory,
)
from .evaluation import (
    AggregateReport,
    DifficultyCategory,
    Judge,
    MetricRecord,
    aggregate,
    context_similarity,
    load_records,
    percent_half_up,
    save_records,
)
from .corpus import Chunk
from .generator import GeneratorBackend, RAG_PROMPT_VERSION
from .ooda import OodaReasoner, Task
from .rag import RagEngine
from .vindex import VectorIndex

logger = logging.getLogger(__name__)

DEFAULT_ONE_PASS_TIMEOUT_S = 120.0
DEFAULT_OODA_TIMEOUT_S = 600.0


@dataclass(frozen=True)
class BenchmarkQuestion:
    question_id: str
    question: str
    reference_answer: str
    reference_contexts: tuple[str, ...]
    source_doc_ids: tuple[str, ...]
    category: DifficultyCategory

    def __post_init__(self) -> None:
        for name in ("question_id", "question", "reference_answer"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")


def dataset_fingerprint(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_dataset(path: str | Path) -> list[BenchmarkQuestion]:
    """Load line-delimited benchmark questions, validating every row."""
    questions: list[BenchmarkQuestion] = []
    seen: set[str] = set()
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read dataset: {exc}", path=str(path)) from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad dataset row: {exc}", line=lineno, path=str(path)) from exc
            try:
                code = row["category"]
                if not isinstance(code, int) or isinstance(code, bool):
                    raise UnknownCategory(f"category must be an integer code, got {code!r}")
                category = DifficultyCategory.from_code(code)
                question = BenchmarkQuestion(
                    question_id=row["question_id"],
                    question=row["question"],
                    reference_answer=row["reference_answer"],
                    reference_contexts=tuple(row.get("reference_contexts", [])),
                    source_doc_ids=tuple(row.get("source_doc_ids", [])),
                    category=category,
                )
            except UnknownCategory as exc:
                raise UnknownCategory(f"{exc} [line {lineno}]") from None
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad dataset row: {exc}", line=lineno, path=str(path)) from exc
            if question.question_id in seen:
                raise ParseError(f"duplicate question_id {question.question_id!r}",
                                 line=lineno, path=str(path))
            seen.add(question.question_id)
            questions.append(question)
    if not questions:
        logger.warning("dataset %s is empty", path)
    return questions


def save_dataset(questions: Sequence[BenchmarkQuestion], path: str | Path) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(json.dumps({
                "question_id": q.question_id,
                "question": q.question,
                "reference_answer": q.reference_answer,
                "reference_contexts": list(q.reference_contexts),
                "source_doc_ids": list(q.source_doc_ids),
                "category": int(q.category),
            }, ensure_ascii=False, sort_keys=True) + "\n")
    return len(questions)


def convert_financebench(path: str | Path,
                         category_map: Mapping[str, int],
                         ) -> tuple[list[BenchmarkQuestion], list[dict]]:
    """Convert the public distribution's column layout to our dataset rows.

    ``category_map`` assigns a difficulty code to each source question id.
    Rows with broken or missing document sources (or without a category
    assignment) are flagged and returned separately, never guessed at.
    """
    questions: list[BenchmarkQuestion] = []
    flagged: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                qid = row["financebench_id"]
                question = row["question"]
                answer = row["answer"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"bad source row: {exc}", line=lineno, path=str(path)) from exc

            evidence = row.get("evidence") or []
            if isinstance(evidence, list):
                contexts = tuple(e.get("evidence_text", "") for e in evidence if isinstance(e, dict))
            else:
                contexts = (str(evidence),)
            contexts = tuple(c for c in contexts if c)
            doc_ids = tuple(d for d in [row.get("doc_name", "")] if d)

            if not doc_ids:
                flagged.append({"line": lineno, "question_id": qid, "reason": "missing document source"})
                continue
            if qid not in category_map:
                flagged.append({"line": lineno, "question_id": qid, "reason": "no category assignment"})
                continue
            questions.append(BenchmarkQuestion(
                question_id=qid,
                question=question,
                reference_answer=answer,
                reference_contexts=contexts,
                source_doc_ids=doc_ids,
                category=DifficultyCategory.from_code(category_map[qid]),
            ))
    return questions, flagged


def split_train_test(questions: Sequence[BenchmarkQuestion], n_train: int,
                     seed: int) -> tuple[list[BenchmarkQuestion], list[BenchmarkQuestion]]:
    """Seed-deterministic disjoint split into (n_train, rest), preserving
    dataset order within each side."""
    if n_train >= len(questions):
        raise InvalidSplit(f"n_train={n_train} must be < dataset size {len(questions)}")
    if n_train < 0:
        raise InvalidSplit("n_train must be >= 0")
    ids = sorted(q.question_id for q in questions)
    rng = random.Random(seed)
    rng.shuffle(ids)
    train_ids = set(ids[:n_train])
    train = [q for q in questions if q.question_id in train_ids]
    test = [q for q in questions if q.question_id not in train_ids]
    return train, test


# -- configurations ----------------------------------------------------------

@dataclass(frozen=True)
class BackendRef:
    variant: str  # generic | fine_tuned
    backend_id: str

    def __post_init__(self) -> None:
        if self.variant not in ("generic", "fine_tuned"):
            raise ValueError(f"unknown variant {self.variant!r}")


@dataclass(frozen=True)
class ReasoningSpec:
    mode: str  # one_pass | ooda
    max_iterations: int = 5

    def __post_init__(self) -> None:
        if self.mode not in ("one_pass", "ooda"):
            raise ValueError(f"unknown reasoning mode {self.mode!r}")


@dataclass(frozen=True)
class SystemConfiguration:
    config_id: str
    retriever: BackendRef
    generator: BackendRef
    reasoning: ReasoningSpec
    k: int = 10
    prompt_version: str = RAG_PROMPT_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfiguration":
        return cls(
            config_id=data["config_id"],
            retriever=BackendRef(**data["retriever"]),
            generator=BackendRef(**data["generator"]),
            reasoning=ReasoningSpec(**data["reasoning"]),
            k=data.get("k", 10),
            prompt_version=data.get("prompt_version", RAG_PROMPT_VERSION),
        )


def canonical_configurations(
    generic_embedder_id: str,
    tuned_embedder_id: str,
    generic_generator_id: str,
    tuned_generator_id: str,
    *,
    k: int = 10,
    ooda_max_iterations: int = 5,
) -> list[SystemConfiguration]:
    """The five canonical presets of the design space."""
    one_pass = ReasoningSpec(mode="one_pass")
    return [
        SystemConfiguration(
            config_id="generic-rag",
            retriever=BackendRef("generic", generic_embedder_id),
            generator=BackendRef("generic", generic_generator_id),
            reasoning=one_pass, k=k),
        SystemConfiguration(
            config_id="ft-generator",
            retriever=BackendRef("generic", generic_embedder_id),
            generator=BackendRef("fine_tuned", tuned_generator_id),
            reasoning=one_pass, k=k),
        SystemConfiguration(
            config_id="ft-retriever",
            retriever=BackendRef("fine_tuned", tuned_embedder_id),
            generator=BackendRef("generic", generic_generator_id),
            reasoning=one_pass, k=k),
        SystemConfiguration(
            config_id="fully-ft",
            retriever=BackendRef("fine_tuned", tuned_embedder_id),
            generator=BackendRef("fine_tuned", tuned_generator_id),
            reasoning=one_pass, k=k),
        SystemConfiguration(
            config_id="generic-rag-ooda",
            retriever=BackendRef("generic", generic_embedder_id),
            generator=BackendRef("generic", generic_generator_id),
            reasoning=ReasoningSpec(mode="ooda", max_iterations=ooda_max_iterations), k=k),
    ]


# -- manifest ----------------------------------------------------------------

@dataclass
class RunManifest:
    """Everything needed to re-execute a run bit-identically on scripted
    backends. Only the creation timestamp varies between rebuilds."""

    dataset_path: str
    dataset_fingerprint: str
    split_seed: int
    n_train: int
    train_ids: list[str]
    test_ids: list[str]
    run_split: str  # train | test | all
    configurations: list[SystemConfiguration]
    backend_fingerprints: dict[str, str]
    seeds: dict[str, int] = field(default_factory=dict)
    worker_count: int = 1
    created_at: str = ""

    def __post_init__(self) -> None:
        if self.run_split not in ("train", "test", "all"):
            raise ValueError(f"unknown run_split {self.run_split!r}")
        if not self.created_at:
            self.created_at = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())

    def to_dict(self) -> dict:
        data = asdict(self)
        data["configurations"] = [c.to_dict() for c in self.configurations]
        return data

    def write(self, path: str | Path) -> None:
        try:
            Path(path).write_text(
                json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
                encoding="utf-8")
        except OSError as exc:
            raise ManifestWriteFailure(f"cannot write manifest {path}: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        data["configurations"] = [SystemConfiguration.from_dict(c) for c in data["configurations"]]
        return cls(**data)


# -- runner ------------------------------------------------------------------

@dataclass
class ConfigRun:
    config: SystemConfiguration
    records: list[MetricRecord]


class BenchmarkRunner:
    """Executes configurations over a question set and scores the answers.

    Indexes are built once per retriever backend and shared across
    configurations, mirroring a single shared vector store per embedder.
    """

    def __init__(
        self,
        chunks: Sequence[Chunk],
        embedders: Mapping[str, EmbedderBackend],
        generators: Mapping[str, GeneratorBackend],
        *,
        judge: Judge | None = None,
        reference_embedder: EmbedderBackend | None = None,
        out_dir: str | Path | None = None,
        workers: int = 1,
        one_pass_timeout_s: float = DEFAULT_ONE_PASS_TIMEOUT_S,
        ooda_timeout_s: float = DEFAULT_OODA_TIMEOUT_S,
    ):
        self.chunks = list(chunks)
        self.embedders = dict(embedders)
        self.generators = dict(generators)
        self.judge = judge
        self.reference_embedder = reference_embedder
        self.out_dir = Path(out_dir) if out_dir else None
        self.workers = max(1, workers)
        self.one_pass_timeout_s = one_pass_timeout_s
        self.ooda_timeout_s = ooda_timeout_s
        self._index_cache: dict[str, VectorIndex] = {}

    def backend_fingerprints(self) -> dict[str, str]:
        out = {f"embedder:{bid}": b.fingerprint() for bid, b in self.embedders.items()}
        out.update({f"generator:{bid}": b.fingerprint() for bid, b in self.generators.items()})
        if self.judge is not None:
            out["judge"] = self.judge.backend.fingerprint()
        if self.reference_embedder is not None:
            out["reference_embedder"] = self.reference_embedder.fingerprint()
        return out

    def index_for(self, backend_id: str) -> VectorIndex:
        if backend_id not in self._index_cache:
            embedder = self.embedders[backend_id]
            index = VectorIndex(embedder.dims)
            vectors = embedder.embed_batch([c.text for c in self.chunks])
            for chunk, vec in zip(self.chunks, vectors):
                index.add_chunk(chunk, vec)
            self._index_cache[backend_id] = index
        return self._index_cache[backend_id]

    def _engine_for(self, config: SystemConfiguration) -> RagEngine:
        return RagEngine(
            self.index_for(config.retriever.backend_id),
            self.embedders[config.retriever.backend_id],
            self.generators[config.generator.backend_id],
            k=config.k,
            config_id=config.config_id,
        )

    def run_configuration(self, config: SystemConfiguration,
                          questions: Sequence[BenchmarkQuestion],
                          judge: Judge | None = None) -> list[MetricRecord]:
        """One MetricRecord per question; failures become failed records
        and the run continues."""
        judge = judge or self.judge
        engine = self._engine_for(config)
        reasoner = None
        if config.reasoning.mode == "ooda":
            reasoner = OodaReasoner(
                self.generators[config.generator.backend_id],
                max_iterations=config.reasoning.max_iterations)
        timeout = self.ooda_timeout_s if reasoner else self.one_pass_timeout_s

        records: list[MetricRecord] = []
        with concurrent.futures.ThreadPoolExecutor(max_workers=self.workers) as pool:
            futures = {
                pool.submit(self._answer_and_score, config, engine, reasoner, judge, q): q
                for q in questions
            }
            for future, question in futures.items():
                try:
                    records.append(future.result(timeout=timeout))
                except concurrent.futures.TimeoutError:
                    records.append(MetricRecord(
                        question_id=question.question_id, config_id=config.config_id,
                        status="failed", error=f"timeout after {timeout}s"))
        records.sort(key=lambda r: r.question_id)
        return records

    def _answer_and_score(self, config: SystemConfiguration, engine: RagEngine,
                          reasoner: OodaReasoner | None, judge: Judge | None,
                          question: BenchmarkQuestion) -> MetricRecord:
        trace_ref = None
        try:
            if reasoner is None:
                answer = engine.answer_one_pass(question.question)
                answer_text = answer.answer_text
                retrieved_texts = [c.text for c in answer.retrieved]
            else:
                episode = reasoner.run_episode(Task(
                    question=question.question, resources=[engine]))
                answer_text = episode.conclusion.answer_text
                retrieved_texts = [
                    c.text
                    for _, obs in _successful(episode) if obs.answer
                    for c in obs.answer.retrieved
                ]
                trace_ref = self._write_trace(config, question, episode)
        except EngineError as exc:
            stage = exc.stage or "answer"
            return MetricRecord(
                question_id=question.question_id, config_id=config.config_id,
                status="failed", error=f"{stage}: {type(exc).__name__}: {exc}",
                trace_ref=trace_ref)

        record = MetricRecord(
            question_id=question.question_id, config_id=config.config_id,
            status="ok", answer_text=answer_text, trace_ref=trace_ref)
        notes: list[str] = []

        if judge is not None:
            record.relevancy = self._try_metric(
                notes, "relevancy",
                lambda: judge.judge_relevancy(question.question, answer_text, retrieved_texts).score)
            record.faithfulness = self._try_metric(
                notes, "faithfulness",
                lambda: judge.judge_faithfulness(answer_text, retrieved_texts).score)
            correctness = self._try_metric(
                notes, "correctness",
                lambda: judge.judge_correctness(
                    question.question, answer_text, question.reference_answer).score)
            if correctness is not None:
                record.correctness_raw = correctness
                record.correctness_pct = (correctness - 1.0) / 4.0

        if self.reference_embedder is not None and question.reference_contexts and retrieved_texts:
            try:
                raw, binary = context_similarity(
                    self.reference_embedder, retrieved_texts,
                    list(question.reference_contexts))
                record.context_similarity_raw = raw
                record.context_similarity_binary = binary
            except (EngineError, ValueError) as exc:
                notes.append(f"context_similarity: {exc}")

        if notes:
            record.error = "; ".join(notes)
        return record

    @staticmethod
    def _try_metric(notes: list[str], name: str, call) -> float | None:
        try:
            return call()
        except (MetricUnavailable, BackendContractViolation, ReferenceMissing) as exc:
            notes.append(f"{name}: {type(exc).__name__}: {exc}")
            return None

    def _write_trace(self, config: SystemConfiguration,
                     question: BenchmarkQuestion, episode) -> str | None:
        if self.out_dir is None:
            return None
        trace_dir = self.out_dir / "traces" / config.config_id
        trace_dir.mkdir(parents=True, exist_ok=True)
        rel = f"traces/{config.config_id}/{question.question_id}.jsonl"
        episode.write_trace(self.out_dir / rel)
        return rel

    def execute(self, manifest: RunManifest,
                questions: Sequence[BenchmarkQuestion],
                *,
                resume: bool = False) -> list[ConfigRun]:
        """Run every configuration in the manifest over the selected split.

        The manifest is written before the first question; records stream
        to ``records/{config_id}.jsonl`` under the output directory.
        """
        by_id = {q.question_id: q for q in questions}
        wanted_ids = {
            "train": manifest.train_ids,
            "test": manifest.test_ids,
            "all": sorted(by_id),
        }[manifest.run_split]
        selected = [by_id[qid] for qid in sorted(wanted_ids)]

        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            manifest.write(self.out_dir / "manifest.json")

        runs: list[ConfigRun] = []
        for config in manifest.configurations:
            done: dict[str, MetricRecord] = {}
            record_path = None
            if self.out_dir is not None:
                records_dir = self.out_dir / "records"
                records_dir.mkdir(parents=True, exist_ok=True)
                record_path = records_dir / f"{config.config_id}.jsonl"
                if resume and record_path.exists():
                    done = {r.question_id: r for r in load_records(record_path)}
            todo = [q for q in selected if q.question_id not in done]
            fresh = self.run_configuration(config, todo)
            records = sorted(list(done.values()) + fresh, key=lambda r: r.question_id)
            if record_path is not None:
                save_records(records, record_path)
            runs.append(ConfigRun(config=config, records=records))
        return runs


def _successful(episode) -> list:
    refs = []
    for it in episode.iterations:
        for idx, obs in enumerate(it.observations):
            if obs.ok:
                refs.append(((it.index, idx), obs))
    return refs


# -- report ------------------------------------------------------------------

@dataclass(frozen=True)
class RetrievalRow:
    config_id: str
    relevancy: float | None
    faithfulness: float | None
    context_similarity: float | None


@dataclass(frozen=True)
class AggregateBand:
    question_count: int
    graded_count: int
    mean: float | None

    def rendered(self) -> str:
        if self.question_count == 0:
            return "N/A"
        if self.graded_count == 0 or self.mean is None:
            return "pending"
        return f"{percent_half_up(self.mean)}%"


@dataclass(frozen=True)
class CorrectnessRow:
    config_id: str
    easier: AggregateBand
    harder: AggregateBand
    overall: AggregateBand
    auto_correctness: float | None


@dataclass(frozen=True)
class Report:
    retrieval_rows: tuple[RetrievalRow, ...]
    correctness_rows: tuple[CorrectnessRow, ...]

    RETRIEVAL_COLUMNS = ("Configuration", "Relevancy", "Faithfulness", "Context similarity")
    CORRECTNESS_COLUMNS = (
        "Configuration",
        "Human EASIER (0-RETRIEVE, 1-COMPARE, 2-CALC-CHANGE)",
        "Human HARDER (3-CALC-COMPLEX, 4-CALC-AND-JUDGE, 5-EXPLAIN-FACTORS, 6-OTHER-ADVANCED)",
        "Human OVERALL",
        "Automated correctness OVERALL",
    )

    def render_text(self) -> str:
        lines = ["Retrieval quality", "=" * 17, ""]
        lines += _text_table(
            self.RETRIEVAL_COLUMNS,
            [(r.config_id, _fmt3(r.relevancy), _fmt3(r.faithfulness),
              _fmt3(r.context_similarity)) for r in self.retrieval_rows])
        lines += ["", "Answer correctness", "=" * 18, ""]
        lines += _text_table(
            self.CORRECTNESS_COLUMNS,
            [(r.config_id, r.easier.rendered(), r.harder.rendered(), r.overall.rendered(),
              "pending" if r.auto_correctness is None else f"{percent_half_up(r.auto_correctness)}%")
             for r in self.correctness_rows])
        return "\n".join(lines) + "\n"

    def to_csv(self) -> dict[str, str]:
        retrieval = ["configuration,relevancy,faithfulness,context_similarity"]
        for r in self.retrieval_rows:
            retrieval.append(",".join([
                r.config_id, _raw(r.relevancy), _raw(r.faithfulness),
                _raw(r.context_similarity)]))
        correctness = ["configuration,human_easier,human_harder,human_overall,auto_correctness"]
        for r in self.correctness_rows:
            correctness.append(",".join([
                r.config_id,
                _raw(r.easier.mean), _raw(r.harder.mean), _raw(r.overall.mean),
                _raw(r.auto_correctness)]))
        return {
            "retrieval_quality": "\n".join(retrieval) + "\n",
            "answer_correctness": "\n".join(correctness) + "\n",
        }


def _fmt3(value: float | None) -> str:
    return "-" if value is None else f"{value:.3f}"


def _raw(value: float | None) -> str:
    return "" if value is None else repr(value)


def _text_table(columns: Sequence[str], rows: list[tuple[str, ...]]) -> list[str]:
    widths = [len(c) for c in columns]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(cells: Sequence[str]) -> str:
        return " | ".join(c.ljust(widths[i]) for i, c in enumerate(cells)).rstrip()
    lines = [fmt(columns), "-+-".join("-" * w for w in widths)]
    lines += [fmt(row) for row in rows]
    return lines


def render_report(runs: Sequence[ConfigRun],
                  categories: Mapping[str, DifficultyCategory]) -> Report:
    """Build both tables from per-configuration records."""
    if not runs:
        raise ValueError("need at least one configuration's records")
    retrieval_rows = []
    correctness_rows = []
    for run in runs:
        agg: AggregateReport = aggregate(run.records, categories)
        if run.config.reasoning.mode != "ooda":
            retrieval_rows.append(RetrievalRow(
                config_id=run.config.config_id,
                relevancy=agg.relevancy_mean,
                faithfulness=agg.faithfulness_mean,
                context_similarity=agg.context_similarity_mean,
            ))
        correctness_rows.append(CorrectnessRow(
            config_id=run.config.config_id,
            easier=AggregateBand(agg.easier.question_count, agg.easier.graded_count,
                                 agg.easier.human_mean),
            harder=AggregateBand(agg.harder.question_count, agg.harder.graded_count,
                                 agg.harder.human_mean),
            overall=AggregateBand(agg.overall.question_count, agg.overall.graded_count,
                                  agg.overall.human_mean),
            auto_correctness=agg.auto_correctness_mean,
        ))
    return Report(retrieval_rows=tuple(retrieval_rows),
                  correctness_rows=tuple(correctness_rows))
