"""Command-line surface: ingest, index, ask, solve, bench, dataprep, eval, report.

Exit codes: 0 success, 1 input/config error, 2 engine error, 3 backend
unavailability. All commands are deterministic on scripted backends given
fixed seeds; stdout never includes wall-clock values.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from pathlib import Path

from . import __version__
from .benchmark import (
    BenchmarkRunner,
    ConfigRun,
    RunManifest,
    dataset_fingerprint,
    load_dataset,
    render_report,
    split_train_test,
)
from .config import EngineConfig, RunConfig
from .corpus import CorpusStore, chunk_corpus
from .dataprep import (
    export_embedder_pairs,
    export_generator_pairs,
    generate_triplets,
    sample_subset,
    save_rejections,
    triplets_from_dataset,
)
from .errors import (
    ConfigError,
    DuplicateDocument,
    DuplicateVerdict,
    EmbedderUnavailable,
    EmptyDocument,
    EmptyIndex,
    EngineError,
    GeneratorUnavailable,
    InvalidChunkSpec,
    InvalidSample,
    InvalidSplit,
    MetricUnavailable,
    ParseError,
    UnknownCategory,
)
from .evaluation import load_human_verdicts, load_records, merge_human_verdicts, save_records
from .ooda import OodaReasoner, Task
from .rag import RagEngine
from .vindex import VectorIndex, load_snapshot, save_snapshot

CORPUS_FILE = "corpus.jsonl"
SNAPSHOT_FILE = "index.snapshot"

_INPUT_ERRORS = (ConfigError, ParseError, InvalidSplit, InvalidSample, UnknownCategory,
                 DuplicateVerdict, DuplicateDocument, EmptyDocument, InvalidChunkSpec)
_BACKEND_ERRORS = (EmbedderUnavailable, GeneratorUnavailable, MetricUnavailable)


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, _BACKEND_ERRORS):
        return 3
    if isinstance(exc, (_INPUT_ERRORS, FileNotFoundError)):
        return 1
    if isinstance(exc, EngineError):
        return 2
    raise exc


def _fail(exc: Exception) -> int:
    stage = getattr(exc, "stage", None)
    label = f" [stage: {stage}]" if stage else ""
    print(f"error: {type(exc).__name__}: {exc}{label}", file=sys.stderr)
    return _exit_code(exc)


# -- command implementations ---------------------------------------------------


def _expand_files(paths: list[Path]) -> list[Path]:
    files: list[Path] = []
    for p in paths:
        if p.is_dir():
            files.extend(sorted(c for c in p.iterdir() if c.suffix in (".txt", ".jsonl")))
        else:
            files.append(p)
    return files


def cmd_ingest(args: argparse.Namespace) -> int:
    config = EngineConfig.load(args.config)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    store_path = config.output_dir / CORPUS_FILE

    store = CorpusStore()
    if store_path.exists():
        if args.force:
            store_path.unlink()
        else:
            store = CorpusStore.load(store_path)

    paths = [Path(p) for p in args.paths] if args.paths else config.corpus_paths
    if not paths:
        print("error: no corpus paths given", file=sys.stderr)
        return 1

    failures = []
    for file_path in _expand_files(paths):
        try:
            if file_path.suffix == ".jsonl":
                store.ingest_record_file(file_path)
            else:
                store.ingest_text_file(file_path)
        except (EngineError, OSError) as exc:
            failures.append((file_path, exc))

    chunks = chunk_corpus(store, config.chunk_size, config.chunk_overlap,
                          snap_to_sentence=config.snap_to_sentence)
    store.save(store_path)
    total_tokens = sum(c.token_count for c in chunks)
    print(f"docs={len(store)} chunks={len(chunks)} tokens={total_tokens}")
    for file_path, exc in failures:
        print(f"failed: {file_path}: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1 if failures else 0


def cmd_index(args: argparse.Namespace) -> int:
    config = EngineConfig.load(args.config)
    store_path = config.output_dir / CORPUS_FILE
    if not store_path.exists():
        raise FileNotFoundError(f"no corpus store at {store_path}; run ingest first")
    store = CorpusStore.load(store_path)
    chunks = chunk_corpus(store, config.chunk_size, config.chunk_overlap,
                          snap_to_sentence=config.snap_to_sentence)
    embedder = config.make_embedder()
    index = VectorIndex(embedder.dims)
    for chunk, vec in zip(chunks, embedder.embed_batch([c.text for c in chunks])):
        index.add_chunk(chunk, vec)
    save_snapshot(index, config.output_dir / SNAPSHOT_FILE, fingerprint=embedder.fingerprint())
    print(f"indexed chunks={len(index)} dims={index.dims}")
    return 0


def _load_engine(config: EngineConfig, *, k: int | None = None) -> RagEngine:
    snapshot_path = config.output_dir / SNAPSHOT_FILE
    if not snapshot_path.exists():
        raise EmptyIndex(f"no index snapshot at {snapshot_path}; run index first")
    index, fingerprint = load_snapshot(snapshot_path)
    embedder = config.make_embedder()
    if fingerprint != embedder.fingerprint():
        raise ConfigError(
            f"index was built with {fingerprint}, config embedder is {embedder.fingerprint()}")
    store = CorpusStore.load(config.output_dir / CORPUS_FILE)
    chunks = chunk_corpus(store, config.chunk_size, config.chunk_overlap,
                          snap_to_sentence=config.snap_to_sentence)
    index.bind_chunks(chunks)
    return RagEngine(
        index, embedder, config.make_generator(),
        k=k or config.k,
        context_budget_tokens=config.context_budget_tokens,
        config_id="cli",
    )


def _snippet(text: str, width: int = 80) -> str:
    flat = " ".join(text.split())
    return flat if len(flat) <= width else flat[: width - 3] + "..."


def cmd_ask(args: argparse.Namespace) -> int:
    config = EngineConfig.load(args.config)
    engine = _load_engine(config, k=args.k)
    answer = engine.answer_one_pass(args.question)
    print("Answer:")
    print(answer.answer_text)
    print()
    print("Evidence:")
    for c in answer.retrieved:
        print(f"  {c.rank}. [{c.chunk_id}] score={c.score:.6f} {_snippet(c.text)}")
    return 0


def cmd_solve(args: argparse.Namespace) -> int:
    config = EngineConfig.load(args.config)
    engine = _load_engine(config, k=args.k)
    reasoner = OodaReasoner(
        engine.generator,
        max_iterations=args.max_iterations or config.max_iterations)
    episode = reasoner.run_episode(Task(question=args.question, resources=[engine]))

    if args.trace_out:
        trace_path = Path(args.trace_out)
    else:
        digest = hashlib.sha256(args.question.encode("utf-8")).hexdigest()[:12]
        trace_dir = config.output_dir / "traces"
        trace_dir.mkdir(parents=True, exist_ok=True)
        trace_path = trace_dir / f"solve-{digest}.jsonl"
    episode.write_trace(trace_path)

    conclusion = episode.conclusion
    print("Conclusion:")
    print(conclusion.answer_text)
    print()
    print(f"verification={conclusion.verification_status} "
          f"iterations={conclusion.iterations_used} "
          f"evidence={len(conclusion.evidence)}")
    print(f"trace: {trace_path}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    config = EngineConfig.load(args.config)
    run_config = RunConfig.load(args.run_config)

    store = CorpusStore()
    for file_path in _expand_files(config.corpus_paths):
        if file_path.suffix == ".jsonl":
            store.ingest_record_file(file_path)
        else:
            store.ingest_text_file(file_path)
    chunks = chunk_corpus(store, config.chunk_size, config.chunk_overlap,
                          snap_to_sentence=config.snap_to_sentence)

    questions = load_dataset(run_config.dataset_path)
    if run_config.n_train > 0:
        train, test = split_train_test_ids(questions, run_config.n_train, run_config.split_seed)
    else:
        train, test = [], [q.question_id for q in questions]

    embedders = run_config.make_embedders()
    generators = run_config.make_generators()
    out_dir = Path(args.out) if args.out else config.output_dir / "bench"
    runner = BenchmarkRunner(
        chunks, embedders, generators,
        judge=run_config.make_judge(),
        reference_embedder=run_config.make_reference_embedder(embedders),
        out_dir=out_dir,
        workers=run_config.workers,
    )
    manifest = RunManifest(
        dataset_path=str(run_config.dataset_path),
        dataset_fingerprint=dataset_fingerprint(run_config.dataset_path),
        split_seed=run_config.split_seed,
        n_train=run_config.n_train,
        train_ids=train,
        test_ids=test,
        run_split=run_config.run_split,
        configurations=run_config.configurations,
        backend_fingerprints=runner.backend_fingerprints(),
        seeds={"split": run_config.split_seed},
        worker_count=run_config.workers,
    )
    runs = runner.execute(manifest, questions, resume=args.resume)

    categories = {q.question_id: q.category for q in questions}
    report = render_report(runs, categories)
    (out_dir / "report.txt").write_text(report.render_text(), encoding="utf-8")
    for name, csv_text in report.to_csv().items():
        (out_dir / f"report_{name}.csv").write_text(csv_text, encoding="utf-8")
    print(report.render_text(), end="")
    return 0


def split_train_test_ids(questions, n_train: int, seed: int) -> tuple[list[str], list[str]]:
    train, test = split_train_test(questions, n_train, seed)
    return [q.question_id for q in train], [q.question_id for q in test]


def cmd_dataprep(args: argparse.Namespace) -> int:
    config = EngineConfig.load(args.config)

    if args.from_dataset:
        questions = load_dataset(args.from_dataset)
        triplets = triplets_from_dataset(questions)
        rejections = []
    else:
        store = CorpusStore()
        for file_path in _expand_files(config.corpus_paths):
            if file_path.suffix == ".jsonl":
                store.ingest_record_file(file_path)
            else:
                store.ingest_text_file(file_path)
        chunks = chunk_corpus(store, config.chunk_size, config.chunk_overlap,
                              snap_to_sentence=config.snap_to_sentence)
        result = generate_triplets(chunks, config.make_generator(), args.per_chunk)
        triplets, rejections = result.triplets, result.rejections

    if args.sample is not None:
        triplets = sample_subset(triplets, args.sample,
                                 args.seed if args.seed is not None else config.sample_seed)

    written = []
    if args.out_embedder:
        n = export_embedder_pairs(triplets, args.out_embedder)
        written.append(f"embedder_pairs={n}")
    if args.out_generator:
        n = export_generator_pairs(triplets, args.out_generator)
        written.append(f"generator_pairs={n}")
    if args.rejections and rejections:
        save_rejections(rejections, args.rejections)

    print(f"triplets={len(triplets)} rejections={len(rejections)}"
          + (" " + " ".join(written) if written else ""))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    records = load_records(args.records)
    questions = load_dataset(args.dataset)
    verdicts = load_human_verdicts(args.verdicts, {q.question_id for q in questions})
    merged = merge_human_verdicts(records, verdicts)
    out = args.out or args.records
    save_records(merged, out)
    print(f"merged {len(verdicts)} verdicts into {len(merged)} records -> {out}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    manifest = RunManifest.load(run_dir / "manifest.json")
    questions = load_dataset(args.dataset or manifest.dataset_path)
    categories = {q.question_id: q.category for q in questions}
    runs = [
        ConfigRun(config=config,
                  records=load_records(run_dir / "records" / f"{config.config_id}.jsonl"))
        for config in manifest.configurations
    ]
    report = render_report(runs, categories)
    if args.format == "csv":
        for name, csv_text in report.to_csv().items():
            print(f"# {name}")
            print(csv_text, end="")
    else:
        print(report.render_text(), end="")
    return 0


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ragbench",
        description="Question answering over a text corpus with one-pass retrieval "
                    "or iterative reasoning, plus a benchmark harness.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest corpus files and report chunk counts")
    p.add_argument("--config", required=True)
    p.add_argument("--force", action="store_true", help="rebuild the corpus store")
    p.add_argument("paths", nargs="*", help="override config corpus paths")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index", help="embed chunks and write the vector snapshot")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("ask", help="answer one question with one-pass retrieval")
    p.add_argument("--config", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--k", type=int, default=None)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("solve", help="answer one question with iterative reasoning")
    p.add_argument("--config", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--trace-out", default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run benchmark configurations and render reports")
    p.add_argument("--config", required=True)
    p.add_argument("--run-config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--resume", action="store_true",
                   help="skip question ids already present in record files")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("dataprep", help="build and export fine-tuning datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--from-dataset", default=None,
                   help="derive triplets from a benchmark dataset instead of chunks")
    p.add_argument("--per-chunk", type=int, default=3)
    p.add_argument("--sample", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-embedder", default=None)
    p.add_argument("--out-generator", default=None)
    p.add_argument("--rejections", default=None)
    p.set_defaults(func=cmd_dataprep)

    p = sub.add_parser("eval", help="merge human verdicts into metric records")
    p.add_argument("--records", required=True)
    p.add_argument("--verdicts", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="re-render reports from stored records")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single boundary for exit codes
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
