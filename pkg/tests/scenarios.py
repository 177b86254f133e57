"""Constructed corpora and scripted behaviors for hermetic end-to-end tests.

The synthetic suite pairs single-hop questions (one fact in one document)
with multi-hop questions (two facts in two documents that must be
combined). Scripted rules answer sub-questions only when the supporting
fact is present in the rendered prompt, so one-pass retrieval can answer
the single-hop questions but never the multi-hop ones, while iterative
reasoning answers both.
"""

from __future__ import annotations

from dataclasses import dataclass

from ragbench.corpus import Chunk, CorpusStore, chunk_corpus
from ragbench.embedder import HashEmbedder
from ragbench.generator import ScriptedBehavior, ScriptedGenerator, ScriptedRule
from ragbench.prompts import OODA_DECOMPOSE, OODA_ORIENT, OODA_VERIFY
from ragbench.rag import RagEngine
from ragbench.vindex import VectorIndex

DECOMPOSE_ANCHOR = OODA_DECOMPOSE.text.splitlines()[0]
ORIENT_ANCHOR = OODA_ORIENT.text.splitlines()[0]
VERIFY_ANCHOR = OODA_VERIFY.text.splitlines()[0]


@dataclass(frozen=True)
class SuiteQuestion:
    question_id: str
    question: str
    expected_keyword: str
    hops: int
    category_code: int


@dataclass
class SyntheticSuite:
    questions: list[SuiteQuestion]
    documents: list[tuple[str, str]]  # (doc_id, text)
    behavior: ScriptedBehavior

    def build_store(self) -> CorpusStore:
        store = CorpusStore()
        for doc_id, text in self.documents:
            store.ingest_document(doc_id, text, {"suite": "synthetic"})
        return store


def _fact(name: str, year: int, value: int) -> str:
    return f"{name} revenue in {year} was {value} million dollars"


def build_synthetic_suite(n_single: int = 10, n_multi: int = 10) -> SyntheticSuite:
    questions: list[SuiteQuestion] = []
    documents: list[tuple[str, str]] = []
    rules: list[ScriptedRule] = []

    rules.append(ScriptedRule(kind="contains", pattern=VERIFY_ANCHOR, response="CONSISTENT"))

    def add_fact_doc(name: str, slug: str, year: int, value: int) -> None:
        documents.append((f"{slug}-{year}", _fact(name, year, value) + "."))
        sub_q = f"What was {name}'s revenue in {year}?"
        # Answer a sub-question only when its supporting fact was retrieved.
        rules.append(ScriptedRule(
            kind="contains_all",
            pattern=[f"Question: {sub_q}", _fact(name, year, value)],
            response=_fact(name, year, value) + ".",
        ))

    for i in range(n_single):
        name = f"Single{i} Corp"
        slug = f"single{i}"
        value = 100 + i
        add_fact_doc(name, slug, 2021, value)
        question = f"What was {name}'s revenue in 2021?"
        rules.append(ScriptedRule(
            kind="contains_all",
            pattern=[ORIENT_ANCHOR, f"Main question: {question}", _fact(name, 2021, value)],
            response=f"UNDERSTANDING: {_fact(name, 2021, value)}.",
        ))
        questions.append(SuiteQuestion(
            question_id=f"sh{i:02d}",
            question=question,
            expected_keyword=f"{value} million",
            hops=1,
            category_code=i % 3,  # easier band
        ))

    for i in range(n_multi):
        name = f"Multi{i} Corp"
        slug = f"multi{i}"
        v2021, v2022 = 200 + i, 300 + i
        total = v2021 + v2022
        add_fact_doc(name, slug, 2021, v2021)
        add_fact_doc(name, slug, 2022, v2022)
        question = f"What is the combined revenue of {name} for 2021 and 2022?"

        rules.append(ScriptedRule(
            kind="contains_all",
            pattern=[DECOMPOSE_ANCHOR, question],
            response=f"SUB: What was {name}'s revenue in 2021?",
        ))
        # Both facts known -> final understanding; one fact -> ask for the other.
        rules.append(ScriptedRule(
            kind="contains_all",
            pattern=[ORIENT_ANCHOR, f"Main question: {question}",
                     _fact(name, 2021, v2021), _fact(name, 2022, v2022)],
            response=("UNDERSTANDING: The combined revenue of "
                      f"{name} for 2021 and 2022 was {total} million dollars."),
        ))
        rules.append(ScriptedRule(
            kind="contains_all",
            pattern=[ORIENT_ANCHOR, f"Main question: {question}", _fact(name, 2021, v2021)],
            response=(f"UNDERSTANDING: Still missing the 2022 figure for {name}.\n"
                      f"MISSING: What was {name}'s revenue in 2022?"),
        ))
        questions.append(SuiteQuestion(
            question_id=f"mh{i:02d}",
            question=question,
            expected_keyword=f"{total} million",
            hops=2,
            category_code=3 + (i % 4),  # harder band
        ))

    return SyntheticSuite(questions=questions, documents=documents,
                          behavior=ScriptedBehavior(rules=rules))


def build_suite_engine(suite: SyntheticSuite, *, dims: int = 512, k: int = 10,
                       config_id: str = "suite") -> tuple[RagEngine, HashEmbedder, ScriptedGenerator, list[Chunk]]:
    store = suite.build_store()
    chunks = chunk_corpus(store, 128, 0)
    embedder = HashEmbedder(dims)
    index = VectorIndex(dims)
    for chunk, vec in zip(chunks, embedder.embed_batch([c.text for c in chunks])):
        index.add_chunk(chunk, vec)
    generator = ScriptedGenerator(suite.behavior)
    engine = RagEngine(index, embedder, generator, k=k, config_id=config_id)
    return engine, embedder, generator, chunks
