from __future__ import annotations

import pytest

from ragbench.corpus import CorpusStore, chunk_corpus
from ragbench.embedder import HashEmbedder
from ragbench.errors import EmptyIndex, GeneratorUnavailable, InvalidQuestion
from ragbench.generator import ScriptedBehavior, ScriptedGenerator, ScriptedRule
from ragbench.rag import AugmentationSpec, RagEngine, RetrievedContext, augment
from ragbench.vindex import VectorIndex


def make_engine(texts: dict[str, str], rules: list[ScriptedRule], *,
                k: int = 10, dims: int = 256,
                augmentation: AugmentationSpec | None = None):
    store = CorpusStore()
    for doc_id, text in texts.items():
        store.ingest_document(doc_id, text, {"company": doc_id.upper()})
    chunks = chunk_corpus(store, 64, 0)
    embedder = HashEmbedder(dims)
    index = VectorIndex(dims)
    for chunk, vec in zip(chunks, embedder.embed_batch([c.text for c in chunks])):
        index.add_chunk(chunk, vec)
    generator = ScriptedGenerator(ScriptedBehavior(rules=rules))
    return RagEngine(index, embedder, generator, k=k, augmentation=augmentation,
                     config_id="test"), embedder, generator


class TestAnswerOnePass:
    def test_forced_answer_from_constructed_corpus(self):
        engine, _, _ = make_engine(
            {"geo": "The capital of Freedonia is Zembla."},
            [ScriptedRule(kind="contains_all",
                          pattern=["capital of Freedonia", "Zembla"],
                          response="The capital of Freedonia is Zembla.")])
        answer = engine.answer_one_pass("What is the capital of Freedonia?")
        assert "Zembla" in answer.answer_text
        assert answer.config_id == "test"
        assert answer.prompt_version.startswith("rag_answer/")

    def test_empty_question_rejected(self):
        engine, _, _ = make_engine({"d": "text here"}, [])
        with pytest.raises(InvalidQuestion):
            engine.answer_one_pass("  ")

    def test_single_chunk_corpus_yields_single_hit(self):
        engine, _, _ = make_engine({"d": "only document text"}, [], k=1)
        answer = engine.answer_one_pass("what text?")
        assert len(answer.retrieved) == 1
        assert answer.retrieved[0].rank == 1

    def test_exactly_one_embed_and_one_generate_call(self):
        engine, embedder, generator = make_engine(
            {"a": "alpha text", "b": "beta text"}, [])
        base_embed, base_gen = embedder.calls, generator.calls
        engine.answer_one_pass("alpha?")
        assert embedder.calls == base_embed + 1
        assert generator.calls == base_gen + 1

    def test_evidence_completeness(self):
        engine, _, _ = make_engine(
            {"a": "alpha text", "b": "beta text", "c": "gamma text"}, [])
        answer = engine.answer_one_pass("alpha beta gamma?")
        prompt = engine.build_prompt(answer.question, answer.retrieved)
        body = prompt[-1].content
        for ctx in answer.retrieved:
            assert ctx.text in body

    def test_empty_index_stage_label(self):
        embedder = HashEmbedder(16)
        engine = RagEngine(VectorIndex(16), embedder,
                           ScriptedGenerator(ScriptedBehavior()), k=3)
        with pytest.raises(EmptyIndex) as excinfo:
            engine.answer_one_pass("anything?")
        assert excinfo.value.stage == "retrieve"

    def test_generator_failure_stage_label(self):
        class DownGenerator:
            calls = 0

            def fingerprint(self):
                return "down"

            def complete(self, messages, params=None):
                raise GeneratorUnavailable("no backend")

        store = CorpusStore()
        store.ingest_document("d", "text")
        chunks = chunk_corpus(store, 64, 0)
        embedder = HashEmbedder(16)
        index = VectorIndex(16)
        for chunk in chunks:
            index.add_chunk(chunk, embedder.embed_text(chunk.text))
        engine = RagEngine(index, embedder, DownGenerator(), k=1)
        with pytest.raises(GeneratorUnavailable) as excinfo:
            engine.answer_one_pass("anything?")
        assert excinfo.value.stage == "generate"

    def test_retrieved_carries_provenance_tags(self):
        engine, _, _ = make_engine({"acme": "net sales rose"}, [])
        answer = engine.answer_one_pass("net sales?")
        tag = answer.retrieved[0].tag
        assert "acme#0" in tag
        assert "company=ACME" in tag


def ctx(chunk_id: str, text: str, rank: int) -> RetrievedContext:
    return RetrievedContext(chunk_id=chunk_id, score=1.0 - rank * 0.1, rank=rank,
                            text=text, tag=chunk_id)


class TestAugment:
    def test_empty_spec_is_identity(self):
        contexts = [ctx("a", "one", 1), ctx("b", "two", 2)]
        assert augment(contexts, AugmentationSpec()) == contexts

    def test_keyword_boost_stable_partition(self):
        contexts = [
            ctx("a", "plain revenue talk", 1),
            ctx("b", "EBITDA margin expanded", 2),
            ctx("c", "more plain talk", 3),
        ]
        boosted = augment(contexts, AugmentationSpec(boost_keywords=("EBITDA",)))
        assert [c.chunk_id for c in boosted] == ["b", "a", "c"]

    def test_all_matching_keeps_order(self):
        contexts = [ctx("a", "EBITDA up", 1), ctx("b", "EBITDA down", 2)]
        boosted = augment(contexts, AugmentationSpec(boost_keywords=("EBITDA",)))
        assert [c.chunk_id for c in boosted] == ["a", "b"]

    def test_augment_is_permutation(self):
        contexts = [ctx(f"c{i}", f"text {'EBITDA' if i % 3 else 'plain'} {i}", i + 1)
                    for i in range(9)]
        boosted = augment(contexts, AugmentationSpec(boost_keywords=("ebitda",)))
        assert sorted(c.chunk_id for c in boosted) == sorted(c.chunk_id for c in contexts)

    def test_boost_applies_in_engine_prompt_order(self):
        engine, _, generator = make_engine(
            {"kw": "the EBITDA figure is 7", "plain": "the sales figure is 9"},
            [],
            augmentation=AugmentationSpec(boost_keywords=("EBITDA",)))
        answer = engine.answer_one_pass("figure?")
        assert answer.retrieved[0].text.startswith("the EBITDA")
