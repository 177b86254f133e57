"""Versioned prompt templates shipped as package data.

Every template file starts with a ``version: N`` line and a ``---``
separator; the remainder is the template body. Version strings ride along
in benchmark records and judge verdicts so runs stay reproducible when
prompt wording changes.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    version: int
    text: str

    @property
    def version_string(self) -> str:
        return f"{self.name}/v{self.version}"

    def render(self, **kwargs: str) -> str:
        return self.text.format(**kwargs)


def load_prompt(name: str) -> PromptTemplate:
    raw = resources.files("ragbench.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    head, _, body = raw.partition("\n---\n")
    if not head.startswith("version:"):
        raise ValueError(f"prompt {name!r} missing version header")
    return PromptTemplate(name=name, version=int(head.split(":", 1)[1]), text=body.strip("\n"))


RAG_ANSWER = load_prompt("rag_answer")
OODA_DECOMPOSE = load_prompt("ooda_decompose")
OODA_ORIENT = load_prompt("ooda_orient")
OODA_DECIDE = load_prompt("ooda_decide")
OODA_VERIFY = load_prompt("ooda_verify")
JUDGE_RELEVANCY = load_prompt("judge_relevancy")
JUDGE_FAITHFULNESS = load_prompt("judge_faithfulness")
JUDGE_CORRECTNESS = load_prompt("judge_correctness")
TRIPLET_GEN = load_prompt("triplet_gen")
