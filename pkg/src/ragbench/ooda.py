"""Observe-Orient-Decide-Act iterative reasoning over RAG resources.

An episode decomposes a question into sub-questions, gathers evidence by
querying the task's resources (observe), synthesizes a running
understanding and the facts still missing (orient), applies a rule-based
decision over that structured orientation (decide), and either queues the
next sub-questions or renders and verifies a conclusion (act). The loop
always terminates within the iteration budget.

Stage prompts are versioned package data; the decide step is rule-based
over the orientation's structured output, so decisions stay testable.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from .errors import EngineError, GeneratorUnavailable, ResourceExhausted
from .generator import ChatMessage, GenerationParams, GeneratorBackend
from .prompts import OODA_DECIDE, OODA_DECOMPOSE, OODA_ORIENT, OODA_VERIFY
from .rag import RagAnswer

DEFAULT_MAX_ITERATIONS = 5
DEFAULT_SUB_QUESTION_CAP = 5

OODA_PROMPT_VERSIONS = {
    p.name: p.version_string
    for p in (OODA_DECOMPOSE, OODA_ORIENT, OODA_DECIDE, OODA_VERIFY)
}


class AnswerResource(Protocol):
    """Anything that can answer a sub-question with an evidence trail."""

    config_id: str

    def answer_one_pass(self, question: str, *, k: int | None = None) -> RagAnswer: ...


@dataclass(frozen=True)
class Task:
    question: str
    resources: Sequence[AnswerResource]
    instructions: str = ""

    def __post_init__(self) -> None:
        if not self.resources:
            raise ValueError("task needs at least one resource")


@dataclass
class Observation:
    sub_question: str
    ok: bool
    answer: RagAnswer | None = None
    error: str | None = None
    resource_id: str | None = None


@dataclass
class Orientation:
    understanding: str
    missing: list[str] = field(default_factory=list)
    contradictions: list[str] = field(default_factory=list)
    raw: str = ""


@dataclass(frozen=True)
class Decision:
    kind: str  # conclude | continue | abort
    next_sub_questions: tuple[str, ...] = ()
    forced: bool = False  # conclude forced by budget / no progress
    reason: str = ""

    def __post_init__(self) -> None:
        if self.kind == "continue" and not self.next_sub_questions:
            raise ValueError("continue requires at least one sub-question")


@dataclass
class OodaIteration:
    index: int
    observations: list[Observation] = field(default_factory=list)
    orientation: Orientation | None = None
    decision: Decision | None = None
    actions: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class Conclusion:
    answer_text: str
    evidence: tuple[tuple[int, int], ...]  # (iteration index, observation index)
    iterations_used: int
    verification_status: str  # consistent | inconsistent | unverified


def _normalize(question: str) -> str:
    return re.sub(r"\s+", " ", question).strip().strip("?.!").lower()


class EpisodeState:
    """Mutable state of one reasoning episode."""

    def __init__(self, task: Task, max_iterations: int):
        self.task = task
        self.max_iterations = max_iterations
        self.iteration = 0
        self.pending: list[str] = []
        self.seen: set[str] = set()
        self.succeeded: set[str] = set()
        self.failures: dict[str, int] = {}
        self.dead: set[str] = set()
        self.iterations: list[OodaIteration] = []
        self.evidence_refs: list[tuple[int, int]] = []
        self.conclusion: Conclusion | None = None
        self.any_success = False
        self.trace: list[dict] = []

    @property
    def current(self) -> OodaIteration:
        return self.iterations[-1]

    def begin_iteration(self) -> OodaIteration:
        self.iteration += 1
        self.iterations.append(OodaIteration(index=self.iteration))
        return self.current

    def successful_observations(self) -> list[tuple[tuple[int, int], Observation]]:
        out = []
        for ref in self.evidence_refs:
            it_idx, obs_idx = ref
            out.append((ref, self.iterations[it_idx - 1].observations[obs_idx]))
        return out

    def resolve(self, ref: tuple[int, int]) -> Observation:
        it_idx, obs_idx = ref
        return self.iterations[it_idx - 1].observations[obs_idx]

    def queue(self, sub_questions: Sequence[str], *, bypass_dedup: bool = False) -> list[str]:
        added = []
        for sq in sub_questions:
            norm = _normalize(sq)
            if not norm or norm in self.dead:
                continue
            if not bypass_dedup and norm in self.seen:
                continue
            self.seen.add(norm)
            self.pending.append(sq)
            added.append(sq)
        return added

    def log(self, record_type: str, **payload: object) -> None:
        self.trace.append({"type": record_type, "iteration": self.iteration, **payload})


@dataclass
class OodaEpisode:
    """Finished episode: conclusion plus full audit trail."""

    task_question: str
    conclusion: Conclusion
    iterations: list[OodaIteration]
    trace: list[dict]

    def write_trace(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.trace:
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def _render_evidence(observations: list[Observation],
                     failed: list[Observation] | None = None) -> str:
    lines = []
    n = 0
    for obs in observations:
        n += 1
        answer = obs.answer.answer_text if obs.answer else ""
        lines.append(f"{n}. Sub-question: {obs.sub_question}\n   Answer: {answer}")
    for obs in failed or []:
        n += 1
        lines.append(f"{n}. Sub-question: {obs.sub_question}\n   Answer: FAILED ({obs.error})")
    return "\n".join(lines) if lines else "(no evidence gathered)"


class OodaReasoner:
    """Drives OODA episodes against a generator and task resources."""

    def __init__(self, generator: GeneratorBackend, *,
                 max_iterations: int = DEFAULT_MAX_ITERATIONS,
                 sub_question_cap: int = DEFAULT_SUB_QUESTION_CAP,
                 params: GenerationParams | None = None):
        self.generator = generator
        self.max_iterations = max_iterations
        self.sub_question_cap = sub_question_cap
        self.params = params or GenerationParams()

    # -- stage: decompose ---------------------------------------------------

    def decompose_question(self, question: str, instructions: str = "") -> list[str]:
        """Split a question into sub-questions; atomic questions map to themselves."""
        if not question or not question.strip():
            raise ValueError("question must be non-empty")
        prompt = OODA_DECOMPOSE.render(question=question, instructions=instructions)
        response = self.generator.complete(
            [ChatMessage(role="user", content=prompt)], self.params)
        subs = [m.group(1).strip() for m in re.finditer(r"^SUB:\s*(.+)$", response, re.MULTILINE)]
        subs = [s for s in subs if s]
        if not subs:
            return [question]
        return subs[: self.sub_question_cap]

    # -- stage: observe -----------------------------------------------------

    def observe(self, state: EpisodeState) -> list[Observation]:
        """Answer every pending sub-question; failures become data, not raises."""
        iteration = state.current
        new_observations: list[Observation] = []
        pending, state.pending = state.pending, []
        for sub_question in pending:
            obs = self._query_resources(state.task, sub_question)
            iteration.observations.append(obs)
            new_observations.append(obs)
            iteration.actions.append({
                "type": "resource_call",
                "sub_question": sub_question,
                "ok": obs.ok,
                "resource": obs.resource_id,
            })
            obs_idx = len(iteration.observations) - 1
            norm = _normalize(sub_question)
            if obs.ok:
                state.any_success = True
                state.succeeded.add(norm)
                state.evidence_refs.append((iteration.index, obs_idx))
            else:
                state.failures[norm] = state.failures.get(norm, 0) + 1
                if state.failures[norm] > 1:
                    state.dead.add(norm)
        state.log("observe", records=[
            {"sub_question": o.sub_question, "ok": o.ok, "error": o.error,
             "answer": o.answer.answer_text if o.answer else None}
            for o in new_observations])
        return new_observations

    def _query_resources(self, task: Task, sub_question: str) -> Observation:
        last_error = "no resources"
        for resource in task.resources:
            try:
                answer = resource.answer_one_pass(sub_question)
                return Observation(sub_question=sub_question, ok=True, answer=answer,
                                   resource_id=getattr(resource, "config_id", None))
            except EngineError as exc:
                stage = f" at stage {exc.stage}" if exc.stage else ""
                last_error = f"{type(exc).__name__}{stage}: {exc}"
        return Observation(sub_question=sub_question, ok=False, error=last_error)

    # -- stage: orient ------------------------------------------------------

    def orient(self, state: EpisodeState) -> Orientation:
        """Synthesize understanding; surface missing facts and contradictions."""
        successes = [obs for _, obs in state.successful_observations()]
        failed = [o for it in state.iterations for o in it.observations if not o.ok]
        prompt = OODA_ORIENT.render(
            question=state.task.question,
            instructions=state.task.instructions,
            evidence=_render_evidence(successes, failed=failed),
        )
        try:
            response = self.generator.complete(
                [ChatMessage(role="user", content=prompt)], self.params)
        except GeneratorUnavailable as exc:
            # Degraded orientation: keep the episode terminating and let
            # decide() conclude best-effort from evidence already in hand.
            orientation = Orientation(
                understanding=self._fallback_understanding(state),
                raw=f"orient unavailable: {exc}")
            state.current.orientation = orientation
            state.log("orient", understanding=orientation.understanding,
                      missing=[], contradictions=[], degraded=True)
            return orientation
        orientation = self._parse_orientation(response)
        state.current.orientation = orientation
        state.log("orient", understanding=orientation.understanding,
                  missing=list(orientation.missing),
                  contradictions=list(orientation.contradictions))
        return orientation

    @staticmethod
    def _parse_orientation(response: str) -> Orientation:
        understanding_parts = []
        missing: list[str] = []
        contradictions: list[str] = []
        for line in response.splitlines():
            stripped = line.strip()
            if stripped.startswith("UNDERSTANDING:"):
                understanding_parts.append(stripped[len("UNDERSTANDING:"):].strip())
            elif stripped.startswith("MISSING:"):
                item = stripped[len("MISSING:"):].strip()
                if item:
                    missing.append(item)
            elif stripped.startswith("CONTRADICTION:"):
                item = stripped[len("CONTRADICTION:"):].strip()
                if item:
                    contradictions.append(item)
        understanding = " ".join(p for p in understanding_parts if p)
        if not understanding:
            # Unstructured output: treat the whole response as understanding.
            marker = re.compile(r"^(MISSING|CONTRADICTION):", re.MULTILINE)
            leftover = "\n".join(
                ln for ln in response.splitlines() if not marker.match(ln.strip()))
            understanding = leftover.strip()
        return Orientation(understanding=understanding, missing=missing,
                           contradictions=contradictions, raw=response)

    def _fallback_understanding(self, state: EpisodeState) -> str:
        answers = [obs.answer.answer_text for _, obs in state.successful_observations()
                   if obs.answer]
        return " ".join(answers) if answers else "No evidence could be gathered."

    # -- stage: decide ------------------------------------------------------

    def decide(self, state: EpisodeState) -> Decision:
        """Rule-based decision over the structured orientation (see the
        versioned decide prompt file for the rule text)."""
        orientation = state.current.orientation
        if orientation is None:
            raise ValueError("decide requires an orientation")

        retryable = self._retryable(state)
        fresh = self._fresh_missing(state, orientation.missing)

        exhausted = (not state.any_success
                     and not state.pending
                     and state.failures
                     and all(n in state.dead for n in state.failures))
        if exhausted:
            decision = Decision(kind="abort", reason="every resource failed on every sub-question")
        elif (not state.any_success and retryable
              and state.iteration < state.max_iterations):
            # Zero evidence so far: retrying failed sub-questions beats
            # concluding on nothing.
            decision = Decision(kind="continue",
                                next_sub_questions=tuple(retryable[: self.sub_question_cap]),
                                reason="no evidence yet, retrying failures")
        elif not orientation.missing and not orientation.contradictions:
            decision = Decision(kind="conclude", reason="orientation reports no missing facts")
        elif state.iteration >= state.max_iterations:
            decision = Decision(kind="conclude", forced=True,
                                reason="iteration budget exhausted with open questions")
        elif fresh or retryable:
            decision = Decision(kind="continue",
                                next_sub_questions=tuple((fresh + retryable)[: self.sub_question_cap]),
                                reason="missing facts remain")
        else:
            # Every proposed sub-question is a duplicate or dead; waiting
            # out the budget gains nothing.
            decision = Decision(kind="conclude", forced=True,
                                reason="no new sub-questions to pursue")
        state.current.decision = decision
        state.log("decide", kind=decision.kind, forced=decision.forced,
                  reason=decision.reason, next=list(decision.next_sub_questions))
        return decision

    @staticmethod
    def _retryable(state: EpisodeState) -> list[str]:
        """Failed sub-questions still owed their single retry."""
        out: list[str] = []
        picked: set[str] = set()
        for it in state.iterations:
            for obs in it.observations:
                if obs.ok:
                    continue
                norm = _normalize(obs.sub_question)
                if (state.failures.get(norm, 0) == 1 and norm not in state.dead
                        and norm not in state.succeeded and norm not in picked):
                    out.append(obs.sub_question)
                    picked.add(norm)
        return out

    @staticmethod
    def _fresh_missing(state: EpisodeState, missing: Sequence[str]) -> list[str]:
        out: list[str] = []
        picked: set[str] = set()
        for sq in missing:
            norm = _normalize(sq)
            if norm and norm not in state.seen and norm not in state.dead \
                    and norm not in picked:
                out.append(sq)
                picked.add(norm)
        return out

    # -- stage: act ---------------------------------------------------------

    def act(self, state: EpisodeState, decision: Decision) -> EpisodeState:
        """Execute the decision: queue sub-questions or render a conclusion."""
        if state.conclusion is not None:
            raise ValueError("episode already concluded")
        if decision.kind == "abort":
            raise ResourceExhausted("all resources failed on every sub-question")

        if decision.kind == "continue":
            queued, retried = [], []
            pending_norms = {_normalize(p) for p in state.pending}
            for sq in decision.next_sub_questions:
                norm = _normalize(sq)
                if norm in pending_norms or norm in state.dead or norm in state.succeeded:
                    continue
                if norm in state.seen:
                    # A failed observation gets exactly one retry.
                    if state.failures.get(norm, 0) == 1:
                        state.queue([sq], bypass_dedup=True)
                        retried.append(sq)
                        pending_norms.add(norm)
                elif state.queue([sq]):
                    queued.append(sq)
                    pending_norms.add(norm)
            state.current.actions.append(
                {"type": "continue", "queued": queued, "retried": retried})
            state.log("act", queued=queued, retried=retried)
            if not state.pending:  # pragma: no cover - decide() prevents this
                decision = Decision(kind="conclude", forced=True,
                                    reason="no new sub-questions to pursue")
                state.current.decision = decision
            else:
                return state

        self._conclude(state, forced=decision.forced)
        return state

    def _conclude(self, state: EpisodeState, *, forced: bool) -> None:
        orientation = state.current.orientation if state.iterations else None
        answer_text = orientation.understanding if orientation and orientation.understanding \
            else self._fallback_understanding(state)
        evidence = tuple(ref for ref, _ in state.successful_observations())
        if forced:
            status = "unverified"
        else:
            status = self.verify_conclusion(
                answer_text, [obs for _, obs in state.successful_observations()])
            state.log("verify", status=status)
        state.conclusion = Conclusion(
            answer_text=answer_text,
            evidence=evidence,
            iterations_used=state.iteration,
            verification_status=status,
        )
        if state.iterations:
            state.current.actions.append({"type": "conclude", "forced": forced})
        state.log("act", concluded=True, forced=forced)

    # -- stage: verify ------------------------------------------------------

    def verify_conclusion(self, answer_text: str,
                          evidence: list[Observation]) -> str:
        """Judge the conclusion against its evidence: consistent,
        inconsistent, or unverified when the judge is unreachable."""
        prompt = OODA_VERIFY.render(
            conclusion=answer_text,
            evidence=_render_evidence(evidence),
        )
        try:
            response = self.generator.complete(
                [ChatMessage(role="user", content=prompt)], self.params)
        except EngineError:
            return "unverified"
        if re.search(r"\bINCONSISTENT\b", response):
            return "inconsistent"
        if re.search(r"\bCONSISTENT\b", response):
            return "consistent"
        return "unverified"

    # -- episode driver -----------------------------------------------------

    def run_episode(self, task: Task, max_iterations: int | None = None) -> OodaEpisode:
        """Full episode: decompose, loop OODA stages, conclude.

        Terminates within the iteration budget for every input; raises
        ResourceExhausted only when no resource ever produced evidence.
        """
        budget = max_iterations if max_iterations is not None else self.max_iterations
        if budget < 1:
            raise ValueError("max_iterations must be >= 1")
        state = EpisodeState(task, budget)
        state.log("episode_start", question=task.question,
                  instructions=task.instructions, max_iterations=budget,
                  prompt_versions=OODA_PROMPT_VERSIONS)

        sub_questions = self.decompose_question(task.question, task.instructions)
        state.queue(sub_questions)
        state.log("decompose", sub_questions=sub_questions)

        for _ in range(budget):
            state.begin_iteration()
            self.observe(state)
            self.orient(state)
            decision = self.decide(state)
            self.act(state, decision)
            if state.conclusion is not None:
                break

        if state.conclusion is None:  # pragma: no cover - decide's cap rule fires first
            self._conclude(state, forced=True)

        conclusion = state.conclusion
        assert conclusion is not None
        state.log("conclusion", answer=conclusion.answer_text,
                  evidence=[list(ref) for ref in conclusion.evidence],
                  iterations_used=conclusion.iterations_used,
                  verification_status=conclusion.verification_status)
        return OodaEpisode(
            task_question=task.question,
            conclusion=conclusion,
            iterations=state.iterations,
            trace=state.trace,
        )

    def solve(self, task: Task, max_iterations: int | None = None) -> Conclusion:
        return self.run_episode(task, max_iterations).conclusion
