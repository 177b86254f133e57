"""Chat-style generation backends and RAG prompt construction.

Two backends: a remote endpoint speaking the prevailing chat-completions
wire shape, and a scripted backend that is a pure function of
(messages, behavior) for hermetic, bit-reproducible runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .corpus import Tokenizer, WordTokenizer
from .errors import ConfigError, EmptyGeneration, GeneratorUnavailable
from .prompts import RAG_ANSWER

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")

DEFAULT_CONTEXT_BUDGET_TOKENS = 3000
DEFAULT_MAX_OUTPUT_TOKENS = 1024
DEFAULT_IN_FLIGHT_LIMIT = 4
DEFAULT_RETRIES = 3
DEFAULT_BACKOFF_BASE_S = 0.5

NO_CONTEXT_MARKER = "[no context retrieved]"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} message must have content")


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    seed: int | None = None


class GeneratorBackend(Protocol):
    def fingerprint(self) -> str: ...

    def complete(self, messages: Sequence[ChatMessage],
                 params: GenerationParams | None = None) -> str: ...


def render_messages(messages: Sequence[ChatMessage]) -> str:
    """Canonical single-string render; scripted matchers run against this."""
    return "\n".join(f"{m.role}: {m.content}" for m in messages)


def _check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValueError("messages must be non-empty")
    if messages[-1].role != "user":
        raise ValueError("last message must have role 'user'")


@dataclass(frozen=True)
class ScriptedRule:
    """One matcher/response pair. First matching rule wins.

    kinds: ``contains`` (substring), ``contains_all`` (every substring),
    ``regex`` (search; the response may use group backreferences), and
    ``predicate`` (any callable, not file-loadable).
    """

    kind: str
    pattern: str | Sequence[str] | Callable[[str], bool]
    response: str

    def try_match(self, rendered: str) -> str | None:
        if self.kind == "contains":
            return self.response if str(self.pattern) in rendered else None
        if self.kind == "contains_all":
            assert not isinstance(self.pattern, str)
            return self.response if all(p in rendered for p in self.pattern) else None  # type: ignore[union-attr]
        if self.kind == "regex":
            m = re.search(str(self.pattern), rendered, flags=re.DOTALL)
            return m.expand(self.response) if m else None
        if self.kind == "predicate":
            assert callable(self.pattern)
            return self.response if self.pattern(rendered) else None
        raise ConfigError(f"unknown scripted rule kind {self.kind!r}")


@dataclass
class ScriptedBehavior:
    rules: list[ScriptedRule] = field(default_factory=list)
    fallback: str = "I cannot determine the answer from the provided context."

    def respond(self, rendered: str) -> str:
        for rule in self.rules:
            out = rule.try_match(rendered)
            if out is not None:
                return out
        return self.fallback

    def fingerprint(self) -> str:
        payload = json.dumps(
            [[r.kind, r.pattern if not callable(r.pattern) else "<predicate>", r.response]
             for r in self.rules] + [self.fallback],
            ensure_ascii=False, sort_keys=True)
        return "scripted(" + hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16] + ")"

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBehavior":
        """Load ordered matcher/response records from a JSON rules file."""
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
            rules = []
            for row in data.get("rules", []):
                kind = row["match"]["kind"]
                if kind not in ("contains", "contains_all", "regex"):
                    raise ConfigError(f"rules file {path}: unknown matcher kind {kind!r}")
                rules.append(ScriptedRule(
                    kind=kind,
                    pattern=row["match"].get("pattern") or row["match"]["patterns"],
                    response=row["response"],
                ))
            return cls(rules=rules, fallback=data.get("fallback", cls.fallback))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad scripted rules file {path}: {exc}") from exc


class ScriptedGenerator:
    """Deterministic rule-driven backend; performs no I/O."""

    def __init__(self, behavior: ScriptedBehavior):
        self.behavior = behavior
        self.calls = 0
        self._lock = threading.Lock()

    def fingerprint(self) -> str:
        return self.behavior.fingerprint()

    def complete(self, messages: Sequence[ChatMessage],
                 params: GenerationParams | None = None) -> str:
        _check_messages(messages)
        response = self.behavior.respond(render_messages(messages))
        with self._lock:
            self.calls += 1
        if not response:
            raise EmptyGeneration("scripted rule produced an empty response")
        return response


class RemoteGenerator:
    """HTTP chat-completions client with retry, backoff and an in-flight cap.

    Wire shape: POST {model, messages, temperature, max_tokens, seed?};
    response {"choices": [{"message": {"content": str}}]}. A response, once
    accepted, terminates the attempt loop, so retries never duplicate a
    successful completion.
    """

    def __init__(self, endpoint: str, model_name: str, *,
                 timeout_s: float = 60.0,
                 max_retries: int = DEFAULT_RETRIES,
                 backoff_base_s: float = DEFAULT_BACKOFF_BASE_S,
                 in_flight_limit: int = DEFAULT_IN_FLIGHT_LIMIT,
                 session: requests.Session | None = None):
        self.endpoint = endpoint
        self.model_name = model_name
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s
        self._session = session or requests.Session()
        self._slots = threading.Semaphore(in_flight_limit)
        self.calls = 0
        self._lock = threading.Lock()

    def fingerprint(self) -> str:
        return f"remote(endpoint={self.endpoint},model={self.model_name})"

    def complete(self, messages: Sequence[ChatMessage],
                 params: GenerationParams | None = None) -> str:
        _check_messages(messages)
        p = params or GenerationParams()
        payload: dict = {
            "model": self.model_name,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": p.temperature,
            "max_tokens": p.max_output_tokens,
        }
        if p.seed is not None:
            payload["seed"] = p.seed

        last_exc: Exception | None = None
        with self._slots:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    time.sleep(self.backoff_base_s * (2 ** (attempt - 1)))
                try:
                    resp = self._session.post(self.endpoint, json=payload, timeout=self.timeout_s)
                    resp.raise_for_status()
                    body = resp.json()
                except (requests.RequestException, ValueError) as exc:
                    logger.warning("generation request failed (attempt %d): %s", attempt + 1, exc)
                    last_exc = exc
                    continue
                with self._lock:
                    self.calls += 1
                try:
                    content = body["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError) as exc:
                    raise EmptyGeneration(f"malformed completion response: {exc}") from exc
                if not content:
                    raise EmptyGeneration("provider returned an empty completion")
                return content
        raise GeneratorUnavailable(
            f"generation endpoint failed after {self.max_retries + 1} attempts") from last_exc


@dataclass(frozen=True)
class PromptContext:
    """A retrieved passage plus the provenance tag shown in the prompt."""

    tag: str
    text: str


RAG_PROMPT_VERSION = RAG_ANSWER.version_string


def build_rag_prompt(
    question: str,
    contexts: Sequence[PromptContext],
    *,
    budget_tokens: int = DEFAULT_CONTEXT_BUDGET_TOKENS,
    tokenizer: Tokenizer | None = None,
) -> list[ChatMessage]:
    """Assemble the one-pass answer prompt.

    Contexts render in retrieval-rank order, each prefixed by its
    provenance tag. When the rendered context blocks exceed the token
    budget, whole chunks are dropped from the tail; the question is never
    truncated.
    """
    if not question:
        raise ValueError("question must be non-empty")
    tok = tokenizer or WordTokenizer()
    blocks = [f"[{i}] ({c.tag}) {c.text}" for i, c in enumerate(contexts, start=1)]
    counts = [len(tok.tokenize(b)) for b in blocks]
    kept = len(blocks)
    while kept > 0 and sum(counts[:kept]) > budget_tokens:
        kept -= 1

    if kept:
        context_section = "Context passages:\n" + "\n\n".join(blocks[:kept])
    else:
        context_section = NO_CONTEXT_MARKER
    user = f"{context_section}\n\nQuestion: {question}"
    return [
        ChatMessage(role="system", content=RAG_ANSWER.text),
        ChatMessage(role="user", content=user),
    ]
