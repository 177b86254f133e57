"""Exception hierarchy shared by all engine modules.

Errors that surface from a pipeline stage carry an optional ``stage``
label ("retrieve", "augment", "generate", ...) so benchmark records can
attribute failures to the step that produced them.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all errors raised by this package."""

    def __init__(self, message: str, *, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


class ConfigError(EngineError):
    """Invalid or unknown configuration content."""


class ParseError(EngineError):
    """Malformed input row or file; carries the offending location."""

    def __init__(self, message: str, *, line: int | None = None, path: str | None = None):
        loc = ""
        if path is not None:
            loc += f" [{path}"
            loc += f":{line}]" if line is not None else "]"
        elif line is not None:
            loc += f" [line {line}]"
        super().__init__(message + loc)
        self.line = line
        self.path = path


# corpus

class DuplicateDocument(EngineError):
    pass


class EmptyDocument(EngineError):
    pass


class InvalidChunkSpec(EngineError):
    pass


# embedder

class EmbedderUnavailable(EngineError):
    """Remote embedding endpoint failed after retries; retryable."""


class BackendContractViolation(EngineError):
    """A backend returned data outside its declared contract."""


class DimensionMismatch(EngineError):
    pass


class ZeroVector(EngineError):
    pass


# vindex

class DuplicateChunk(EngineError):
    pass


class EmptyIndex(EngineError):
    pass


# generator

class GeneratorUnavailable(EngineError):
    """Remote generation endpoint failed after retries; retryable."""


class EmptyGeneration(EngineError):
    """Provider returned an empty or refused completion."""


# rag / ooda

class InvalidQuestion(EngineError):
    pass


class ResourceExhausted(EngineError):
    """Every resource failed on every sub-question of an episode."""


# evaluation

class MetricUnavailable(EngineError):
    """Judge backend could not produce a verdict; recorded, not fatal."""


class ReferenceMissing(EngineError):
    pass


class InvalidScore(EngineError):
    pass


class DuplicateVerdict(EngineError):
    pass


# benchmark

class UnknownCategory(EngineError):
    pass


class InvalidSplit(EngineError):
    pass


class InvalidSample(EngineError):
    pass


class ManifestWriteFailure(EngineError):
    pass
