"""Declarative engine and run configuration.

Config files are JSON; unknown keys are rejected so typos fail loudly.
Relative paths resolve against the config file's directory. Endpoint
credentials come only from the RAGBENCH_API_KEY environment variable,
never from config files.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import requests

from .benchmark import SystemConfiguration, canonical_configurations
from .embedder import EmbedderBackend, HashEmbedder, RemoteEmbedder
from .errors import ConfigError
from .evaluation import Judge
from .generator import GeneratorBackend, RemoteGenerator, ScriptedBehavior, ScriptedGenerator

API_KEY_ENV = "RAGBENCH_API_KEY"


def _check_keys(data: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def _session_with_credentials() -> requests.Session | None:
    key = os.environ.get(API_KEY_ENV)
    if not key:
        return None
    session = requests.Session()
    session.headers["Authorization"] = f"Bearer {key}"
    return session


def build_embedder(spec: Mapping[str, Any], *, where: str = "embedder") -> EmbedderBackend:
    _check_keys(spec, {"kind", "dims", "seed", "endpoint", "model_name",
                       "timeout_s", "max_retries", "backoff_base_s", "batch_size"}, where)
    kind = spec.get("kind")
    if kind == "hash_mock":
        if "dims" not in spec:
            raise ConfigError(f"{where}: hash_mock requires dims")
        return HashEmbedder(spec["dims"], seed=spec.get("seed", 1315423911))
    if kind == "remote":
        if "endpoint" not in spec or "model_name" not in spec:
            raise ConfigError(f"{where}: remote requires endpoint and model_name")
        if "dims" not in spec:
            raise ConfigError(f"{where}: remote requires dims")
        return RemoteEmbedder(
            spec["endpoint"], spec["model_name"], spec["dims"],
            timeout_s=spec.get("timeout_s", 30.0),
            max_retries=spec.get("max_retries", 3),
            backoff_base_s=spec.get("backoff_base_s", 0.5),
            batch_size=spec.get("batch_size", 32),
            session=_session_with_credentials(),
        )
    raise ConfigError(f"{where}: unknown embedder kind {kind!r}")


def build_generator(spec: Mapping[str, Any], *, base_dir: Path,
                    where: str = "generator") -> GeneratorBackend:
    _check_keys(spec, {"kind", "rules_file", "endpoint", "model_name",
                       "timeout_s", "max_retries", "backoff_base_s", "in_flight_limit"}, where)
    kind = spec.get("kind")
    if kind == "scripted":
        if "rules_file" not in spec:
            raise ConfigError(f"{where}: scripted requires rules_file")
        return ScriptedGenerator(ScriptedBehavior.from_file(base_dir / spec["rules_file"]))
    if kind == "remote":
        if "endpoint" not in spec or "model_name" not in spec:
            raise ConfigError(f"{where}: remote requires endpoint and model_name")
        return RemoteGenerator(
            spec["endpoint"], spec["model_name"],
            timeout_s=spec.get("timeout_s", 60.0),
            max_retries=spec.get("max_retries", 3),
            backoff_base_s=spec.get("backoff_base_s", 0.5),
            in_flight_limit=spec.get("in_flight_limit", 4),
            session=_session_with_credentials(),
        )
    raise ConfigError(f"{where}: unknown generator kind {kind!r}")


@dataclass
class EngineConfig:
    base_dir: Path
    corpus_paths: list[Path] = field(default_factory=list)
    chunk_size: int = 1024
    chunk_overlap: int = 0
    snap_to_sentence: bool = False
    embedder_spec: dict | None = None
    generator_spec: dict | None = None
    judge_spec: dict | None = None
    k: int = 10
    reasoning_mode: str = "one_pass"
    max_iterations: int = 5
    context_budget_tokens: int = 3000
    split_seed: int = 0
    sample_seed: int = 0
    workers: int = 1
    output_dir: Path = Path("ragbench_out")

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], *, base_dir: Path) -> "EngineConfig":
        _check_keys(data, {"corpus", "chunking", "embedder", "generator", "judge", "k",
                           "reasoning", "context_budget_tokens", "seeds", "workers",
                           "output_dir"}, "config")
        corpus = data.get("corpus", {})
        _check_keys(corpus, {"paths"}, "corpus")
        chunking = data.get("chunking", {})
        _check_keys(chunking, {"size", "overlap", "snap_to_sentence"}, "chunking")
        reasoning = data.get("reasoning", {})
        _check_keys(reasoning, {"mode", "max_iterations"}, "reasoning")
        seeds = data.get("seeds", {})
        _check_keys(seeds, {"split", "sample"}, "seeds")

        mode = reasoning.get("mode", "one_pass")
        if mode not in ("one_pass", "ooda"):
            raise ConfigError(f"unknown reasoning mode {mode!r}")

        config = cls(
            base_dir=base_dir,
            corpus_paths=[base_dir / p for p in corpus.get("paths", [])],
            chunk_size=chunking.get("size", 1024),
            chunk_overlap=chunking.get("overlap", 0),
            snap_to_sentence=chunking.get("snap_to_sentence", False),
            embedder_spec=data.get("embedder"),
            generator_spec=data.get("generator"),
            judge_spec=data.get("judge"),
            k=data.get("k", 10),
            reasoning_mode=mode,
            max_iterations=reasoning.get("max_iterations", 5),
            context_budget_tokens=data.get("context_budget_tokens", 3000),
            split_seed=seeds.get("split", 0),
            sample_seed=seeds.get("sample", 0),
            workers=data.get("workers", 1),
            output_dir=base_dir / data.get("output_dir", "ragbench_out"),
        )
        if config.chunk_size < 1 or not 0 <= config.chunk_overlap < config.chunk_size:
            raise ConfigError("chunking requires size >= 1 and 0 <= overlap < size")
        if config.embedder_spec is not None:
            _check_keys(config.embedder_spec,
                        {"kind", "dims", "seed", "endpoint", "model_name", "timeout_s",
                         "max_retries", "backoff_base_s", "batch_size"}, "embedder")
        return config

    def make_embedder(self) -> EmbedderBackend:
        if self.embedder_spec is None:
            raise ConfigError("config has no embedder")
        return build_embedder(self.embedder_spec)

    def make_generator(self) -> GeneratorBackend:
        if self.generator_spec is None:
            raise ConfigError("config has no generator")
        return build_generator(self.generator_spec, base_dir=self.base_dir)

    def make_judge(self) -> Judge | None:
        if self.judge_spec is None:
            return None
        return Judge(build_generator(self.judge_spec, base_dir=self.base_dir, where="judge"))


@dataclass
class RunConfig:
    """Benchmark run description: dataset, split, backends, configurations."""

    base_dir: Path
    dataset_path: Path
    n_train: int
    split_seed: int
    run_split: str
    embedder_specs: dict[str, dict]
    generator_specs: dict[str, dict]
    configurations: list[SystemConfiguration]
    judge_spec: dict | None = None
    reference_embedder_spec: dict | None = None
    workers: int = 1

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read run config {path}: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], *, base_dir: Path) -> "RunConfig":
        _check_keys(data, {"dataset", "split", "backends", "judge", "reference_embedder",
                           "configurations", "canonical", "workers"}, "run config")
        if "dataset" not in data:
            raise ConfigError("run config requires a dataset path")
        split = data.get("split", {})
        _check_keys(split, {"n_train", "seed", "run_on"}, "split")
        run_split = split.get("run_on", "test")
        if run_split not in ("train", "test", "all"):
            raise ConfigError(f"unknown run_on {run_split!r}")

        backends = data.get("backends", {})
        _check_keys(backends, {"embedders", "generators"}, "backends")
        embedder_specs = dict(backends.get("embedders", {}))
        generator_specs = dict(backends.get("generators", {}))

        if "configurations" in data and "canonical" in data:
            raise ConfigError("give either configurations or canonical, not both")
        if "canonical" in data:
            canon = data["canonical"]
            _check_keys(canon, {"generic_embedder", "tuned_embedder", "generic_generator",
                                "tuned_generator", "k", "ooda_max_iterations"}, "canonical")
            configurations = canonical_configurations(
                canon["generic_embedder"], canon["tuned_embedder"],
                canon["generic_generator"], canon["tuned_generator"],
                k=canon.get("k", 10),
                ooda_max_iterations=canon.get("ooda_max_iterations", 5))
        elif "configurations" in data:
            configurations = [SystemConfiguration.from_dict(c) for c in data["configurations"]]
        else:
            raise ConfigError("run config requires configurations or canonical")

        config_ids = [c.config_id for c in configurations]
        if len(config_ids) != len(set(config_ids)):
            raise ConfigError("config_id values must be unique within a run")
        for c in configurations:
            if c.retriever.backend_id not in embedder_specs:
                raise ConfigError(f"{c.config_id}: unknown embedder {c.retriever.backend_id!r}")
            if c.generator.backend_id not in generator_specs:
                raise ConfigError(f"{c.config_id}: unknown generator {c.generator.backend_id!r}")

        return cls(
            base_dir=base_dir,
            dataset_path=base_dir / data["dataset"],
            n_train=split.get("n_train", 0),
            split_seed=split.get("seed", 0),
            run_split=run_split,
            embedder_specs=embedder_specs,
            generator_specs=generator_specs,
            configurations=configurations,
            judge_spec=data.get("judge"),
            reference_embedder_spec=data.get("reference_embedder"),
            workers=data.get("workers", 1),
        )

    def make_embedders(self) -> dict[str, EmbedderBackend]:
        return {bid: build_embedder(spec, where=f"embedders.{bid}")
                for bid, spec in self.embedder_specs.items()}

    def make_generators(self) -> dict[str, GeneratorBackend]:
        return {bid: build_generator(spec, base_dir=self.base_dir, where=f"generators.{bid}")
                for bid, spec in self.generator_specs.items()}

    def make_judge(self) -> Judge | None:
        if self.judge_spec is None:
            return None
        return Judge(build_generator(self.judge_spec, base_dir=self.base_dir, where="judge"))

    def make_reference_embedder(self,
                                embedders: Mapping[str, EmbedderBackend]) -> EmbedderBackend | None:
        spec = self.reference_embedder_spec
        if spec is None:
            return None
        if "embedder_id" in spec:
            _check_keys(spec, {"embedder_id"}, "reference_embedder")
            try:
                return embedders[spec["embedder_id"]]
            except KeyError:
                raise ConfigError(
                    f"reference_embedder: unknown embedder {spec['embedder_id']!r}") from None
        return build_embedder(spec, where="reference_embedder")
