from __future__ import annotations

import json
from pathlib import Path

import pytest

from ragbench.config import API_KEY_ENV, EngineConfig, RunConfig, build_embedder, build_generator
from ragbench.embedder import HashEmbedder, RemoteEmbedder
from ragbench.errors import ConfigError
from ragbench.generator import RemoteGenerator, ScriptedGenerator


def write_json(tmp_path, name: str, data: dict) -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


class TestEngineConfig:
    def test_defaults(self, tmp_path):
        path = write_json(tmp_path, "engine.json", {})
        config = EngineConfig.load(path)
        assert config.chunk_size == 1024
        assert config.chunk_overlap == 0
        assert config.k == 10
        assert config.reasoning_mode == "one_pass"
        assert config.context_budget_tokens == 3000

    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = write_json(tmp_path, "engine.json", {"tpyo": 1})
        with pytest.raises(ConfigError, match="tpyo"):
            EngineConfig.load(path)

    def test_unknown_nested_key_rejected(self, tmp_path):
        path = write_json(tmp_path, "engine.json", {"chunking": {"sizee": 10}})
        with pytest.raises(ConfigError, match="sizee"):
            EngineConfig.load(path)

    def test_bad_chunking_rejected(self, tmp_path):
        path = write_json(tmp_path, "engine.json",
                          {"chunking": {"size": 8, "overlap": 8}})
        with pytest.raises(ConfigError):
            EngineConfig.load(path)

    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        sub = tmp_path / "nested"
        sub.mkdir()
        path = write_json(sub, "engine.json",
                          {"corpus": {"paths": ["docs"]}, "output_dir": "out"})
        config = EngineConfig.load(path)
        assert config.corpus_paths == [sub / "docs"]
        assert config.output_dir == sub / "out"

    def test_unreadable_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError):
            EngineConfig.load(bad)


class TestBackendBuilders:
    def test_hash_mock_requires_dims(self):
        with pytest.raises(ConfigError, match="dims"):
            build_embedder({"kind": "hash_mock"})
        assert isinstance(build_embedder({"kind": "hash_mock", "dims": 8}), HashEmbedder)

    def test_remote_embedder_requires_endpoint_and_model(self):
        with pytest.raises(ConfigError):
            build_embedder({"kind": "remote", "dims": 8})
        backend = build_embedder({"kind": "remote", "endpoint": "http://x/e",
                                  "model_name": "m", "dims": 8})
        assert isinstance(backend, RemoteEmbedder)

    def test_unknown_embedder_kind(self):
        with pytest.raises(ConfigError):
            build_embedder({"kind": "quantum"})

    def test_scripted_generator_from_rules_file(self, tmp_path):
        rules = write_json(tmp_path, "rules.json", {"rules": [], "fallback": "hm"})
        backend = build_generator({"kind": "scripted", "rules_file": "rules.json"},
                                  base_dir=tmp_path)
        assert isinstance(backend, ScriptedGenerator)

    def test_remote_generator(self):
        backend = build_generator({"kind": "remote", "endpoint": "http://x/c",
                                   "model_name": "m"}, base_dir=Path("."))
        assert isinstance(backend, RemoteGenerator)

    def test_credentials_come_from_env_only(self, monkeypatch):
        monkeypatch.setenv(API_KEY_ENV, "sk-secret")
        backend = build_generator({"kind": "remote", "endpoint": "http://x/c",
                                   "model_name": "m"}, base_dir=Path("."))
        assert backend._session.headers["Authorization"] == "Bearer sk-secret"
        monkeypatch.delenv(API_KEY_ENV)
        bare = build_generator({"kind": "remote", "endpoint": "http://x/c",
                                "model_name": "m"}, base_dir=Path("."))
        assert "Authorization" not in bare._session.headers


def run_config_dict(**overrides) -> dict:
    base = {
        "dataset": "dataset.jsonl",
        "split": {"n_train": 0, "seed": 1, "run_on": "test"},
        "backends": {
            "embedders": {"e1": {"kind": "hash_mock", "dims": 8}},
            "generators": {"g1": {"kind": "scripted", "rules_file": "rules.json"}},
        },
        "configurations": [{
            "config_id": "cfg",
            "retriever": {"variant": "generic", "backend_id": "e1"},
            "generator": {"variant": "generic", "backend_id": "g1"},
            "reasoning": {"mode": "one_pass", "max_iterations": 5},
            "k": 4,
        }],
    }
    base.update(overrides)
    return base


class TestRunConfig:
    def test_loads_explicit_configurations(self, tmp_path):
        path = write_json(tmp_path, "run.json", run_config_dict())
        run = RunConfig.load(path)
        assert run.configurations[0].k == 4
        assert run.dataset_path == tmp_path / "dataset.jsonl"

    def test_canonical_and_explicit_conflict(self, tmp_path):
        data = run_config_dict(canonical={
            "generic_embedder": "e1", "tuned_embedder": "e1",
            "generic_generator": "g1", "tuned_generator": "g1"})
        path = write_json(tmp_path, "run.json", data)
        with pytest.raises(ConfigError, match="not both"):
            RunConfig.load(path)

    def test_unknown_backend_reference(self, tmp_path):
        data = run_config_dict()
        data["configurations"][0]["retriever"]["backend_id"] = "ghost"
        path = write_json(tmp_path, "run.json", data)
        with pytest.raises(ConfigError, match="ghost"):
            RunConfig.load(path)

    def test_duplicate_config_ids_rejected(self, tmp_path):
        data = run_config_dict()
        data["configurations"].append(dict(data["configurations"][0]))
        path = write_json(tmp_path, "run.json", data)
        with pytest.raises(ConfigError, match="unique"):
            RunConfig.load(path)

    def test_reference_embedder_by_id(self, tmp_path):
        data = run_config_dict(reference_embedder={"embedder_id": "e1"})
        path = write_json(tmp_path, "run.json", data)
        run = RunConfig.load(path)
        embedders = run.make_embedders()
        assert run.make_reference_embedder(embedders) is embedders["e1"]
