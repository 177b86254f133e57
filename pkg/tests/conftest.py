"""Shared fixtures: a local HTTP server standing in for remote backends."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class _BackendHandler(BaseHTTPRequestHandler):
    """Deterministic embeddings/chat endpoints plus failure-mode paths."""

    server_version = "stub"

    def log_message(self, *args) -> None:  # keep test output quiet
        pass

    def _read_json(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        return json.loads(self.rfile.read(length))

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self) -> None:  # noqa: N802 - http.server API
        request = self._read_json()
        counters = self.server.counters  # type: ignore[attr-defined]
        counters[self.path] = counters.get(self.path, 0) + 1

        if self.path == "/embeddings":
            vectors = [
                {"index": i, "embedding": _fake_embedding(text, dims=8)}
                for i, text in enumerate(request["input"])
            ]
            self._reply(200, {"data": vectors})
        elif self.path == "/embeddings-bad-dims":
            vectors = [
                {"index": i, "embedding": _fake_embedding(text, dims=3)}
                for i, text in enumerate(request["input"])
            ]
            self._reply(200, {"data": vectors})
        elif self.path == "/chat":
            last = request["messages"][-1]["content"]
            self._reply(200, {"choices": [{"message": {"content": f"echo: {last[:40]}"}}]})
        elif self.path == "/chat-empty":
            self._reply(200, {"choices": [{"message": {"content": ""}}]})
        elif self.path == "/flaky-chat":
            if counters[self.path] % 3 == 0:
                self._reply(200, {"choices": [{"message": {"content": "third time lucky"}}]})
            else:
                self._reply(500, {"error": "transient"})
        elif self.path == "/down":
            self._reply(500, {"error": "permanently down"})
        else:
            self._reply(404, {"error": "unknown path"})


def _fake_embedding(text: str, dims: int) -> list[float]:
    values = [float((hash_stable(text) >> (8 * i)) % 251 + 1) for i in range(dims)]
    return values


def hash_stable(text: str) -> int:
    import hashlib
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


@pytest.fixture(scope="session")
def backend_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _BackendHandler)
    server.counters = {}  # type: ignore[attr-defined]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
