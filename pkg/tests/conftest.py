"""Shared fixtures: a small store and a scriptable generation server."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from queryloop.store import TripleStore, load_ntriples

EX = "http://example.org/ns/"

SMALL_NT = f"""\
<{EX}A> <{EX}p> <{EX}B> .
<{EX}A> <{EX}p> <{EX}C> .
<{EX}B> <{EX}q> <{EX}D> .
<{EX}C> <{EX}q> <{EX}D> .
<{EX}D> <{EX}name> "dee" .
"""


@pytest.fixture
def small_store() -> TripleStore:
    return load_ntriples(SMALL_NT, prefix_map={"ex": EX})


class GenerationServer(ThreadingHTTPServer):
    """Implements the generation-service contract with scripted replies.

    Replies are consumed in order; stop sequences are honored inclusively
    (truncate after the first stop sequence), like a conforming server.
    ``status_pattern`` scripts HTTP statuses ahead of normal replies.
    """

    daemon_threads = True

    def __init__(self, replies: list[str], status_pattern: list[int] | None = None):
        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                pass

            def do_POST(handler):  # noqa: N805 - handler idiom
                server: GenerationServer = handler.server  # type: ignore[assignment]
                length = int(handler.headers.get("Content-Length") or 0)
                body = json.loads(handler.rfile.read(length) or b"{}")
                with server._lock:
                    server.requests.append(body)
                    status = server._statuses.pop(0) if server._statuses else 200
                    reply = server._replies.pop(0) if server._replies else ""
                if status != 200:
                    payload = b"scripted failure"
                    handler.send_response(status)
                    handler.send_header("Content-Length", str(len(payload)))
                    handler.end_headers()
                    handler.wfile.write(payload)
                    return
                for stop in body.get("stop") or []:
                    idx = reply.find(stop)
                    if idx >= 0:
                        reply = reply[: idx + len(stop)]
                payload = json.dumps({"text": reply}).encode("utf-8")
                handler.send_response(200)
                handler.send_header("Content-Type", "application/json")
                handler.send_header("Content-Length", str(len(payload)))
                handler.end_headers()
                handler.wfile.write(payload)

        super().__init__(("127.0.0.1", 0), Handler)
        self._replies = list(replies)
        self._statuses = list(status_pattern or [])
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.server_address[1]}/generate"

    def stop(self) -> None:
        self.shutdown()
        self._thread.join(timeout=5)
        self.server_close()


@pytest.fixture
def generation_server():
    servers: list[GenerationServer] = []

    def factory(replies: list[str], status_pattern: list[int] | None = None) -> GenerationServer:
        server = GenerationServer(replies, status_pattern)
        servers.append(server)
        return server

    yield factory
    for server in servers:
        server.stop()
