"""Mini SPARQL-protocol endpoint over an in-memory store.

Serves the standard protocol surface the client speaks — ``query`` via GET
parameter or urlencoded POST, JSON results with the standard bindings
shape — backed by :func:`queryloop.subset.execute_subset`. Non-subset
queries get HTTP 400 with the syntax error as the body.

Test hooks: ``artificial_latency`` delays every response, and
``fail_pattern`` scripts the status codes of successive requests (a 200
entry means "answer normally"), so client retry/backoff behavior can be
exercised deterministically. The server counts requests.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .store import TripleStore
from .subset import SparqlSyntaxError, execute_subset, parse_subset
from .terms import Boolean, BlankNode, Iri, Literal, RdfTerm


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 0  # 0 = pick a free port
    artificial_latency: float = 0.0
    fail_pattern: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.artificial_latency < 0:
            raise ValueError("artificial_latency must be >= 0")


def _binding_json(term: RdfTerm) -> dict:
    if isinstance(term, Iri):
        return {"type": "uri", "value": term.value}
    if isinstance(term, Literal):
        out: dict = {"type": "literal", "value": term.lexical}
        if term.lang is not None:
            out["xml:lang"] = term.lang
        if term.datatype is not None:
            out["datatype"] = term.datatype.value
        return out
    if isinstance(term, BlankNode):
        return {"type": "bnode", "value": term.label}
    if isinstance(term, Boolean):
        # Booleans only arise as ASK results; in a binding render as typed literal.
        return {
            "type": "literal",
            "value": "true" if term.value else "false",
            "datatype": "http://www.w3.org/2001/XMLSchema#boolean",
        }
    raise TypeError(f"not an RDF term: {term!r}")


class _Handler(BaseHTTPRequestHandler):
    server: "MiniEndpoint"

    def log_message(self, fmt: str, *args) -> None:  # silence default stderr chatter
        pass

    def _read_query(self) -> str | None:
        if self.command == "GET":
            params = parse_qs(urlparse(self.path).query)
            values = params.get("query")
            return values[0] if values else None
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length).decode("utf-8") if length else ""
        content_type = (self.headers.get("Content-Type") or "").split(";")[0].strip()
        if content_type == "application/sparql-query":
            return body
        params = parse_qs(body)
        values = params.get("query")
        return values[0] if values else None

    def _respond(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _handle(self) -> None:
        endpoint = self.server
        endpoint.record_request()
        if endpoint.config.artificial_latency > 0:
            time.sleep(endpoint.config.artificial_latency)
        scripted = endpoint.next_scripted_status()
        if scripted is not None and scripted != 200:
            self._respond(scripted, b"scripted failure", "text/plain")
            return
        query = self._read_query()
        if query is None:
            self._respond(400, b"missing query parameter", "text/plain")
            return
        try:
            parsed = parse_subset(query, endpoint.store.prefix_map)
        except SparqlSyntaxError as exc:
            self._respond(400, str(exc).encode("utf-8"), "text/plain")
            return
        result = execute_subset(parsed, endpoint.store)
        if isinstance(result, bool):
            document: dict = {"head": {}, "boolean": result}
        else:
            document = {
                "head": {"vars": list(parsed.variables)},
                "results": {
                    "bindings": [
                        {var: _binding_json(row[var]) for var in parsed.variables} for row in result
                    ]
                },
            }
        self._respond(200, json.dumps(document).encode("utf-8"), "application/sparql-results+json")

    do_GET = _handle
    do_POST = _handle


class MiniEndpoint(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, store: TripleStore, config: ServerConfig):
        super().__init__((config.host, config.port), _Handler)
        self.store = store
        self.config = config
        self._lock = threading.Lock()
        self._request_count = 0
        self._pattern = list(config.fail_pattern)
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}/sparql"

    @property
    def request_count(self) -> int:
        with self._lock:
            return self._request_count

    def record_request(self) -> None:
        with self._lock:
            self._request_count += 1

    def next_scripted_status(self) -> int | None:
        with self._lock:
            if self._pattern:
                return self._pattern.pop(0)
        return None

    def start(self) -> "MiniEndpoint":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.server_close()

    def __enter__(self) -> "MiniEndpoint":
        return self

    def __exit__(self, *exc_info) -> None:
        self.stop()


def serve(store: TripleStore, config: ServerConfig | None = None) -> MiniEndpoint:
    """Start serving the store in a background thread; returns the handle."""
    return MiniEndpoint(store, config or ServerConfig()).start()
