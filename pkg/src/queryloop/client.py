"""SPARQL-protocol HTTP client with memoization, retry/backoff, and timeouts.

Retry policy: transport errors and 5xx responses are retried with
exponential backoff (base * factor^attempt) up to ``max_retries``;
timeouts are never retried (the time budget is spent) and neither are
4xx responses (deterministic). HTTP 400 is mapped to a Syntax failure —
that is the endpoint telling us the query does not parse — and Syntax
failures are the only failures the cache keeps.
"""

from __future__ import annotations

import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

import requests

from .execution import (
    ExecutionOutcome,
    FAIL_HTTP,
    FAIL_SYNTAX,
    FAIL_TIMEOUT,
    FAIL_TRANSPORT,
    Failure,
    Success,
)
from .subset import PrecheckError, lexical_precheck
from .terms import BlankNode, Iri, Literal, RdfTerm

SPARQL_RESULTS_JSON = "application/sparql-results+json"


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    timeout: float = 3.0
    max_retries: int = 3
    backoff_base: float = 0.25
    backoff_factor: float = 2.0
    cache_capacity: int = 10_000
    max_parallel: int = 8

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.cache_capacity < 0:
            raise ValueError("cache_capacity must be >= 0")


def normalize_query(text: str) -> str:
    """Collapse whitespace runs outside quoted literals to single spaces and trim."""
    out: list[str] = []
    quote: str | None = None
    i = 0
    n = len(text)
    while i < n:
        c = text[i]
        if quote is not None:
            out.append(c)
            if c == "\\" and i + 1 < n:
                out.append(text[i + 1])
                i += 2
                continue
            if c == quote:
                quote = None
        elif c in ('"', "'"):
            quote = c
            out.append(c)
        elif c.isspace():
            while i + 1 < n and quote is None and text[i + 1].isspace():
                i += 1
            out.append(" ")
        else:
            out.append(c)
        i += 1
    return "".join(out).strip()


class LruCache:
    """Thread-safe LRU map; concurrent writes are last-writer-wins."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._data: OrderedDict[str, ExecutionOutcome] = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key: str) -> ExecutionOutcome | None:
        with self._lock:
            if key not in self._data:
                return None
            self._data.move_to_end(key)
            return self._data[key]

    def put(self, key: str, value: ExecutionOutcome) -> None:
        if self.capacity <= 0:
            return
        with self._lock:
            self._data[key] = value
            self._data.move_to_end(key)
            while len(self._data) > self.capacity:
                self._data.popitem(last=False)

    def __len__(self) -> int:
        with self._lock:
            return len(self._data)


def _term_from_binding(obj: dict) -> RdfTerm:
    kind = obj.get("type")
    value = obj.get("value", "")
    if kind == "uri":
        return Iri(value)
    if kind in ("literal", "typed-literal"):
        datatype = Iri(obj["datatype"]) if obj.get("datatype") else None
        return Literal(value, datatype=datatype, lang=obj.get("xml:lang"))
    if kind == "bnode":
        return BlankNode(value)
    raise ValueError(f"unknown binding type: {kind!r}")


def _parse_results(payload: dict, elapsed: float) -> ExecutionOutcome:
    if "boolean" in payload:
        return Success(rows=(), is_boolean=bool(payload["boolean"]), elapsed=elapsed)
    variables = tuple(payload.get("head", {}).get("vars", ()))
    rows = []
    for binding in payload.get("results", {}).get("bindings", ()):
        rows.append({var: _term_from_binding(term) for var, term in binding.items()})
    return Success(rows=tuple(rows), variables=variables, elapsed=elapsed)


def execute_remote(
    query: str,
    cfg: EndpointConfig,
    session: requests.Session | None = None,
) -> ExecutionOutcome:
    """POST the query to the endpoint and parse the standard JSON results."""
    sess = session or requests
    last_failure: Failure | None = None
    for attempt in range(cfg.max_retries + 1):
        if attempt > 0:
            time.sleep(cfg.backoff_base * cfg.backoff_factor ** (attempt - 1))
        started = time.monotonic()
        try:
            response = sess.post(
                cfg.url,
                data={"query": query},
                headers={"Accept": SPARQL_RESULTS_JSON},
                timeout=cfg.timeout,
            )
        except requests.Timeout:
            return Failure(FAIL_TIMEOUT, f"query exceeded {cfg.timeout:g}s")
        except requests.RequestException as exc:
            last_failure = Failure(FAIL_TRANSPORT, str(exc))
            continue
        elapsed = time.monotonic() - started
        if response.status_code == 200:
            try:
                return _parse_results(response.json(), elapsed)
            except (ValueError, KeyError) as exc:
                return Failure(FAIL_TRANSPORT, f"unparseable results document: {exc}")
        if response.status_code == 400:
            return Failure(FAIL_SYNTAX, response.text.strip() or "endpoint rejected the query")
        failure = Failure(
            FAIL_HTTP,
            response.text.strip() or response.reason or "server error",
            status=response.status_code,
        )
        if response.status_code < 500:
            return failure
        last_failure = failure
    assert last_failure is not None
    return last_failure


def cached_execute(
    query: str,
    cfg: EndpointConfig,
    cache: LruCache,
    session: requests.Session | None = None,
) -> tuple[ExecutionOutcome, bool]:
    """Memoized execution keyed by the normalized query text.

    Successes and Syntax failures (both deterministic) are cached;
    transient failures are re-attempted on the next call.
    """
    key = normalize_query(query)
    hit = cache.get(key)
    if hit is not None:
        return hit, True
    outcome = execute_remote(query, cfg, session=session)
    if isinstance(outcome, Success) or outcome.category == FAIL_SYNTAX:
        cache.put(key, outcome)
    return outcome, False


class SparqlClient:
    """Shareable client: one session, one cache, bounded in-flight requests."""

    def __init__(self, cfg: EndpointConfig):
        self.cfg = cfg
        self.cache = LruCache(cfg.cache_capacity)
        self.session = requests.Session()
        self._gate = threading.Semaphore(cfg.max_parallel)

    def execute(self, query: str) -> ExecutionOutcome:
        outcome, _ = self.execute_cached(query)
        return outcome

    def execute_cached(self, query: str) -> tuple[ExecutionOutcome, bool]:
        with self._gate:
            return cached_execute(query, self.cfg, self.cache, session=self.session)


class RemoteExecutor:
    """Execution path for episodes running against a remote endpoint.

    Runs the lexical precheck first and records failed prechecks as Syntax
    failures without any network traffic.
    """

    def __init__(self, cfg: EndpointConfig, prefixes: dict[str, str] | None = None):
        self.client = SparqlClient(cfg)
        self.prefixes = dict(prefixes or {})

    def execute(self, query: str) -> ExecutionOutcome:
        try:
            lexical_precheck(query)
        except PrecheckError as exc:
            return Failure(FAIL_SYNTAX, str(exc))
        return self.client.execute(query)
