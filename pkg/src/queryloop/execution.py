"""Execution outcomes and the embedded execution path.

An :data:`ExecutionOutcome` is what one SPARQL execution produced: either
``Success`` (rows, or a boolean for ASK) or a typed ``Failure``. An empty
row set is a Success — only syntax, timeout, HTTP, and transport problems
count as failures (and therefore toward an episode's error count).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol, Union

from .store import TripleStore
from .subset import SparqlSyntaxError, execute_subset, parse_subset
from .terms import RdfTerm

FAIL_SYNTAX = "syntax"
FAIL_TIMEOUT = "timeout"
FAIL_HTTP = "http"
FAIL_TRANSPORT = "transport"


@dataclass(frozen=True)
class Success:
    rows: tuple[Mapping[str, RdfTerm], ...]
    variables: tuple[str, ...] = ()
    is_boolean: bool | None = None
    elapsed: float = 0.0


@dataclass(frozen=True)
class Failure:
    category: str  # one of the FAIL_* constants
    message: str
    status: int | None = None  # HTTP status for FAIL_HTTP

    def label(self) -> str:
        if self.category == FAIL_HTTP and self.status is not None:
            return f"http {self.status}"
        return self.category


ExecutionOutcome = Union[Success, Failure]


class Executor(Protocol):
    """Anything that can run a query text and report an outcome."""

    prefixes: dict[str, str]

    def execute(self, query: str) -> ExecutionOutcome: ...


class EmbeddedExecutor:
    """Runs subset queries directly against an in-memory store."""

    def __init__(self, store: TripleStore):
        self.store = store
        self.prefixes = dict(store.prefix_map)

    def execute(self, query: str) -> ExecutionOutcome:
        try:
            parsed = parse_subset(query, self.store.prefix_map)
        except SparqlSyntaxError as exc:
            return Failure(FAIL_SYNTAX, str(exc))
        result = execute_subset(parsed, self.store)
        if isinstance(result, bool):
            return Success(rows=(), is_boolean=result)
        return Success(rows=tuple(result), variables=parsed.variables)
