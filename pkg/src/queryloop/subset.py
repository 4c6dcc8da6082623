"""Parser and executor for a restricted SPARQL fragment.

The fragment covers what the curated gold-query shapes and the toy world
need: ``PREFIX`` declarations, ``SELECT ?v ... WHERE { basic graph pattern
with equality FILTERs } LIMIT n``, and ``ASK { ... }``. Everything else
(full SPARQL 1.1) is for remote endpoints and only passes through
:func:`lexical_precheck` here.

Execution semantics: a result row is one satisfying assignment of the
query's variables projected onto the selected ones (no implicit DISTINCT,
so duplicate projections remain duplicate rows). Row order is
deterministic: rows sort lexicographically by the canonical full-form
rendering of the selected terms, in selection order, before LIMIT is
applied.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .store import TripleStore
from .terms import (
    Iri,
    Literal,
    RdfTerm,
    XSD_BOOLEAN,
    XSD_DECIMAL,
    XSD_INTEGER,
    canonical_key,
    expand_qname,
    unescape_literal,
)


class SparqlSyntaxError(ValueError):
    """Positioned syntax error (1-based line/column)."""

    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column
        self.reason = message


class PrecheckError(ValueError):
    """Cheap pre-flight rejection; category is one of unbalanced | bad-form | empty-body."""

    def __init__(self, category: str, message: str):
        super().__init__(f"{category}: {message}")
        self.category = category


@dataclass(frozen=True)
class Var:
    name: str


Pattern = tuple["Var | RdfTerm", "Var | RdfTerm", "Var | RdfTerm"]


@dataclass(frozen=True)
class TriplePattern:
    subject: Var | RdfTerm
    predicate: Var | RdfTerm
    object: Var | RdfTerm

    def variables(self) -> set[str]:
        return {t.name for t in (self.subject, self.predicate, self.object) if isinstance(t, Var)}


@dataclass(frozen=True)
class EqualityFilter:
    var: Var
    term: RdfTerm


@dataclass(frozen=True)
class SubsetQuery:
    form: str  # "select" | "ask"
    variables: tuple[str, ...]
    patterns: tuple[TriplePattern, ...]
    filters: tuple[EqualityFilter, ...] = ()
    limit: int | None = None


# --- tokenizer -------------------------------------------------------------

_KEYWORDS = {"SELECT", "ASK", "WHERE", "PREFIX", "LIMIT", "FILTER", "TRUE", "FALSE"}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<iriref><[^<>\s{}|^`\\]*>)
  | (?P<var>\?[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<decimal>[+-]?[0-9]+\.[0-9]+)
  | (?P<integer>[+-]?[0-9]+)
  | (?P<qname>[A-Za-z_][A-Za-z0-9_\-]*:[A-Za-z0-9_][A-Za-z0-9_.\-]*)
  | (?P<pname>[A-Za-z_][A-Za-z0-9_\-]*:)
  | (?P<name>[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<punct>\^\^|[{}().=])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    line = 1
    line_start = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SparqlSyntaxError(line, pos - line_start + 1, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup or ""
        value = m.group(0)
        if kind not in ("ws", "comment"):
            tokens.append(_Token(kind, value, line, pos - line_start + 1))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = pos + value.rindex("\n") + 1
        pos = m.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


# --- parser ----------------------------------------------------------------


@dataclass
class _Parser:
    tokens: list[_Token]
    prefixes: dict[str, str]
    pos: int = 0
    patterns: list[TriplePattern] = field(default_factory=list)
    filters: list[EqualityFilter] = field(default_factory=list)

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def error(self, tok: _Token, message: str) -> SparqlSyntaxError:
        return SparqlSyntaxError(tok.line, tok.column, message)

    def is_keyword(self, tok: _Token, word: str) -> bool:
        return tok.kind == "name" and tok.text.upper() == word

    def expect_punct(self, text: str) -> _Token:
        tok = self.next()
        if tok.kind != "punct" or tok.text != text:
            raise self.error(tok, f"expected {text!r}")
        return tok

    def parse_query(self) -> SubsetQuery:
        while self.is_keyword(self.peek(), "PREFIX"):
            self.parse_prefix_decl()
        tok = self.peek()
        if self.is_keyword(tok, "SELECT"):
            return self.parse_select()
        if self.is_keyword(tok, "ASK"):
            return self.parse_ask()
        raise self.error(tok, "query must be SELECT or ASK (after PREFIX declarations)")

    def parse_prefix_decl(self) -> None:
        self.next()  # PREFIX
        tok = self.next()
        if tok.kind == "pname":
            name = tok.text[:-1]
        elif tok.kind == "qname" and tok.text.endswith(":"):
            name = tok.text[:-1]
        else:
            raise self.error(tok, "expected prefix name ending in ':'")
        iri_tok = self.next()
        if iri_tok.kind != "iriref":
            raise self.error(iri_tok, "expected IRI reference in PREFIX declaration")
        self.prefixes[name] = iri_tok.text[1:-1]

    def parse_select(self) -> SubsetQuery:
        self.next()  # SELECT
        variables: list[str] = []
        while self.peek().kind == "var":
            variables.append(self.next().text[1:])
        if not variables:
            raise self.error(self.peek(), "SELECT requires at least one variable")
        tok = self.next()
        if not self.is_keyword(tok, "WHERE"):
            raise self.error(tok, "expected WHERE")
        self.parse_group()
        limit: int | None = None
        if self.is_keyword(self.peek(), "LIMIT"):
            self.next()
            tok = self.next()
            if tok.kind != "integer":
                raise self.error(tok, "LIMIT requires an integer")
            limit = int(tok.text)
            if limit < 1:
                raise self.error(tok, "LIMIT must be >= 1")
        self.expect_end()
        return self.finish("select", tuple(variables), limit)

    def parse_ask(self) -> SubsetQuery:
        self.next()  # ASK
        self.parse_group()
        self.expect_end()
        return self.finish("ask", (), None)

    def expect_end(self) -> None:
        tok = self.peek()
        if tok.kind != "eof":
            raise self.error(tok, f"unexpected trailing content {tok.text!r}")

    def finish(self, form: str, variables: tuple[str, ...], limit: int | None) -> SubsetQuery:
        if not self.patterns:
            raise self.error(self.peek(), "empty graph pattern")
        pattern_vars: set[str] = set()
        for p in self.patterns:
            pattern_vars |= p.variables()
        for v in variables:
            if v not in pattern_vars:
                raise self.error(self.peek(), f"selected variable ?{v} does not appear in any pattern")
        for f in self.filters:
            if f.var.name not in pattern_vars:
                raise self.error(self.peek(), f"filter variable ?{f.var.name} does not appear in any pattern")
        return SubsetQuery(form, variables, tuple(self.patterns), tuple(self.filters), limit)

    def parse_group(self) -> None:
        self.expect_punct("{")
        while True:
            tok = self.peek()
            if tok.kind == "punct" and tok.text == "}":
                self.next()
                return
            if tok.kind == "eof":
                raise self.error(tok, "unterminated group (missing '}')")
            if self.is_keyword(tok, "FILTER"):
                self.parse_filter()
            else:
                self.parse_triple()
            if self.peek().kind == "punct" and self.peek().text == ".":
                self.next()

    def parse_filter(self) -> None:
        self.next()  # FILTER
        self.expect_punct("(")
        tok = self.next()
        if tok.kind != "var":
            raise self.error(tok, "FILTER requires a variable on the left of '='")
        var = Var(tok.text[1:])
        self.expect_punct("=")
        term_tok = self.peek()
        term = self.parse_term(allow_var=False)
        if isinstance(term, Var):  # pragma: no cover - guarded by allow_var
            raise self.error(term_tok, "FILTER right-hand side must be a term")
        self.expect_punct(")")
        self.filters.append(EqualityFilter(var, term))

    def _at_pattern_break(self) -> bool:
        tok = self.peek()
        return tok.kind == "eof" or (tok.kind == "punct" and tok.text in ("}", "."))

    def parse_triple(self) -> None:
        start = self.peek()
        s = self.parse_term()
        if not isinstance(s, (Var, Iri)):
            raise self.error(start, "triple subject must be a variable or IRI")
        if self._at_pattern_break():
            raise self.error(self.peek(), "incomplete triple pattern")
        p = self.parse_term()
        if not isinstance(p, (Var, Iri)):
            raise self.error(start, "triple predicate must be a variable or IRI")
        if self._at_pattern_break():
            raise self.error(self.peek(), "incomplete triple pattern")
        o = self.parse_term()
        self.patterns.append(TriplePattern(s, p, o))

    def parse_term(self, allow_var: bool = True) -> Var | RdfTerm:
        tok = self.next()
        if tok.kind == "var":
            if not allow_var:
                raise self.error(tok, "variable not allowed here")
            return Var(tok.text[1:])
        if tok.kind == "iriref":
            value = tok.text[1:-1]
            if not value:
                raise self.error(tok, "empty IRI reference")
            return Iri(value)
        if tok.kind == "qname":
            expanded = expand_qname(tok.text, self.prefixes)
            if expanded is None:
                raise self.error(tok, f"unknown prefix in {tok.text!r}")
            return Iri(expanded)
        if tok.kind == "string":
            try:
                lexical = unescape_literal(tok.text[1:-1])
            except ValueError as exc:
                raise self.error(tok, str(exc)) from None
            if self.peek().kind == "punct" and self.peek().text == "^^":
                self.next()
                dt_tok = self.next()
                if dt_tok.kind == "iriref":
                    return Literal(lexical, datatype=Iri(dt_tok.text[1:-1]))
                if dt_tok.kind == "qname":
                    expanded = expand_qname(dt_tok.text, self.prefixes)
                    if expanded is None:
                        raise self.error(dt_tok, f"unknown prefix in {dt_tok.text!r}")
                    return Literal(lexical, datatype=Iri(expanded))
                raise self.error(dt_tok, "expected datatype IRI after '^^'")
            return Literal(lexical)
        if tok.kind == "integer":
            return Literal(tok.text, datatype=XSD_INTEGER)
        if tok.kind == "decimal":
            return Literal(tok.text, datatype=XSD_DECIMAL)
        if tok.kind == "name" and tok.text.lower() in ("true", "false"):
            return Literal(tok.text.lower(), datatype=XSD_BOOLEAN)
        raise self.error(tok, f"expected a term, found {tok.text!r}" if tok.text else "unexpected end of query")


def parse_subset(text: str, prefixes: dict[str, str] | None = None) -> SubsetQuery:
    """Parse the subset grammar; raises :class:`SparqlSyntaxError` on anything else.

    ``prefixes`` seeds QName expansion (typically the target store's prefix
    map); query-local PREFIX declarations override it.
    """
    parser = _Parser(_tokenize(text), dict(prefixes or {}))
    return parser.parse_query()


# --- executor ---------------------------------------------------------------

Row = dict[str, RdfTerm]


def _resolve(t: Var | RdfTerm, binding: Row) -> RdfTerm | None:
    if isinstance(t, Var):
        return binding.get(t.name)
    return t


def execute_subset(query: SubsetQuery, store: TripleStore) -> list[Row] | bool:
    """Evaluate the query; SELECT -> ordered projected rows, ASK -> bool."""
    bindings: list[Row] = [{}]
    for pattern in query.patterns:
        extended: list[Row] = []
        for binding in bindings:
            s = _resolve(pattern.subject, binding)
            p = _resolve(pattern.predicate, binding)
            o = _resolve(pattern.object, binding)
            for ts, tp, to in store.candidates(s, p, o):
                new = dict(binding)
                ok = True
                for slot, actual in ((pattern.subject, ts), (pattern.predicate, tp), (pattern.object, to)):
                    if isinstance(slot, Var):
                        bound = new.get(slot.name)
                        if bound is None:
                            new[slot.name] = actual
                        elif bound != actual:
                            ok = False
                            break
                    elif slot != actual:
                        ok = False
                        break
                if ok:
                    extended.append(new)
        bindings = extended
        if not bindings:
            break
    for flt in query.filters:
        bindings = [b for b in bindings if b.get(flt.var.name) == flt.term]
    if query.form == "ask":
        return bool(bindings)
    rows = [{v: b[v] for v in query.variables} for b in bindings]
    rows.sort(key=lambda r: tuple(canonical_key(r[v]) for v in query.variables))
    if query.limit is not None:
        rows = rows[: query.limit]
    return rows


# --- lexical precheck -------------------------------------------------------

_READ_FORMS = ("SELECT", "ASK", "PREFIX", "BASE", "DESCRIBE", "CONSTRUCT")
_OPENERS = {"(": ")", "{": "}", "[": "]"}
_CLOSERS = {v: k for k, v in _OPENERS.items()}


def lexical_precheck(text: str) -> None:
    """Cheap validation before remote dispatch of full-SPARQL queries.

    Checks only: balanced braces/parentheses/brackets and quotes, a leading
    read-form keyword, and a non-empty body. Raises :class:`PrecheckError`.
    """
    stripped = text.strip()
    if not stripped:
        raise PrecheckError("empty-body", "query is empty")
    first = re.match(r"[A-Za-z]+", stripped)
    if first is None or first.group(0).upper() not in _READ_FORMS:
        raise PrecheckError("bad-form", "query must begin with SELECT, ASK, or PREFIX")
    stack: list[str] = []
    quote: str | None = None
    i = 0
    while i < len(text):
        c = text[i]
        if quote is not None:
            if c == "\\":
                i += 2
                continue
            if c == quote:
                quote = None
        elif c in ('"', "'"):
            quote = c
        elif c == "#":
            while i < len(text) and text[i] != "\n":
                i += 1
        elif c in _OPENERS:
            stack.append(c)
        elif c in _CLOSERS:
            if not stack or stack[-1] != _CLOSERS[c]:
                raise PrecheckError("unbalanced", f"unmatched {c!r}")
            stack.pop()
        i += 1
    if quote is not None:
        raise PrecheckError("unbalanced", "unterminated quoted literal")
    if stack:
        raise PrecheckError("unbalanced", f"unclosed {stack[-1]!r}")
    if "{" not in text:
        raise PrecheckError("empty-body", "query has no group pattern")
    if re.search(r"\{\s*\}", _strip_strings(text)):
        raise PrecheckError("empty-body", "empty group pattern")


def _strip_strings(text: str) -> str:
    return re.sub(r'"(?:[^"\\]|\\.)*"|\'(?:[^\'\\]|\\.)*\'', '""', text)
