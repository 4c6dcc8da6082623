"""In-memory triple store with an N-Triples-subset loader.

Stores are immutable after construction; pattern matching goes through
:meth:`TripleStore.candidates`, which picks the most selective index for
the bound positions of a pattern.

Load format (one statement per line, ``.``-terminated):

    <subject-iri> <predicate-iri> <object-iri> .
    <subject-iri> <predicate-iri> "literal" .
    <subject-iri> <predicate-iri> "literal"@lang .
    <subject-iri> <predicate-iri> "literal"^^<datatype-iri> .

Blank lines and ``#`` comment lines are skipped. Literal escapes are the
usual ``\\\\ \\" \\n \\r \\t``.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator

from .terms import DEFAULT_PREFIXES, Iri, Literal, RdfTerm, unescape_literal

Triple = tuple[RdfTerm, Iri, RdfTerm]


class FormatError(ValueError):
    """Raised by :func:`load_ntriples` with the offending 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TripleStore:
    def __init__(self, triples: Iterable[Triple], prefix_map: dict[str, str] | None = None):
        seen: set[Triple] = set()
        ordered: list[Triple] = []
        for s, p, o in triples:
            if not isinstance(s, Iri):
                raise ValueError(f"triple subject must be an IRI, got {s!r}")
            if not isinstance(p, Iri):
                raise ValueError(f"triple predicate must be an IRI, got {p!r}")
            t = (s, p, o)
            if t not in seen:
                seen.add(t)
                ordered.append(t)
        self._triples: tuple[Triple, ...] = tuple(ordered)
        self.prefix_map: dict[str, str] = dict(DEFAULT_PREFIXES if prefix_map is None else prefix_map)
        self._by_s: dict[RdfTerm, list[Triple]] = {}
        self._by_p: dict[RdfTerm, list[Triple]] = {}
        self._by_o: dict[RdfTerm, list[Triple]] = {}
        self._by_sp: dict[tuple[RdfTerm, RdfTerm], list[Triple]] = {}
        for t in self._triples:
            s, p, o = t
            self._by_s.setdefault(s, []).append(t)
            self._by_p.setdefault(p, []).append(t)
            self._by_o.setdefault(o, []).append(t)
            self._by_sp.setdefault((s, p), []).append(t)

    @property
    def triples(self) -> tuple[Triple, ...]:
        return self._triples

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, triple: Triple) -> bool:
        s, p, _ = triple
        return triple in self._by_sp.get((s, p), ())

    def candidates(self, s: RdfTerm | None, p: RdfTerm | None, o: RdfTerm | None) -> Iterator[Triple]:
        """Triples matching the bound (non-None) positions."""
        if s is not None and p is not None:
            pool = self._by_sp.get((s, p), ())
        elif s is not None:
            pool = self._by_s.get(s, ())
        elif o is not None:
            pool = self._by_o.get(o, ())
        elif p is not None:
            pool = self._by_p.get(p, ())
        else:
            pool = self._triples
        for t in pool:
            if p is not None and t[1] != p:
                continue
            if o is not None and t[2] != o:
                continue
            yield t


def _parse_iri_ref(line: str, pos: int, lineno: int) -> tuple[Iri, int]:
    if pos >= len(line) or line[pos] != "<":
        raise FormatError(lineno, f"expected '<' at column {pos + 1}")
    end = line.find(">", pos + 1)
    if end < 0:
        raise FormatError(lineno, "unterminated IRI reference")
    value = line[pos + 1:end]
    if not value:
        raise FormatError(lineno, "empty IRI reference")
    return Iri(value), end + 1


def _parse_object(line: str, pos: int, lineno: int) -> tuple[RdfTerm, int]:
    if pos < len(line) and line[pos] == "<":
        return _parse_iri_ref(line, pos, lineno)
    if pos >= len(line) or line[pos] != '"':
        raise FormatError(lineno, f"expected IRI or literal at column {pos + 1}")
    i = pos + 1
    while i < len(line):
        if line[i] == "\\":
            i += 2
            continue
        if line[i] == '"':
            break
        i += 1
    if i >= len(line):
        raise FormatError(lineno, "unterminated literal")
    try:
        lexical = unescape_literal(line[pos + 1:i])
    except ValueError as exc:
        raise FormatError(lineno, str(exc)) from None
    i += 1
    if line.startswith("@", i):
        j = i + 1
        while j < len(line) and (line[j].isalnum() or line[j] == "-"):
            j += 1
        if j == i + 1:
            raise FormatError(lineno, "empty language tag")
        return Literal(lexical, lang=line[i + 1:j]), j
    if line.startswith("^^", i):
        datatype, j = _parse_iri_ref(line, i + 2, lineno)
        return Literal(lexical, datatype=datatype), j
    return Literal(lexical), i


def _skip_ws(line: str, pos: int) -> int:
    while pos < len(line) and line[pos] in " \t":
        pos += 1
    return pos


def load_ntriples(text: str, prefix_map: dict[str, str] | None = None) -> TripleStore:
    """Parse N-Triples-subset text into a (de-duplicated) TripleStore."""
    triples: list[Triple] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        pos = 0
        s, pos = _parse_iri_ref(line, pos, lineno)
        pos = _skip_ws(line, pos)
        p, pos = _parse_iri_ref(line, pos, lineno)
        pos = _skip_ws(line, pos)
        o, pos = _parse_object(line, pos, lineno)
        pos = _skip_ws(line, pos)
        if pos >= len(line) or line[pos] != ".":
            raise FormatError(lineno, "statement must end with '.'")
        if line[pos + 1:].strip():
            raise FormatError(lineno, "trailing content after '.'")
        triples.append((s, p, o))
    return TripleStore(triples, prefix_map=prefix_map)


def load_ntriples_file(path: str, prefix_map: dict[str, str] | None = None) -> TripleStore:
    with open(path, encoding="utf-8") as fh:
        return load_ntriples(fh.read(), prefix_map=prefix_map)
