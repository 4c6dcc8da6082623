"""RDF term model and text renderings shared across the package.

Terms are plain frozen dataclasses. Structural validity (non-empty IRIs,
no blank nodes in answers, ...) is checked where it matters — in parsers,
loaders, and :func:`queryloop.curation.is_valid_rdf_term` — not in the
constructors, so that invalid terms coming back from remote endpoints
remain representable and can be rejected explicitly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union


@dataclass(frozen=True)
class Iri:
    value: str


@dataclass(frozen=True)
class Literal:
    lexical: str
    datatype: Iri | None = None
    lang: str | None = None

    def __post_init__(self) -> None:
        if self.datatype is not None and self.lang is not None:
            raise ValueError("literal cannot carry both a datatype and a language tag")


@dataclass(frozen=True)
class Boolean:
    """An ASK result. Boolean-valued data lives in xsd:boolean literals."""

    value: bool


@dataclass(frozen=True)
class BlankNode:
    label: str


RdfTerm = Union[Iri, Literal, Boolean, BlankNode]

XSD = "http://www.w3.org/2001/XMLSchema#"
XSD_INTEGER = Iri(XSD + "integer")
XSD_DECIMAL = Iri(XSD + "decimal")
XSD_DOUBLE = Iri(XSD + "double")
XSD_BOOLEAN = Iri(XSD + "boolean")
XSD_STRING = Iri(XSD + "string")

NUMERIC_DATATYPES = frozenset({XSD_INTEGER, XSD_DECIMAL, XSD_DOUBLE})

DEFAULT_PREFIXES: dict[str, str] = {
    "rdf": "http://www.w3.org/1999/02/22-rdf-syntax-ns#",
    "rdfs": "http://www.w3.org/2000/01/rdf-schema#",
    "xsd": XSD,
    "wd": "http://www.wikidata.org/entity/",
    "wdt": "http://www.wikidata.org/prop/direct/",
}

_LOCAL_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*\Z")

_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}
_UNESCAPES = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}


def escape_literal(text: str) -> str:
    return "".join(_ESCAPES.get(c, c) for c in text)


def unescape_literal(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\":
            if i + 1 >= len(text) or text[i + 1] not in _UNESCAPES:
                raise ValueError(f"bad escape sequence at offset {i}")
            out.append(_UNESCAPES[text[i + 1]])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def expand_qname(qname: str, prefixes: dict[str, str]) -> str | None:
    """Expand ``prefix:local`` against a prefix map; None if the prefix is unknown."""
    prefix, sep, local = qname.partition(":")
    if not sep or prefix not in prefixes:
        return None
    return prefixes[prefix] + local


def compact_iri(iri: str, prefixes: dict[str, str] | None) -> str | None:
    """Return a QName for ``iri`` if some prefix base matches and leaves a plain local name."""
    if not prefixes:
        return None
    best: str | None = None
    best_base = ""
    for name, base in prefixes.items():
        if base and iri.startswith(base) and len(base) > len(best_base):
            local = iri[len(base):]
            if _LOCAL_NAME_RE.match(local):
                best = f"{name}:{local}"
                best_base = base
    return best


def render_term(term: RdfTerm, prefixes: dict[str, str] | None = None) -> str:
    """Human/agent-facing rendering: QNames where possible, quoted literals."""
    if isinstance(term, Iri):
        compact = compact_iri(term.value, prefixes)
        return compact if compact is not None else f"<{term.value}>"
    if isinstance(term, Literal):
        base = f'"{escape_literal(term.lexical)}"'
        if term.lang is not None:
            return f"{base}@{term.lang}"
        if term.datatype is not None:
            return f"{base}^^{render_term(term.datatype, prefixes)}"
        return base
    if isinstance(term, Boolean):
        return "true" if term.value else "false"
    if isinstance(term, BlankNode):
        return f"_:{term.label}"
    raise TypeError(f"not an RDF term: {term!r}")


def canonical_key(term: RdfTerm) -> str:
    """Stable full-form rendering used as the deterministic sort key for result rows."""
    return render_term(term, prefixes=None)


def iri_local_name(iri: str) -> str:
    """Last path segment of an IRI (after the final '#' or '/')."""
    for sep in ("#", "/"):
        if sep in iri:
            return iri.rsplit(sep, 1)[1]
    return iri.rsplit(":", 1)[-1]


def term_as_float(term: RdfTerm) -> float | None:
    """Numeric value of a literal term, or None when it is not numeric."""
    if isinstance(term, Literal):
        if term.datatype is not None and term.datatype not in NUMERIC_DATATYPES:
            return None
        try:
            return float(term.lexical)
        except ValueError:
            return None
    return None


def term_to_json(term: RdfTerm) -> dict:
    if isinstance(term, Iri):
        return {"type": "iri", "value": term.value}
    if isinstance(term, Literal):
        out: dict = {"type": "literal", "value": term.lexical}
        if term.datatype is not None:
            out["datatype"] = term.datatype.value
        if term.lang is not None:
            out["lang"] = term.lang
        return out
    if isinstance(term, Boolean):
        return {"type": "boolean", "value": term.value}
    if isinstance(term, BlankNode):
        return {"type": "bnode", "value": term.label}
    raise TypeError(f"not an RDF term: {term!r}")


def term_from_json(obj: dict) -> RdfTerm:
    kind = obj.get("type")
    if kind == "iri":
        return Iri(obj["value"])
    if kind == "literal":
        datatype = Iri(obj["datatype"]) if "datatype" in obj else None
        return Literal(obj["value"], datatype=datatype, lang=obj.get("lang"))
    if kind == "boolean":
        return Boolean(bool(obj["value"]))
    if kind == "bnode":
        return BlankNode(obj["value"])
    raise ValueError(f"unknown term encoding: {obj!r}")
