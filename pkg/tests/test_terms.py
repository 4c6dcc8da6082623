import pytest

from queryloop.terms import (
    Boolean,
    BlankNode,
    Iri,
    Literal,
    XSD_INTEGER,
    canonical_key,
    compact_iri,
    expand_qname,
    iri_local_name,
    render_term,
    term_as_float,
    term_from_json,
    term_to_json,
)

PREFIXES = {"wd": "http://www.wikidata.org/entity/"}


def test_literal_lang_and_datatype_are_exclusive():
    with pytest.raises(ValueError):
        Literal("x", datatype=XSD_INTEGER, lang="en")


def test_expand_and_compact_are_inverse():
    assert expand_qname("wd:Q90", PREFIXES) == "http://www.wikidata.org/entity/Q90"
    assert compact_iri("http://www.wikidata.org/entity/Q90", PREFIXES) == "wd:Q90"
    assert expand_qname("unknown:Q90", PREFIXES) is None
    assert compact_iri("http://elsewhere/Q90", PREFIXES) is None


def test_compact_refuses_non_name_locals():
    assert compact_iri("http://www.wikidata.org/entity/a/b", PREFIXES) is None


def test_render_term_shapes():
    assert render_term(Iri("http://www.wikidata.org/entity/Q90"), PREFIXES) == "wd:Q90"
    assert render_term(Iri("http://elsewhere/x")) == "<http://elsewhere/x>"
    assert render_term(Literal("a\tb")) == '"a\\tb"'
    assert render_term(Literal("hi", lang="en")) == '"hi"@en'
    assert render_term(Literal("4", datatype=XSD_INTEGER)) == '"4"^^<http://www.w3.org/2001/XMLSchema#integer>'
    assert render_term(Boolean(True)) == "true"
    assert render_term(BlankNode("b0")) == "_:b0"


def test_canonical_key_ignores_prefixes():
    assert canonical_key(Iri("http://x/A")) == "<http://x/A>"


def test_iri_local_name():
    assert iri_local_name("http://www.wikidata.org/entity/Q90") == "Q90"
    assert iri_local_name("http://x/ns#thing") == "thing"


def test_term_as_float():
    assert term_as_float(Literal("42")) == 42.0
    assert term_as_float(Literal("4.5", datatype=XSD_INTEGER)) == 4.5
    assert term_as_float(Literal("hello")) is None
    assert term_as_float(Iri("http://x/4")) is None


@pytest.mark.parametrize(
    "term",
    [
        Iri("http://x/A"),
        Literal("plain"),
        Literal("typed", datatype=XSD_INTEGER),
        Literal("tagged", lang="fr"),
        Boolean(False),
        BlankNode("node7"),
    ],
)
def test_json_round_trip(term):
    assert term_from_json(term_to_json(term)) == term
