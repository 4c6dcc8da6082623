import random

import pytest

from queryloop.store import TripleStore, load_ntriples
from queryloop.subset import (
    EqualityFilter,
    PrecheckError,
    SparqlSyntaxError,
    SubsetQuery,
    TriplePattern,
    Var,
    execute_subset,
    lexical_precheck,
    parse_subset,
)
from queryloop.terms import DEFAULT_PREFIXES, Iri, Literal, XSD_BOOLEAN, XSD_INTEGER

from oracles import brute_force_execute, random_store_and_query

WD = DEFAULT_PREFIXES["wd"]
WDT = DEFAULT_PREFIXES["wdt"]


def test_parse_minimal_select():
    query = parse_subset("SELECT ?d WHERE { wd:Q25188 wdt:P57 ?d }", DEFAULT_PREFIXES)
    assert query.form == "select"
    assert query.variables == ("d",)
    assert query.patterns == (
        TriplePattern(Iri(WD + "Q25188"), Iri(WDT + "P57"), Var("d")),
    )


def test_parse_ask():
    query = parse_subset("ASK { wd:Q1 wdt:P31 wd:Q2 }", DEFAULT_PREFIXES)
    assert query.form == "ask"
    assert query.variables == ()


def test_parse_incomplete_pattern_is_positioned_error():
    with pytest.raises(SparqlSyntaxError) as err:
        parse_subset("SELECT ?d WHERE { ?d }", DEFAULT_PREFIXES)
    assert err.value.line == 1
    assert err.value.column > 0


def test_parse_prefix_declarations_override_store_map():
    text = 'PREFIX wd: <http://elsewhere/> SELECT ?x WHERE { wd:A wd:p ?x }'
    query = parse_subset(text, DEFAULT_PREFIXES)
    assert query.patterns[0].subject == Iri("http://elsewhere/A")


def test_parse_unknown_prefix_rejected():
    with pytest.raises(SparqlSyntaxError):
        parse_subset("SELECT ?x WHERE { nope:A wdt:P1 ?x }", DEFAULT_PREFIXES)


def test_parse_rejects_unselected_filter_variable():
    with pytest.raises(SparqlSyntaxError):
        parse_subset("SELECT ?x WHERE { ?x wdt:P1 ?y . FILTER(?z = wd:Q1) }", DEFAULT_PREFIXES)


def test_parse_rejects_selected_variable_missing_from_patterns():
    with pytest.raises(SparqlSyntaxError):
        parse_subset("SELECT ?q WHERE { ?x wdt:P1 ?y }", DEFAULT_PREFIXES)


def test_parse_filter_literal_and_limit():
    query = parse_subset(
        'SELECT ?x WHERE { ?x wdt:P1 ?y . FILTER(?y = "five") } LIMIT 2', DEFAULT_PREFIXES
    )
    assert query.filters == (EqualityFilter(Var("y"), Literal("five")),)
    assert query.limit == 2


def test_parse_numeric_and_boolean_terms():
    query = parse_subset("SELECT ?x WHERE { ?x wdt:P1 7 . ?x wdt:P2 true }", DEFAULT_PREFIXES)
    assert query.patterns[0].object == Literal("7", datatype=XSD_INTEGER)
    assert query.patterns[1].object == Literal("true", datatype=XSD_BOOLEAN)


def test_execute_empty_store_matches_nothing():
    store = TripleStore([], prefix_map={"x": "http://x/"})
    query = parse_subset("SELECT ?o WHERE { x:A x:p ?o }", store.prefix_map)
    assert execute_subset(query, store) == []


def test_execute_sorted_rows_and_limit(small_store):
    query = parse_subset("SELECT ?o WHERE { ex:A ex:p ?o }", small_store.prefix_map)
    rows = execute_subset(query, small_store)
    assert [r["o"].value for r in rows] == ["http://example.org/ns/B", "http://example.org/ns/C"]
    limited = parse_subset("SELECT ?o WHERE { ex:A ex:p ?o } LIMIT 1", small_store.prefix_map)
    assert execute_subset(limited, small_store) == rows[:1]


def test_execute_join_two_patterns(small_store):
    query = parse_subset("SELECT ?x WHERE { ex:A ex:p ?m . ?m ex:q ?x }", small_store.prefix_map)
    rows = execute_subset(query, small_store)
    # both intermediates reach D, so two duplicate rows survive (no DISTINCT)
    assert [r["x"].value for r in rows] == ["http://example.org/ns/D"] * 2


def test_execute_repeated_variable_in_one_pattern():
    a, p = Iri("http://x/A"), Iri("http://x/p")
    store = TripleStore([(a, p, a), (a, p, Iri("http://x/B"))], prefix_map={"x": "http://x/"})
    query = SubsetQuery("select", ("v",), (TriplePattern(Var("v"), p, Var("v")),))
    rows = execute_subset(query, store)
    assert rows == [{"v": a}]


def test_execute_is_deterministic(small_store):
    query = parse_subset("SELECT ?s ?o WHERE { ?s ex:p ?o }", small_store.prefix_map)
    first = execute_subset(query, small_store)
    for _ in range(3):
        assert execute_subset(query, small_store) == first


def test_oracle_equivalence_sample():
    rng = random.Random(20240811)
    for _ in range(150):
        store, query = random_store_and_query(rng)
        assert execute_subset(query, store) == brute_force_execute(query, store)


@pytest.mark.parametrize(
    "text",
    [
        "SELECT ?x WHERE { ?x ?p ?o }",
        "PREFIX wd: <http://www.wikidata.org/entity/>\nSELECT ?x WHERE { ?x ?p wd:Q1 }",
        "ASK { <http://x/a> <http://x/b> 'lit' }",
    ],
)
def test_precheck_accepts_read_queries(text):
    lexical_precheck(text)


def test_precheck_unbalanced():
    with pytest.raises(PrecheckError) as err:
        lexical_precheck("SELECT ?x WHERE { ?x ?p ?o")
    assert err.value.category == "unbalanced"


def test_precheck_bad_form():
    with pytest.raises(PrecheckError) as err:
        lexical_precheck("DROP GRAPH <g>")
    assert err.value.category == "bad-form"


def test_precheck_empty_body():
    with pytest.raises(PrecheckError) as err:
        lexical_precheck("SELECT ?x WHERE { }")
    assert err.value.category == "empty-body"
    with pytest.raises(PrecheckError) as err:
        lexical_precheck("   ")
    assert err.value.category == "empty-body"


def test_precheck_quotes_hide_braces():
    lexical_precheck('SELECT ?x WHERE { ?x ?p "}{" }')
    with pytest.raises(PrecheckError):
        lexical_precheck('SELECT ?x WHERE { ?x ?p "unterminated }')
