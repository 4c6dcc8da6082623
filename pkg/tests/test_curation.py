import json

import pytest

from queryloop.curation import (
    CurationVerdict,
    LCQUAD_FIELD_MAP,
    RawRecord,
    REASON_EXEC_FAILED,
    REASON_INVALID_TERM,
    REASON_KEPT,
    REASON_NOT_SINGLE_ROW,
    curate_dataset,
    curate_record,
    is_valid_rdf_term,
    read_curated_records,
    read_raw_records,
)
from queryloop.execution import EmbeddedExecutor
from queryloop.store import TripleStore
from queryloop.terms import BlankNode, Boolean, Iri, Literal

EX = "http://example.org/ns/"


def _fixture_store() -> TripleStore:
    a, b, c, d = (Iri(EX + n) for n in "ABCD")
    p, q, name = Iri(EX + "p"), Iri(EX + "q"), Iri(EX + "name")
    return TripleStore(
        [
            (a, p, b),
            (a, p, c),  # A -p-> {B, C}: two rows
            (b, q, d),  # B -q-> D: one row
            (d, name, Literal("dee")),
            (c, q, BlankNode("anon")),  # C -q-> _:anon: invalid answer term
        ],
        prefix_map={"ex": EX},
    )


FIXTURE_RECORDS = [
    RawRecord("r1", "what does B reach via q?", "SELECT ?x WHERE { ex:B ex:q ?x }", "train"),
    RawRecord("r2", "does A point to B?", "ASK { ex:A ex:p ex:B }", "test"),
    RawRecord("r3", "what does A point to?", "SELECT ?o WHERE { ex:A ex:p ?o }", "train"),
    RawRecord("r4", "which pairs are linked by p?", "SELECT ?s ?o WHERE { ?s ex:p ?o }", "train"),
    RawRecord("r5", "broken gold query", "SELECT broken(", "test"),
    RawRecord("r6", "what does C reach via q?", "SELECT ?x WHERE { ex:C ex:q ?x }", "train"),
]


@pytest.fixture
def executor():
    return EmbeddedExecutor(_fixture_store())


def test_is_valid_rdf_term():
    assert is_valid_rdf_term(Iri("http://www.wikidata.org/entity/Q90"))
    assert is_valid_rdf_term(Literal(""))  # empty literal is a term
    assert is_valid_rdf_term(Boolean(False))
    assert not is_valid_rdf_term(BlankNode("b0"))
    assert not is_valid_rdf_term(Iri(""))
    assert not is_valid_rdf_term(None)


def test_multi_row_is_not_single_row(executor):
    verdict = curate_record(FIXTURE_RECORDS[2], executor)
    assert verdict == CurationVerdict(kept=False, reason=REASON_NOT_SINGLE_ROW, row_count=2)


def test_ask_counts_as_boolean_answer(executor):
    verdict = curate_record(FIXTURE_RECORDS[1], executor)
    assert verdict.kept and verdict.answer == Boolean(True)


def test_failing_query_is_exec_failed(executor):
    verdict = curate_record(FIXTURE_RECORDS[4], executor)
    assert verdict.reason == REASON_EXEC_FAILED and not verdict.transport


def test_blank_node_answer_is_invalid_term(executor):
    verdict = curate_record(FIXTURE_RECORDS[5], executor)
    assert verdict.reason == REASON_INVALID_TERM


def test_verdict_consistency_enforced():
    with pytest.raises(ValueError):
        CurationVerdict(kept=True, reason=REASON_NOT_SINGLE_ROW)
    with pytest.raises(ValueError):
        CurationVerdict(kept=False, reason=REASON_KEPT)


def test_fixture_dataset_summary(executor, tmp_path):
    out = str(tmp_path / "curated.jsonl")
    summary = curate_dataset(FIXTURE_RECORDS, executor, out)
    assert summary.kept == 2
    assert dict(summary.dropped) == {
        REASON_NOT_SINGLE_ROW: 2,
        REASON_EXEC_FAILED: 1,
        REASON_INVALID_TERM: 1,
    }
    assert summary.total == 6
    per_split = summary.to_json()["per_split"]
    assert per_split["train"][REASON_KEPT] == 1 and per_split["test"][REASON_KEPT] == 1
    rows = read_curated_records(out)
    assert [row["id"] for row in rows] == ["r1", "r2"]
    assert rows[0]["answer"] == Iri(EX + "D")


def test_counts_partition_input(executor, tmp_path):
    summary = curate_dataset(FIXTURE_RECORDS, executor, str(tmp_path / "c.jsonl"))
    assert summary.kept + sum(summary.dropped.values()) == summary.total


def test_rerun_is_byte_identical(executor, tmp_path):
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    curate_dataset(FIXTURE_RECORDS, executor, str(first))
    curate_dataset(FIXTURE_RECORDS, executor, str(second))
    assert first.read_bytes() == second.read_bytes()


def test_kept_answers_reexecute_to_same_row(executor, tmp_path):
    out = str(tmp_path / "curated.jsonl")
    curate_dataset(FIXTURE_RECORDS, executor, out)
    for row in read_curated_records(out):
        verdict = curate_record(
            RawRecord(row["id"], row["question"], row["query"], row["split"]), executor
        )
        assert verdict.kept and verdict.answer == row["answer"]


def test_empty_input(executor, tmp_path):
    out = str(tmp_path / "empty.jsonl")
    summary = curate_dataset([], executor, out)
    assert summary.total == 0 and summary.kept == 0
    assert open(out).read() == ""


def test_read_raw_records_field_mapping(tmp_path):
    path = tmp_path / "raw.jsonl"
    path.write_text(
        json.dumps({"uid": 7, "question": "q?", "sparql_wikidata": "ASK { ex:A ex:p ex:B }"}) + "\n"
    )
    records = read_raw_records(str(path), field_map=LCQUAD_FIELD_MAP)
    assert records == [RawRecord("7", "q?", "ASK { ex:A ex:p ex:B }", "train")]


def test_read_raw_records_rejects_duplicates_and_bad_lines(tmp_path):
    path = tmp_path / "raw.jsonl"
    path.write_text('{"id": "a", "question": "q", "query": "ASK { ex:A ex:p ex:B }"}\nnot json\n')
    with pytest.raises(ValueError) as err:
        read_raw_records(str(path))
    assert ":2:" in str(err.value)
    path.write_text(
        '{"id": "a", "question": "q", "query": "x"}\n{"id": "a", "question": "q2", "query": "y"}\n'
    )
    with pytest.raises(ValueError, match="duplicate"):
        read_raw_records(str(path))
