"""Dataset curation: re-execute gold queries and keep single-binding records.

A record survives iff its gold query (i) executes successfully,
(ii) returns exactly one row, and (iii) that row's term is a valid RDF
term (ASK queries count as single-row boolean answers). The rules apply
in that order, so drop-reason statistics are well defined. Blank nodes
and empty IRIs are not valid answer terms — they are not stable
identifiers across endpoints.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .execution import Executor, FAIL_HTTP, FAIL_TRANSPORT, Failure, Success
from .terms import BlankNode, Boolean, Iri, Literal, RdfTerm, term_from_json, term_to_json

REASON_KEPT = "kept"
REASON_EXEC_FAILED = "exec_failed"
REASON_NOT_SINGLE_ROW = "not_single_row"
REASON_INVALID_TERM = "invalid_term"

DROP_REASONS = (REASON_EXEC_FAILED, REASON_NOT_SINGLE_ROW, REASON_INVALID_TERM)

# Maps LC-QuAD 2.0 export field names onto the canonical record fields.
LCQUAD_FIELD_MAP = {"id": "uid", "question": "question", "query": "sparql_wikidata"}


@dataclass(frozen=True)
class RawRecord:
    record_id: str
    question: str
    gold_query: str
    split: str = "train"
    metadata: dict | None = None


@dataclass(frozen=True)
class CurationVerdict:
    kept: bool
    reason: str
    answer: RdfTerm | None = None
    row_count: int | None = None
    transport: bool = False  # transient executor failure; record is rerunnable

    def __post_init__(self) -> None:
        if self.kept != (self.reason == REASON_KEPT) or self.kept != (self.answer is not None):
            raise ValueError("kept <=> reason == kept <=> answer present")


def is_valid_rdf_term(term: RdfTerm | None) -> bool:
    """IRIs (non-empty), literals, and booleans qualify; blank nodes do not."""
    if isinstance(term, Iri):
        return bool(term.value)
    if isinstance(term, (Literal, Boolean)):
        return True
    if isinstance(term, BlankNode):
        return False
    return False


def curate_record(record: RawRecord, executor: Executor) -> CurationVerdict:
    outcome = executor.execute(record.gold_query)
    if isinstance(outcome, Failure):
        transient = outcome.category in (FAIL_TRANSPORT, FAIL_HTTP)
        return CurationVerdict(kept=False, reason=REASON_EXEC_FAILED, transport=transient)
    assert isinstance(outcome, Success)
    if outcome.is_boolean is not None:
        return CurationVerdict(kept=True, reason=REASON_KEPT, answer=Boolean(outcome.is_boolean), row_count=1)
    if len(outcome.rows) != 1:
        return CurationVerdict(kept=False, reason=REASON_NOT_SINGLE_ROW, row_count=len(outcome.rows))
    row = outcome.rows[0]
    variables = outcome.variables or tuple(row.keys())
    answer = row[variables[0]]
    if not is_valid_rdf_term(answer):
        return CurationVerdict(kept=False, reason=REASON_INVALID_TERM, row_count=1)
    return CurationVerdict(kept=True, reason=REASON_KEPT, answer=answer, row_count=1)


@dataclass
class CurationSummary:
    total: int
    kept: int
    dropped: Counter
    per_split: dict[str, Counter]
    transport_failures: list[str]  # record ids worth rerunning

    def to_json(self) -> dict:
        return {
            "schema": "queryloop.curation_summary.v1",
            "total": self.total,
            "kept": self.kept,
            "dropped": {reason: self.dropped.get(reason, 0) for reason in DROP_REASONS},
            "per_split": {
                split: {reason: counts.get(reason, 0) for reason in (REASON_KEPT, *DROP_REASONS)}
                for split, counts in sorted(self.per_split.items())
            },
            "transport_failures": list(self.transport_failures),
        }


def curate_dataset(
    records: list[RawRecord],
    executor: Executor,
    out_path: str,
    max_workers: int = 8,
) -> CurationSummary:
    """Curate in parallel (bounded) and write kept records as JSONL.

    Output order follows input order, so reruns over the same input are
    byte-identical.
    """
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        verdicts = list(pool.map(lambda r: curate_record(r, executor), records))
    dropped: Counter = Counter()
    per_split: dict[str, Counter] = {}
    transport_failures: list[str] = []
    kept = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for record, verdict in zip(records, verdicts):
            split_counts = per_split.setdefault(record.split, Counter())
            split_counts[verdict.reason] += 1
            if verdict.kept:
                kept += 1
                assert verdict.answer is not None
                fh.write(
                    json.dumps(
                        {
                            "id": record.record_id,
                            "question": record.question,
                            "query": record.gold_query,
                            "split": record.split,
                            "answer": term_to_json(verdict.answer),
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
            else:
                dropped[verdict.reason] += 1
                if verdict.transport:
                    transport_failures.append(record.record_id)
    return CurationSummary(
        total=len(records),
        kept=kept,
        dropped=dropped,
        per_split=per_split,
        transport_failures=transport_failures,
    )


def read_raw_records(path: str, field_map: dict[str, str] | None = None) -> list[RawRecord]:
    """Load raw records from JSONL; ``field_map`` renames source fields
    (e.g. LCQUAD_FIELD_MAP) onto {id, question, query, split}."""
    mapping = {"id": "id", "question": "question", "query": "query", "split": "split"}
    if field_map:
        mapping.update(field_map)
    records: list[RawRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(
                    RawRecord(
                        record_id=str(obj[mapping["id"]]),
                        question=obj[mapping["question"]],
                        gold_query=obj[mapping["query"]],
                        split=obj.get(mapping["split"], "train"),
                    )
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record ({exc})") from exc
    seen: set[str] = set()
    for record in records:
        if record.record_id in seen:
            raise ValueError(f"duplicate record id {record.record_id!r}")
        seen.add(record.record_id)
    return records


def read_curated_records(path: str) -> list[dict]:
    """Curated JSONL rows with the answer term decoded."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                obj["answer"] = term_from_json(obj["answer"])
                rows.append(obj)
    return rows
