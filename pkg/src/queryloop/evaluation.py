"""End-to-end metrics, McNemar significance, pass@k, and failure taxonomy.

Metrics operate over immutable per-question run results (one per system
and question). Percentages render to one decimal with round-half-up.
McNemar uses the continuity-corrected statistic

    chi2 = (max(|n01 - n10| - 1, 0))^2 / (n01 + n10)

on the discordant-pair counts of two systems.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

EXECUTION_FAILURE = "execution_failure"
REFUSED_TO_QUERY = "refused_to_query"
INCORRECT_LOGIC = "incorrect_logic"

FAILURE_CLASSES = (EXECUTION_FAILURE, REFUSED_TO_QUERY, INCORRECT_LOGIC)


@dataclass(frozen=True)
class RunResult:
    question_id: str
    system_id: str
    turns: int
    n_queries_issued: int
    n_queries_succeeded: int
    correct: bool
    termination: str = "answered"

    def __post_init__(self) -> None:
        if self.n_queries_succeeded > self.n_queries_issued:
            raise ValueError("succeeded queries cannot exceed issued queries")

    @classmethod
    def from_record(cls, record: dict) -> "RunResult":
        if "stats" in record:  # episode log record
            stats = record["stats"]
            return cls(
                question_id=record.get("prompt_id", ""),
                system_id=record.get("system_id", ""),
                turns=stats["turns"],
                n_queries_issued=stats["n_err"] + stats["n_exec_success"],
                n_queries_succeeded=stats["n_exec_success"],
                correct=bool(record.get("reward", {}).get("r_ans", 0) > 0),
                termination=record["termination"],
            )
        return cls(  # eval result record
            question_id=record["question_id"],
            system_id=record["system_id"],
            turns=record["turns"],
            n_queries_issued=record["n_queries_issued"],
            n_queries_succeeded=record["n_queries_succeeded"],
            correct=bool(record["correct"]),
            termination=record.get("termination", "answered"),
        )


def executability_rate(results: Sequence[RunResult]) -> float | None:
    """Successful executions over queries issued; None when none were issued."""
    issued = sum(r.n_queries_issued for r in results)
    if issued == 0:
        return None
    return sum(r.n_queries_succeeded for r in results) / issued


def accuracy(results: Sequence[RunResult]) -> float:
    if not results:
        return 0.0
    return sum(1 for r in results if r.correct) / len(results)


def avg_turns(results: Sequence[RunResult]) -> float | None:
    if not results:
        return None
    return sum(r.turns for r in results) / len(results)


def pass_at_k(samples: dict[str, Sequence[bool]], k: int = 5) -> float:
    """Fraction of questions with >= 1 correct among exactly k samples each."""
    if not samples:
        return 0.0
    for question_id, flags in samples.items():
        if len(flags) != k:
            raise ValueError(f"question {question_id!r} has {len(flags)} samples, expected {k}")
    return sum(1 for flags in samples.values() if any(flags)) / len(samples)


def mcnemar(n01: int, n10: int) -> float | None:
    """Continuity-corrected McNemar chi-square; None with no discordant pairs."""
    if n01 < 0 or n10 < 0:
        raise ValueError("discordant counts must be >= 0")
    discordant = n01 + n10
    if discordant == 0:
        return None
    return max(abs(n01 - n10) - 1, 0) ** 2 / discordant


def mcnemar_pvalue(chi_square: float) -> float:
    """Upper-tail p for a chi-square with one degree of freedom."""
    return math.erfc(math.sqrt(chi_square / 2.0))


def discordant_counts(
    results_a: Sequence[RunResult], results_b: Sequence[RunResult]
) -> tuple[int, int]:
    """(a-only-correct, b-only-correct) over questions present in both runs."""
    correct_a = {r.question_id: r.correct for r in results_a}
    n_a_only = 0
    n_b_only = 0
    for r in results_b:
        if r.question_id not in correct_a:
            continue
        a = correct_a[r.question_id]
        if a and not r.correct:
            n_a_only += 1
        elif r.correct and not a:
            n_b_only += 1
    return n_a_only, n_b_only


def classify_failure(result: RunResult) -> str:
    """Failure class of an incorrect run (precedence documented below).

    refused_to_query: the system never issued a query — it answered from
    nothing or went malformed before the first query. execution_failure:
    every issued query failed. incorrect_logic: everything else (queries
    ran, the reasoning was wrong).
    """
    if result.correct:
        raise ValueError("only incorrect results are classified")
    if result.n_queries_issued == 0:
        return REFUSED_TO_QUERY
    if result.n_queries_succeeded == 0:
        return EXECUTION_FAILURE
    return INCORRECT_LOGIC


def failure_breakdown(results: Sequence[RunResult]) -> Counter:
    counts: Counter = Counter()
    for result in results:
        if not result.correct:
            counts[classify_failure(result)] += 1
    return counts


def format_percent(fraction: float | None) -> str:
    """One-decimal percent with round-half-up; em-dash-free undefined marker."""
    if fraction is None:
        return "-"
    value = Decimal(str(fraction * 100)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return f"{value}"


def metrics_report(results_by_system: dict[str, Sequence[RunResult]]) -> list[dict]:
    """One metrics row per system (JSON-ready)."""
    rows = []
    for system_id, results in results_by_system.items():
        failures = failure_breakdown(results)
        rows.append(
            {
                "schema": "queryloop.metrics.v1",
                "system_id": system_id,
                "n": len(results),
                "accuracy": accuracy(results),
                "executability_rate": executability_rate(results),
                "avg_turns": avg_turns(results),
                "failures": {cls: failures.get(cls, 0) for cls in FAILURE_CLASSES},
            }
        )
    return rows


def render_metrics_table(rows: list[dict]) -> str:
    header = f"{'system':<14}{'n':>6}{'exec%':>8}{'acc%':>8}{'turns':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        turns = row["avg_turns"]
        lines.append(
            f"{row['system_id']:<14}{row['n']:>6}"
            f"{format_percent(row['executability_rate']):>8}"
            f"{format_percent(row['accuracy']):>8}"
            f"{'-' if turns is None else f'{turns:.2f}':>8}"
        )
    return "\n".join(lines)


def write_report(rows: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_results(path: str) -> list[RunResult]:
    results = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                results.append(RunResult.from_record(json.loads(line)))
    return results
