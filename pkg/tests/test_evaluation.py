import pytest

from queryloop.evaluation import (
    EXECUTION_FAILURE,
    INCORRECT_LOGIC,
    REFUSED_TO_QUERY,
    RunResult,
    accuracy,
    avg_turns,
    classify_failure,
    discordant_counts,
    executability_rate,
    failure_breakdown,
    format_percent,
    mcnemar,
    mcnemar_pvalue,
    metrics_report,
    pass_at_k,
    render_metrics_table,
)


def _result(qid="q", correct=True, issued=1, succeeded=1, turns=1, system="S", termination="answered"):
    return RunResult(
        question_id=qid,
        system_id=system,
        turns=turns,
        n_queries_issued=issued,
        n_queries_succeeded=succeeded,
        correct=correct,
        termination=termination,
    )


# --- basic metrics ------------------------------------------------------------


def test_executability_rate_simple():
    results = [_result(issued=10, succeeded=8)]
    assert executability_rate(results) == pytest.approx(0.8)


def test_executability_rate_undefined_without_queries():
    assert executability_rate([_result(issued=0, succeeded=0)]) is None
    assert format_percent(None) == "-"


def test_executability_rate_reproduces_reported_aggregate():
    # counts constructed to the reported 81.0%: 810 successes over 1000 issued
    results = [_result(qid=f"q{i}", issued=1, succeeded=1) for i in range(810)]
    results += [_result(qid=f"r{i}", issued=1, succeeded=0, correct=False) for i in range(190)]
    rate = executability_rate(results)
    assert rate == pytest.approx(0.810, abs=0.0005)
    assert format_percent(rate) == "81.0"


def test_accuracy_endpoints():
    assert accuracy([_result(correct=True)] * 5) == 1.0
    assert accuracy([_result(correct=False)] * 5) == 0.0


def test_accuracy_rounding_matches_reported_value():
    # 636 of 1279 correct -> 49.726...% -> one-decimal round-half-up 49.7
    results = [_result(qid=f"q{i}", correct=i < 636) for i in range(1279)]
    assert format_percent(accuracy(results)) == "49.7"


def test_avg_turns():
    assert avg_turns([_result(turns=1), _result(turns=3)]) == 2.0
    assert avg_turns([]) is None


# --- pass@k ---------------------------------------------------------------------


def test_pass_at_k_all_wrong_and_one_hit():
    assert pass_at_k({"q1": [False] * 5, "q2": [False] * 5}, k=5) == 0.0
    assert pass_at_k({"q1": [False, False, True, False, False], "q2": [True] * 5}, k=5) == 1.0


def test_pass_at_k_requires_exact_sample_counts():
    with pytest.raises(ValueError):
        pass_at_k({"q1": [True, False]}, k=5)


def test_pass_at_k_dominates_single_sample_accuracy():
    flags = {"q1": [True, False, False, False, False], "q2": [False] * 5, "q3": [True] * 5}
    single = sum(1 for f in flags.values() if f[0]) / len(flags)
    assert pass_at_k(flags, 5) >= single


# --- McNemar ---------------------------------------------------------------------


def test_mcnemar_reproduces_reported_statistic():
    assert mcnemar(354, 130) == pytest.approx(102.75, abs=0.01)
    assert mcnemar_pvalue(mcnemar(354, 130)) < 1e-3


def test_mcnemar_clamps_at_zero():
    assert mcnemar(10, 10) == 0.0


def test_mcnemar_hand_case():
    assert mcnemar(5, 0) == pytest.approx((5 - 1) ** 2 / 5)  # 3.2


def test_mcnemar_symmetry():
    assert mcnemar(354, 130) == mcnemar(130, 354)
    assert mcnemar(5, 0) == mcnemar(0, 5)


def test_mcnemar_undefined_without_discordant_pairs():
    assert mcnemar(0, 0) is None


def test_discordant_counts_pairs_by_question():
    a = [_result(qid="q1", correct=True), _result(qid="q2", correct=False), _result(qid="q3", correct=True)]
    b = [_result(qid="q1", correct=False), _result(qid="q2", correct=True), _result(qid="q3", correct=True)]
    assert discordant_counts(a, b) == (1, 1)


# --- failure taxonomy ---------------------------------------------------------------


def test_classify_refused_to_query():
    result = _result(correct=False, issued=0, succeeded=0)
    assert classify_failure(result) == REFUSED_TO_QUERY
    malformed = _result(correct=False, issued=0, succeeded=0, termination="malformed")
    assert classify_failure(malformed) == REFUSED_TO_QUERY


def test_classify_execution_failure():
    assert classify_failure(_result(correct=False, issued=3, succeeded=0)) == EXECUTION_FAILURE


def test_classify_incorrect_logic():
    assert classify_failure(_result(correct=False, issued=3, succeeded=2)) == INCORRECT_LOGIC


def test_classify_rejects_correct_results():
    with pytest.raises(ValueError):
        classify_failure(_result(correct=True))


def test_failure_classes_partition_incorrect_results():
    results = [
        _result(qid=f"q{i}", correct=False, issued=i % 4, succeeded=(i % 4) // 2)
        for i in range(40)
    ]
    breakdown = failure_breakdown(results)
    assert sum(breakdown.values()) == len(results)


# --- report ---------------------------------------------------------------------------


def test_metrics_report_and_table():
    results_by_system = {
        "B1": [_result(system="B1", issued=0, succeeded=0, correct=False)],
        "agent": [_result(system="agent", issued=2, succeeded=2, turns=3)],
    }
    rows = metrics_report(results_by_system)
    table = render_metrics_table(rows)
    b1_line = next(line for line in table.splitlines() if line.startswith("B1"))
    assert " - " in b1_line or b1_line.rstrip().split()[-3] == "-"  # undefined exec rate marker
    agent_row = next(r for r in rows if r["system_id"] == "agent")
    assert agent_row["failures"] == {EXECUTION_FAILURE: 0, REFUSED_TO_QUERY: 0, INCORRECT_LOGIC: 0}


def test_run_result_validates_counts():
    with pytest.raises(ValueError):
        RunResult("q", "s", 1, 1, 2, True)
