import pytest

from queryloop.environment import EpisodeStats
from queryloop.generation import GenerationEndpoint
from queryloop.protocol import (
    AgentTurn,
    Answer,
    Step,
    TERM_ANSWERED,
    TERM_TURN_LIMIT,
    Termination,
    Trajectory,
)
from queryloop.reward import (
    Judgment,
    RewardConfig,
    judge_local,
    judge_remote,
    score,
)
from queryloop.terms import Boolean, Iri, Literal, XSD_INTEGER

CFG = RewardConfig()


def _valid_traj():
    turn = AgentTurn(think="t", action=Answer("Q90"))
    return Trajectory(
        question="q",
        steps=(Step(turn=turn, raw=turn.render()),),
        termination=Termination(TERM_ANSWERED),
        final_answer="Q90",
    )


def _invalid_traj():
    return Trajectory(question="q", termination=Termination(TERM_TURN_LIMIT))


def _stats(turns, n_err):
    return EpisodeStats(turns=turns, n_err=n_err, n_exec_success=0, terminated="answered")


def test_invalid_trajectory_scores_flat_penalty():
    breakdown = score(_invalid_traj(), _stats(10, 3), None, CFG)
    assert breakdown.total == -1.0
    assert not breakdown.structural_valid


def test_correct_answer_one_turn():
    judgment = Judgment(True, "", "test")
    breakdown = score(_valid_traj(), _stats(1, 0), judgment, CFG)
    assert breakdown.total == pytest.approx(1.48, abs=1e-12)
    assert breakdown.r_ans == 0.5 and breakdown.cost == pytest.approx(0.02)


def test_wrong_answer_with_errors():
    judgment = Judgment(False, "", "test")
    breakdown = score(_valid_traj(), _stats(5, 2), judgment, CFG)
    assert breakdown.total == pytest.approx(0.50, abs=1e-12)


def test_judgment_contract_enforced_both_ways():
    with pytest.raises(ValueError):
        score(_valid_traj(), _stats(1, 0), None, CFG)
    with pytest.raises(ValueError):
        score(_invalid_traj(), _stats(1, 0), Judgment(True, "", "test"), CFG)


def test_total_monotone_in_errors_and_turns():
    judgment = Judgment(True, "", "test")
    base = score(_valid_traj(), _stats(1, 0), judgment, CFG).total
    assert score(_valid_traj(), _stats(1, 1), judgment, CFG).total == pytest.approx(base - 0.1)
    assert score(_valid_traj(), _stats(2, 0), judgment, CFG).total == pytest.approx(base - 0.02)


def test_reward_range_with_defaults():
    judgment_good = Judgment(True, "", "test")
    judgment_bad = Judgment(False, "", "test")
    best = score(_valid_traj(), _stats(1, 0), judgment_good, CFG).total
    worst = score(_valid_traj(), _stats(10, 10), judgment_bad, CFG).total
    assert best == pytest.approx(1.48)
    assert worst == pytest.approx(-0.4)


# --- judge_local ---------------------------------------------------------------


def test_judge_local_iri_prefix_and_case():
    gold = Iri("http://www.wikidata.org/entity/Q90")
    assert judge_local("q90", gold).correct
    assert judge_local("wd:Q90", gold).correct
    assert judge_local("<http://www.wikidata.org/entity/Q90>", gold).correct
    assert not judge_local("Q91", gold).correct


def test_judge_local_numeric_tolerance():
    gold = Literal("42", datatype=XSD_INTEGER)
    assert judge_local("42.0", gold).correct
    assert judge_local("42.0000001", gold).correct
    assert judge_local("42 km", gold).correct  # unit-free parse
    assert not judge_local("43", gold).correct


def test_judge_local_alias_lookup():
    gold = Iri("http://www.wikidata.org/entity/Q90")
    assert judge_local("Paris", gold, aliases=("Paris",)).correct
    assert not judge_local("Paris", gold).correct


def test_judge_local_boolean_classes():
    assert judge_local("yes", Boolean(True)).correct
    assert judge_local("TRUE", Boolean(True)).correct
    assert judge_local("1", Boolean(True)).correct
    assert judge_local("no", Boolean(True)).correct is False
    assert judge_local("0", Boolean(False)).correct


def test_judge_local_literal_and_quotes():
    gold = Literal("Inception")
    assert judge_local('  "inception" ', gold).correct
    assert not judge_local("Interstellar", gold).correct


def test_judge_local_whitespace_and_case_symmetry():
    gold = Iri("http://www.wikidata.org/entity/Q90")
    for variant in ("q90", " Q90 ", "Q90\n", "q 90".replace(" ", "")):
        assert judge_local(variant, gold).correct == judge_local("Q90", gold).correct


# --- judge_remote -----------------------------------------------------------------


def test_judge_remote_parses_verdict(generation_server):
    server = generation_server(["VERDICT: yes — same entity"])
    judgment = judge_remote("q", Iri("http://x/Q90"), "Q90", GenerationEndpoint(url=server.url))
    assert judgment.correct
    body = server.requests[0]
    assert "Q90" in body["messages"][0]["content"]


def test_judge_remote_no_verdict_marker_flags_unparseable(generation_server):
    server = generation_server(["I think this might be right?"])
    judgment = judge_remote("q", Iri("http://x/Q90"), "Q90", GenerationEndpoint(url=server.url))
    assert not judgment.correct
    assert "unparseable" in judgment.justification


def test_judge_remote_unreachable_after_retries():
    endpoint = GenerationEndpoint(url="http://127.0.0.1:1/generate", max_retries=1, backoff_base=0.01)
    judgment = judge_remote("q", Iri("http://x/Q90"), "Q90", endpoint)
    assert not judgment.correct
    assert "unparseable" in judgment.justification
