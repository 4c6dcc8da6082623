import pytest

from queryloop.environment import EpisodeConfig, run_episode
from queryloop.execution import EmbeddedExecutor
from queryloop.generation import DecodingParams, GenerationEndpoint
from queryloop.policies import (
    BaselineConfig,
    BaselineQuestion,
    RemotePolicy,
    ScriptExhausted,
    ScriptedPolicy,
    run_baseline,
)
from queryloop.terms import Iri

EX = "http://example.org/ns/"

QUERY = "<think>look</think><query>SELECT ?o WHERE { ex:A ex:p ?o }</query>"
ANSWER = "<think>done</think><answer>ex:B</answer>"


@pytest.fixture
def episode_cfg(small_store):
    return EpisodeConfig(executor=EmbeddedExecutor(small_store), t_max=10)


def test_scripted_policy_one_answer(episode_cfg):
    traj, stats = run_episode(ScriptedPolicy([ANSWER]), "q", episode_cfg)
    assert stats.terminated == "answered" and stats.turns == 1


def test_scripted_policy_query_then_answer(episode_cfg):
    traj, stats = run_episode(ScriptedPolicy([QUERY, ANSWER]), "q", episode_cfg)
    assert stats.turns == 2


def test_scripted_policy_malformed_item(episode_cfg):
    traj, stats = run_episode(ScriptedPolicy(["chatter without tags"]), "q", episode_cfg)
    assert stats.terminated == "malformed"


def test_scripted_policy_exhaustion_is_an_error(episode_cfg):
    with pytest.raises(ScriptExhausted):
        run_episode(ScriptedPolicy([QUERY]), "q", episode_cfg)


def test_remote_policy_round_trip(generation_server, episode_cfg):
    server = generation_server([QUERY + "\nleftover that stop strips", ANSWER])
    policy = RemotePolicy(
        GenerationEndpoint(url=server.url),
        system_prompt="be brief",
        few_shots=((f"Q: example", "<think>t</think><answer>x</answer>"),),
        params=DecodingParams(temperature=0.2, top_p=0.95, max_new_tokens=128),
    )
    traj, stats = run_episode(policy, "what does A point to?", episode_cfg)
    assert stats.terminated == "answered"
    body = server.requests[0]
    assert body["temperature"] == 0.2 and body["top_p"] == 0.95  # params forwarded verbatim
    assert body["stop"] == ["</query>", "</answer>"]
    assert body["messages"][0] == {"role": "system", "content": "be brief"}
    assert body["messages"][1]["content"] == "Q: example"
    assert body["messages"][-1]["role"] == "user"
    assert "what does A point to?" in body["messages"][-1]["content"]


def _questions():
    return [
        BaselineQuestion("q1", "what does A point to?", Iri(EX + "B")),
        BaselineQuestion("q2", "what is D called?", Iri(EX + "D"), aliases=("dee",)),
    ]


def test_b1_never_issues_queries(generation_server, small_store):
    server = generation_server(["Reasoning: B is linked.\nex:B", "Reasoning: it is dee.\ndee"])
    cfg = BaselineConfig(generation=GenerationEndpoint(url=server.url), prefixes=small_store.prefix_map)
    results = run_baseline("B1", _questions(), cfg)
    assert [r.n_queries_issued for r in results] == [0, 0]
    assert results[0].correct and results[1].correct
    assert results[0].answer == "ex:B"


def test_b2_exactly_one_query_and_derived_answer(generation_server, small_store):
    server = generation_server(
        [
            "<query>SELECT ?o WHERE { ex:A ex:p ?o } LIMIT 1</query>",
            "<query>totally broken(</query>",
        ]
    )
    cfg = BaselineConfig(
        generation=GenerationEndpoint(url=server.url),
        executor=EmbeddedExecutor(small_store),
        prefixes=small_store.prefix_map,
    )
    results = run_baseline("B2", _questions(), cfg)
    assert [r.n_queries_issued for r in results] == [1, 1]
    assert results[0].correct  # first binding ex:B rendered and judged
    assert results[0].answer == "ex:B"
    assert not results[1].correct  # invalid SPARQL counts as failed execution
    assert results[1].n_queries_succeeded == 0
    body = server.requests[0]
    assert body["temperature"] == 0.2 and body["top_p"] == 0.95


def test_b3_full_loop_with_greedy_decoding(generation_server, small_store):
    server = generation_server([QUERY, QUERY, ANSWER])
    cfg = BaselineConfig(
        generation=GenerationEndpoint(url=server.url),
        executor=EmbeddedExecutor(small_store),
        prefixes=small_store.prefix_map,
    )
    results = run_baseline("B3", _questions()[:1], cfg)
    assert results[0].turns == 3
    assert results[0].n_queries_issued == 2
    assert results[0].correct
    assert server.requests[0]["temperature"] == 0.0  # greedy


def test_b3_aborted_episode_is_skipped():
    from queryloop.store import TripleStore

    cfg = BaselineConfig(
        generation=GenerationEndpoint(url="http://127.0.0.1:1/x", max_retries=0, backoff_base=0.01),
        executor=EmbeddedExecutor(TripleStore([])),
    )
    results = run_baseline("B3", _questions()[:1], cfg)
    assert results == []


def test_unknown_baseline_kind():
    with pytest.raises(ValueError):
        run_baseline("B4", [], BaselineConfig(generation=GenerationEndpoint(url="http://x")))
