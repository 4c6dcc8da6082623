"""Pluggable policies and the B1/B2/B3 baseline runners.

A policy is anything with ``generate(state_text, trajectory=None) -> str``
and a ``supports_sampling`` flag. ScriptedPolicy replays canned outputs
for tests; RemotePolicy speaks the generation-service HTTP contract
(MANUAL.md) with stop sequences closing after ``</query>``/``</answer>``.

Baselines differ only in prompt, loop, and decoding:

* B1 direct QA — no KG access, two chain-of-thought exemplars, the reply
  itself is judged.
* B2 one-shot SPARQL — exactly one query (temperature 0.2, top-p 0.95);
  the answer is the first binding of the single result.
* B3 prompt-guided agent — the full iterative loop with the same system
  prompt as the trained agent and greedy decoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from .environment import (
    EpisodeAborted,
    EpisodeConfig,
    PolicyTransportError,
    episode_stats,
    run_episode,
    step,
)
from .execution import Executor, Failure, Success
from .generation import (
    DecodingParams,
    GenerationEndpoint,
    GenerationError,
    generate_text,
)
from .prompts import B1_DIRECT_QA_PROMPT_V1, B2_ONE_SHOT_SPARQL_PROMPT_V1, SYSTEM_PROMPT_V1
from .protocol import (
    ANSWER_CLOSE,
    ANSWER_OPEN,
    QUERY_CLOSE,
    QUERY_OPEN,
    TERM_ANSWERED,
    Trajectory,
)
from .reward import Judgment, judge_local
from .terms import RdfTerm, render_term

STOP_SEQUENCES = [QUERY_CLOSE, ANSWER_CLOSE]


class ScriptExhausted(Exception):
    """A scripted policy ran past its script — a test setup error."""


class ScriptedPolicy:
    supports_sampling = False

    def __init__(self, script: Sequence[str]):
        self._script = list(script)
        self._next = 0

    def generate(self, state_text: str, trajectory: Trajectory | None = None) -> str:
        if self._next >= len(self._script):
            raise ScriptExhausted(f"script exhausted after {self._next} generations")
        raw = self._script[self._next]
        self._next += 1
        return raw


class RemotePolicy:
    supports_sampling = True

    def __init__(
        self,
        endpoint: GenerationEndpoint,
        system_prompt: str = "",
        few_shots: Sequence[tuple[str, str]] = (),
        params: DecodingParams = DecodingParams(),
    ):
        self.endpoint = endpoint
        self.system_prompt = system_prompt
        self.few_shots = tuple(few_shots)
        self.params = params

    def generate(self, state_text: str, trajectory: Trajectory | None = None) -> str:
        messages: list[dict] = []
        if self.system_prompt:
            messages.append({"role": "system", "content": self.system_prompt})
        for user, assistant in self.few_shots:
            messages.append({"role": "user", "content": user})
            messages.append({"role": "assistant", "content": assistant})
        messages.append({"role": "user", "content": state_text})
        try:
            return generate_text(self.endpoint, messages, self.params, stop=STOP_SEQUENCES)
        except GenerationError as exc:
            raise PolicyTransportError(str(exc)) from exc


def scripted_policy(script: Sequence[str]) -> ScriptedPolicy:
    return ScriptedPolicy(script)


def remote_policy(
    endpoint: GenerationEndpoint,
    system_prompt: str = "",
    few_shots: Sequence[tuple[str, str]] = (),
    params: DecodingParams = DecodingParams(),
) -> RemotePolicy:
    return RemotePolicy(endpoint, system_prompt, few_shots, params)


# --- baseline runners -----------------------------------------------------------


@dataclass(frozen=True)
class BaselineResult:
    question_id: str
    system_id: str
    turns: int
    n_queries_issued: int
    n_queries_succeeded: int
    correct: bool
    justification: str
    termination: str
    answer: str | None = None

    def to_record(self) -> dict:
        return {
            "schema": "queryloop.eval_result.v1",
            "question_id": self.question_id,
            "system_id": self.system_id,
            "turns": self.turns,
            "n_queries_issued": self.n_queries_issued,
            "n_queries_succeeded": self.n_queries_succeeded,
            "correct": self.correct,
            "justification": self.justification,
            "termination": self.termination,
            "answer": self.answer,
        }


@dataclass(frozen=True)
class BaselineQuestion:
    question_id: str
    question: str
    gold: RdfTerm
    aliases: tuple[str, ...] = ()


JudgeFn = Callable[[str, BaselineQuestion], Judgment]


@dataclass
class BaselineConfig:
    generation: GenerationEndpoint
    executor: Executor | None = None  # unused by B1
    t_max: int = 10
    system_prompt: str = SYSTEM_PROMPT_V1
    judge: JudgeFn | None = None
    prefixes: dict[str, str] = field(default_factory=dict)

    def judge_answer(self, answer: str, question: BaselineQuestion) -> Judgment:
        if self.judge is not None:
            return self.judge(answer, question)
        return judge_local(answer, question.gold, question.aliases, prefixes=self.prefixes or None)


def _extract_block(text: str, open_tag: str, close_tag: str) -> str | None:
    start = text.find(open_tag)
    if start < 0:
        return None
    end = text.find(close_tag, start + len(open_tag))
    if end < 0:
        return None
    return text[start + len(open_tag) : end]


def _b1_answer(reply: str) -> str:
    tagged = _extract_block(reply, ANSWER_OPEN, ANSWER_CLOSE)
    if tagged is not None:
        return tagged.strip()
    lines = [line.strip() for line in reply.splitlines() if line.strip()]
    return lines[-1] if lines else ""


def run_baseline(
    kind: str,
    dataset: Sequence[BaselineQuestion],
    cfg: BaselineConfig,
) -> list[BaselineResult]:
    """Run one baseline over the dataset; aborted episodes are skipped."""
    if kind == "B1":
        return [_run_b1(q, cfg) for q in dataset]
    if kind == "B2":
        return [_run_b2(q, cfg) for q in dataset]
    if kind == "B3":
        results = []
        for q in dataset:
            result = _run_b3(q, cfg)
            if result is not None:
                results.append(result)
        return results
    raise ValueError(f"unknown baseline kind {kind!r} (expected B1, B2, or B3)")


def _run_b1(q: BaselineQuestion, cfg: BaselineConfig) -> BaselineResult:
    reply = generate_text(
        cfg.generation,
        [
            {"role": "system", "content": B1_DIRECT_QA_PROMPT_V1},
            {"role": "user", "content": f"Q: {q.question}"},
        ],
        DecodingParams(temperature=0.0),
    )
    answer = _b1_answer(reply)
    judgment = cfg.judge_answer(answer, q)
    return BaselineResult(
        question_id=q.question_id,
        system_id="B1",
        turns=1,
        n_queries_issued=0,
        n_queries_succeeded=0,
        correct=judgment.correct,
        justification=judgment.justification,
        termination=TERM_ANSWERED,
        answer=answer,
    )


def _run_b2(q: BaselineQuestion, cfg: BaselineConfig) -> BaselineResult:
    assert cfg.executor is not None, "B2 needs an executor"
    reply = generate_text(
        cfg.generation,
        [
            {"role": "system", "content": B2_ONE_SHOT_SPARQL_PROMPT_V1},
            {"role": "user", "content": f"Q: {q.question}"},
        ],
        DecodingParams(temperature=0.2, top_p=0.95),
        stop=[QUERY_CLOSE],
    )
    query = _extract_block(reply, QUERY_OPEN, QUERY_CLOSE)
    if query is None:
        query = reply.strip()
    outcome = cfg.executor.execute(query)
    succeeded = isinstance(outcome, Success)
    answer = ""
    if isinstance(outcome, Success):
        if outcome.is_boolean is not None:
            answer = "true" if outcome.is_boolean else "false"
        elif outcome.rows:
            first = outcome.rows[0]
            variables = outcome.variables or tuple(first.keys())
            answer = render_term(first[variables[0]], cfg.prefixes or None)
    if succeeded and answer:
        judgment = cfg.judge_answer(answer, q)
        correct, justification = judgment.correct, judgment.justification
    else:
        correct = False
        justification = (
            f"execution failed: {outcome.message}" if isinstance(outcome, Failure) else "empty result"
        )
    return BaselineResult(
        question_id=q.question_id,
        system_id="B2",
        turns=1,
        n_queries_issued=1,
        n_queries_succeeded=1 if succeeded else 0,
        correct=correct,
        justification=justification,
        termination=TERM_ANSWERED,
        answer=answer or None,
    )


def _run_b3(q: BaselineQuestion, cfg: BaselineConfig) -> BaselineResult | None:
    assert cfg.executor is not None, "B3 needs an executor"
    policy = RemotePolicy(cfg.generation, params=DecodingParams(temperature=0.0))
    episode_cfg = EpisodeConfig(executor=cfg.executor, t_max=cfg.t_max, system_prompt=cfg.system_prompt)
    try:
        traj, stats = run_episode(policy, q.question, episode_cfg, prompt_id=q.question_id)
    except EpisodeAborted:
        return None
    if traj.final_answer is not None:
        judgment = cfg.judge_answer(traj.final_answer, q)
        correct, justification = judgment.correct, judgment.justification
    else:
        correct, justification = False, f"no answer ({stats.terminated})"
    return BaselineResult(
        question_id=q.question_id,
        system_id="B3",
        turns=stats.turns,
        n_queries_issued=stats.n_err + stats.n_exec_success,
        n_queries_succeeded=stats.n_exec_success,
        correct=correct,
        justification=justification,
        termination=stats.terminated,
        answer=traj.final_answer,
    )
