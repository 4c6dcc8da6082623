"""The episode engine: the think -> act -> observe loop.

``step`` applies one raw agent generation to a trajectory: malformed text
aborts the episode, an answer terminates it, a query is executed and its
rendered observation appended. ``run_episode`` drives a policy to
completion. Turn counting convention: T is the number of agent
generations consumed, including the final answer turn and a terminating
malformed generation — every generation costs interaction budget.

Episodes are pure state transformations over immutable trajectories, so
arbitrarily many can run concurrently against a shared executor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TYPE_CHECKING, Protocol

from .execution import Executor
from .protocol import (
    AgentTurn,
    Answer,
    MalformedError,
    Observation,
    OBS_EXEC_ERROR,
    Query,
    RenderLimits,
    Step,
    TERM_ANSWERED,
    TERM_MALFORMED,
    TERM_TURN_LIMIT,
    Termination,
    Trajectory,
    parse_agent_output,
    render_observation,
    serialize_state,
)
from .prompts import SYSTEM_PROMPT_V1

if TYPE_CHECKING:
    from .reward import RewardBreakdown


class PolicyTransportError(Exception):
    """The policy backend failed to produce a generation (network, service)."""


class EpisodeAborted(Exception):
    """Episode ended through a policy failure; excluded from reward statistics."""

    def __init__(self, trajectory: Trajectory, cause: Exception):
        super().__init__(f"episode aborted: {cause}")
        self.trajectory = trajectory
        self.cause = cause


class Policy(Protocol):
    supports_sampling: bool

    def generate(self, state_text: str, trajectory: Trajectory | None = None) -> str: ...


@dataclass(frozen=True)
class EpisodeConfig:
    executor: Executor
    t_max: int = 10
    limits: RenderLimits = RenderLimits()
    require_think: bool = True
    system_prompt: str = SYSTEM_PROMPT_V1

    def __post_init__(self) -> None:
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")


@dataclass(frozen=True)
class EpisodeStats:
    turns: int
    n_err: int
    n_exec_success: int
    terminated: str


def step(traj: Trajectory, raw_agent_text: str, cfg: EpisodeConfig) -> tuple[Trajectory, bool]:
    """Apply one agent generation; returns the new trajectory and done flag."""
    if traj.termination is not None:
        raise ValueError("step called on a terminated trajectory")
    try:
        turn = parse_agent_output(raw_agent_text, require_think=cfg.require_think)
    except MalformedError as exc:
        terminated = Trajectory(
            question=traj.question,
            prompt_id=traj.prompt_id,
            steps=traj.steps,
            termination=Termination(TERM_MALFORMED, malformed_raw=raw_agent_text, malformed_reason=exc.reason),
        )
        return terminated, True
    if isinstance(turn.action, Answer):
        new_step = Step(turn=turn, raw=raw_agent_text, observation=None)
        terminated = Trajectory(
            question=traj.question,
            prompt_id=traj.prompt_id,
            steps=traj.steps + (new_step,),
            termination=Termination(TERM_ANSWERED),
            final_answer=turn.action.text,
        )
        return terminated, True
    assert isinstance(turn.action, Query)
    outcome = cfg.executor.execute(turn.action.text)
    observation = render_observation(outcome, cfg.limits, prefixes=getattr(cfg.executor, "prefixes", None))
    steps = traj.steps + (Step(turn=turn, raw=raw_agent_text, observation=observation),)
    if len(steps) >= cfg.t_max:
        terminated = Trajectory(
            question=traj.question,
            prompt_id=traj.prompt_id,
            steps=steps,
            termination=Termination(TERM_TURN_LIMIT),
        )
        return terminated, True
    return Trajectory(question=traj.question, prompt_id=traj.prompt_id, steps=steps), False


def count_errors(traj: Trajectory) -> int:
    """Number of failed SPARQL executions; empty results are not errors."""
    return sum(
        1 for s in traj.steps if s.observation is not None and s.observation.kind == OBS_EXEC_ERROR
    )


def episode_stats(traj: Trajectory) -> EpisodeStats:
    if traj.termination is None:
        raise ValueError("stats requested for an unterminated trajectory")
    n_err = count_errors(traj)
    n_queries = sum(1 for s in traj.steps if s.observation is not None)
    turns = len(traj.steps) + (1 if traj.termination.kind == TERM_MALFORMED else 0)
    return EpisodeStats(
        turns=turns,
        n_err=n_err,
        n_exec_success=n_queries - n_err,
        terminated=traj.termination.kind,
    )


def run_episode(
    policy: Policy,
    question: str,
    cfg: EpisodeConfig,
    rng_seed: int | None = None,
    prompt_id: str = "",
) -> tuple[Trajectory, EpisodeStats]:
    """Drive the policy until the episode terminates.

    Deterministic for a deterministic (or seeded) policy and the embedded
    executor. Policy transport failures raise :class:`EpisodeAborted`.
    """
    if rng_seed is not None and hasattr(policy, "seed"):
        policy.seed(rng_seed)
    traj = Trajectory(question=question, prompt_id=prompt_id)
    while True:
        state_text, _ = serialize_state(traj, cfg.system_prompt)
        try:
            raw = policy.generate(state_text, traj)
        except PolicyTransportError as exc:
            raise EpisodeAborted(traj, exc) from exc
        traj, done = step(traj, raw, cfg)
        if done:
            return traj, episode_stats(traj)


# --- episode log records (line-delimited JSON) -------------------------------


def episode_record(
    traj: Trajectory,
    stats: EpisodeStats,
    breakdown: "RewardBreakdown | None" = None,
    system_id: str = "",
) -> dict:
    """One JSON-serializable log record per trajectory (schema in MANUAL.md)."""
    steps = []
    for s in traj.steps:
        action_kind = "query" if isinstance(s.turn.action, Query) else "answer"
        entry: dict = {
            "think": s.turn.think,
            "action_kind": action_kind,
            "action_text": s.turn.action.text,
            "raw": s.raw,
        }
        if s.observation is not None:
            entry["observation"] = {
                "kind": s.observation.kind,
                "payload": s.observation.payload,
                "row_count": s.observation.row_count,
                "truncated": s.observation.truncated,
            }
        steps.append(entry)
    assert traj.termination is not None
    record: dict = {
        "schema": "queryloop.episode.v1",
        "prompt_id": traj.prompt_id,
        "system_id": system_id,
        "question": traj.question,
        "steps": steps,
        "termination": traj.termination.kind,
        "final_answer": traj.final_answer,
        "stats": {
            "turns": stats.turns,
            "n_err": stats.n_err,
            "n_exec_success": stats.n_exec_success,
        },
    }
    if traj.termination.kind == TERM_MALFORMED:
        record["malformed_raw"] = traj.termination.malformed_raw
        record["malformed_reason"] = traj.termination.malformed_reason
    if breakdown is not None:
        record["reward"] = {
            "structural_valid": breakdown.structural_valid,
            "r_ans": breakdown.r_ans,
            "cost": breakdown.cost,
            "total": breakdown.total,
        }
    return record


def trajectory_from_record(record: dict) -> tuple[Trajectory, EpisodeStats]:
    """Rebuild a trajectory (and its stats) from an episode log record."""
    steps: list[Step] = []
    for entry in record["steps"]:
        obs_data = entry.get("observation")
        observation = None
        if obs_data is not None:
            observation = Observation(
                kind=obs_data["kind"],
                payload=obs_data["payload"],
                row_count=obs_data["row_count"],
                truncated=obs_data["truncated"],
            )
        action = Query(entry["action_text"]) if entry["action_kind"] == "query" else Answer(entry["action_text"])
        steps.append(Step(turn=AgentTurn(entry["think"], action), raw=entry["raw"], observation=observation))
    termination = Termination(
        record["termination"],
        malformed_raw=record.get("malformed_raw"),
        malformed_reason=record.get("malformed_reason"),
    )
    traj = Trajectory(
        question=record["question"],
        prompt_id=record.get("prompt_id", ""),
        steps=tuple(steps),
        termination=termination,
        final_answer=record.get("final_answer"),
    )
    return traj, episode_stats(traj)


def write_episode_log(records: list[dict], path: str) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return len(records)


def read_episode_log(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
