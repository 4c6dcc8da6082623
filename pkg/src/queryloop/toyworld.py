"""Synthetic knowledge graph, template policy, and desk-scale training loop.

The world is a seeded random directed graph over entities ``E0..En`` with
relations ``p1..pk``; tasks are 1-hop ("Which node does E3 reach via
p1?") and 2-hop ("... via p1 then p4?") questions whose gold query
returns exactly one row, mirroring the curated-dataset rule.

The policy is a softmax over six parameterized action templates, so the
full rollout -> reward -> advantage -> update loop runs with an analytic
gradient while exercising exactly the same environment, reward, and
masking paths an LLM policy would. Template instantiation reads the same
observation text the agent sees:

* probe-one-hop      forward probe from the question's start entity
* probe-reverse-hop  probe incoming edges (rarely useful; learned against)
* filter-candidates  narrow/verify candidates from the last non-empty
                     result; without candidates it emits a filter over an
                     unbound variable, which is a SPARQL syntax error —
                     misusing the tool costs an execution failure
* answer-from-last-result  answer the first term of the last result
* answer-random      answer a random candidate (or the start entity)
* malformed-emit     emit text that violates the tag grammar

Training starts from a probe-heavy bias prior (an instruction-tuned model
probes a lot before answering); ``theta = 0`` gives the uniform
distribution and stays available for the statistical tests.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field

import numpy as np

from .environment import EpisodeConfig, run_episode
from .execution import EmbeddedExecutor
from .grpo import GrpoConfig, TrainingRecord, compute_advantages, grpo_objective
from .protocol import (
    OBS_RESULT,
    Trajectory,
    compute_loss_mask,
    is_structurally_valid,
    serialize_state,
)
from .prompts import SYSTEM_PROMPT_V1
from .reward import RewardConfig, judge_local, score
from .store import TripleStore
from .subset import execute_subset, parse_subset
from .terms import Iri, RdfTerm

TOY_BASE = "http://example.org/toy/"
TOY_PREFIXES = {"toy": TOY_BASE}

TEMPLATES = (
    "probe-one-hop",
    "probe-reverse-hop",
    "filter-candidates",
    "answer-from-last-result",
    "answer-random",
    "malformed-emit",
)
N_TEMPLATES = len(TEMPLATES)
MALFORMED_TEMPLATE = TEMPLATES.index("malformed-emit")

# State-independent initial logit bias added on the bias feature: probe-heavy,
# answer-shy, with a visible malformed mass for training to burn off.
DEFAULT_INIT_BIAS = (1.0, 1.0, 1.6, -0.8, -0.8, -0.2)

_QUESTION_RE = re.compile(r"Which node does (E\d+) reach via (p\d+)(?: then (p\d+))?\?")

_PREFIX_DECL = f"PREFIX toy: <{TOY_BASE}>"


@dataclass(frozen=True)
class ToyTask:
    task_id: str
    question: str
    gold: RdfTerm
    gold_query: str
    hops: int
    start: str
    relations: tuple[str, ...]


@dataclass(frozen=True)
class ToyWorld:
    store: TripleStore
    tasks: tuple[ToyTask, ...]
    relations: tuple[str, ...]
    n_entities: int
    seed: int


def _entity(name: str) -> Iri:
    return Iri(TOY_BASE + name)


def generate_world(
    seed: int,
    n_entities: int = 30,
    n_tasks: int = 40,
    n_relations: int = 4,
) -> ToyWorld:
    """Seeded random 2-hop world; every gold query returns exactly one row."""
    if n_entities < 10:
        raise ValueError("n_entities must be >= 10")
    rng = random.Random(seed)
    entities = [f"E{i}" for i in range(n_entities)]
    relations = tuple(f"p{i + 1}" for i in range(n_relations))
    for _ in range(64):
        out: dict[tuple[str, str], list[str]] = {}
        triples = []
        for e in entities:
            for p in relations:
                if rng.random() < 0.6:
                    degree = 2 if rng.random() < 0.3 else 1
                    targets = rng.sample([t for t in entities if t != e], degree)
                    out[(e, p)] = targets
                    for t in targets:
                        triples.append((_entity(e), _entity(p), _entity(t)))
        one_hop = [
            (e, p) for e in entities for p in relations if len(out.get((e, p), ())) == 1
        ]
        two_hop = []
        for e in entities:
            for p in relations:
                mids = out.get((e, p), ())
                if not mids:
                    continue
                for q in relations:
                    endpoints = [x for m in mids for x in out.get((m, q), ())]
                    if len(endpoints) == 1:
                        two_hop.append((e, p, q, endpoints[0]))
        n_one = n_tasks // 2
        n_two = n_tasks - n_one
        if len(one_hop) < n_one or len(two_hop) < n_two:
            continue
        store = TripleStore(triples, prefix_map=TOY_PREFIXES)
        tasks: list[ToyTask] = []
        for i, (e, p) in enumerate(rng.sample(one_hop, n_one)):
            gold = _entity(out[(e, p)][0])
            query = f"{_PREFIX_DECL} SELECT ?x WHERE {{ toy:{e} toy:{p} ?x }}"
            tasks.append(
                ToyTask(
                    task_id=f"toy-{seed}-1hop-{i}",
                    question=f"Which node does {e} reach via {p}?",
                    gold=gold,
                    gold_query=query,
                    hops=1,
                    start=e,
                    relations=(p,),
                )
            )
        for i, (e, p, q, answer) in enumerate(rng.sample(two_hop, n_two)):
            query = f"{_PREFIX_DECL} SELECT ?x WHERE {{ toy:{e} toy:{p} ?m . ?m toy:{q} ?x }}"
            tasks.append(
                ToyTask(
                    task_id=f"toy-{seed}-2hop-{i}",
                    question=f"Which node does {e} reach via {p} then {q}?",
                    gold=_entity(answer),
                    gold_query=query,
                    hops=2,
                    start=e,
                    relations=(p, q),
                )
            )
        for task in tasks:  # generator invariant: gold queries are single-row
            rows = execute_subset(parse_subset(task.gold_query, store.prefix_map), store)
            assert isinstance(rows, list) and len(rows) == 1 and rows[0]["x"] == task.gold
        return ToyWorld(
            store=store,
            tasks=tuple(tasks),
            relations=relations,
            n_entities=n_entities,
            seed=seed,
        )
    raise RuntimeError("could not generate a world with enough unique-answer tasks")


# --- features ----------------------------------------------------------------

_OUTCOME_NONE, _OUTCOME_NONEMPTY, _OUTCOME_EMPTY, _OUTCOME_ERROR = range(4)


def feature_dim(t_max: int = 10) -> int:
    return t_max + 11


def _question_context(question: str) -> tuple[str, tuple[str, ...]]:
    m = _QUESTION_RE.search(question)
    if m is None:
        raise ValueError(f"not a toy question: {question!r}")
    start, r1, r2 = m.groups()
    return start, (r1,) if r2 is None else (r1, r2)


def _last_result_rows(traj: Trajectory) -> list[str]:
    """First-column values of the most recent non-empty tabular result."""
    for step in reversed(traj.steps):
        obs = step.observation
        if obs is None or obs.kind != OBS_RESULT:
            continue
        lines = obs.payload.split("\n")
        if len(lines) >= 2:
            return [line.split("\t")[0] for line in lines[1:] if line]
    return []


def featurize(traj: Trajectory, t_max: int = 10) -> np.ndarray:
    """Deterministic state features: turn one-hot, last outcome kind,
    question hop hint, last-result row bucket, and a bias term."""
    features = np.zeros(feature_dim(t_max))
    turn = min(len(traj.steps), t_max - 1)
    features[turn] = 1.0
    base = t_max
    outcome = _OUTCOME_NONE
    if traj.steps:
        obs = traj.steps[-1].observation
        if obs is None:
            outcome = _OUTCOME_NONE
        elif obs.kind != OBS_RESULT:
            outcome = _OUTCOME_ERROR
        elif obs.row_count >= 1:
            outcome = _OUTCOME_NONEMPTY
        else:
            outcome = _OUTCOME_EMPTY
    features[base + outcome] = 1.0
    base += 4
    _, rels = _question_context(traj.question)
    features[base + (len(rels) - 1)] = 1.0
    base += 2
    last_result = None
    for step in reversed(traj.steps):
        if step.observation is not None and step.observation.kind == OBS_RESULT:
            last_result = step.observation
            break
    if last_result is not None:
        count = last_result.row_count
        bucket = 0 if count == 0 else 1 if count == 1 else 2 if count <= 5 else 3
        features[base + bucket] = 1.0
    base += 4
    features[base] = 1.0  # bias
    return features


# --- template instantiation ----------------------------------------------------

_THINK_LINES = {
    0: "Probe forward from the start entity.",
    1: "Probe the reverse direction for incoming edges.",
    2: "Narrow the candidate set with a filtered query.",
    3: "The last result should contain the answer.",
    4: "Guess one of the candidates.",
}


def _filter_attempts(traj: Trajectory) -> int:
    return sum(
        1
        for step in traj.steps
        if step.observation is not None and "FILTER(" in step.turn.action.text
    )


def instantiate_template(
    template: int,
    traj: Trajectory,
    rng: random.Random,
    require_think: bool = True,
) -> str:
    """Emit the raw tagged text for one template decision in this state."""
    start, rels = _question_context(traj.question)
    candidates = _last_result_rows(traj)
    name = TEMPLATES[template]
    if name == "malformed-emit":
        return "<think>I am stuck; no valid action comes to mind.</think>"
    if name == "probe-one-hop":
        body = f"{_PREFIX_DECL} SELECT ?x WHERE {{ toy:{start} toy:{rels[0]} ?x }}"
        action = f"<query>{body}</query>"
    elif name == "probe-reverse-hop":
        body = f"{_PREFIX_DECL} SELECT ?x WHERE {{ ?x toy:{rels[0]} toy:{start} }}"
        action = f"<query>{body}</query>"
    elif name == "filter-candidates":
        rel = rels[-1]
        if not candidates:
            # No candidates harvested yet: the filter references a variable
            # that exists nowhere — a syntax error the agent pays for.
            body = f"{_PREFIX_DECL} SELECT ?x WHERE {{ ?m toy:{rel} ?x . FILTER(?m = ?candidate) }}"
        elif len(rels) == 2:
            pick = candidates[_filter_attempts(traj) % len(candidates)]
            body = f"{_PREFIX_DECL} SELECT ?x WHERE {{ ?m toy:{rel} ?x . FILTER(?m = {pick}) }}"
        else:
            pick = candidates[_filter_attempts(traj) % len(candidates)]
            body = f"{_PREFIX_DECL} ASK {{ toy:{start} toy:{rel} {pick} }}"
        action = f"<query>{body}</query>"
    elif name == "answer-from-last-result":
        action = f"<answer>{candidates[0] if candidates else 'unknown'}</answer>"
    else:  # answer-random
        guess = rng.choice(candidates) if candidates else f"toy:{start}"
        action = f"<answer>{guess}</answer>"
    if require_think:
        return f"<think>{_THINK_LINES[template]}</think>{action}"
    return action


# --- softmax template policy ---------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def initial_theta(t_max: int = 10, bias: tuple[float, ...] = DEFAULT_INIT_BIAS) -> np.ndarray:
    theta = np.zeros((feature_dim(t_max), N_TEMPLATES))
    theta[-1, :] = np.asarray(bias, dtype=float)
    return theta


def policy_logprob(
    theta: np.ndarray,
    features: np.ndarray,
    template: int,
    temperature: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Log-probability of a template decision and its gradient w.r.t. theta."""
    if not 0 <= template < N_TEMPLATES:
        raise ValueError(f"unknown template index {template}")
    temp = max(temperature, 1e-8)
    logits = features @ theta / temp
    shifted = logits - logits.max()
    logprobs = shifted - math.log(np.exp(shifted).sum())
    probs = np.exp(logprobs)
    grad = np.outer(features / temp, -probs)
    grad[:, template] += features / temp
    return float(logprobs[template]), grad


@dataclass(frozen=True)
class Decision:
    features: np.ndarray
    template: int
    malformed_prob: float


@dataclass
class SoftmaxTemplatePolicy:
    theta: np.ndarray
    temperature: float = 1.0
    require_think: bool = True
    t_max: int = 10
    rng: random.Random = field(default_factory=lambda: random.Random(0))
    supports_sampling: bool = True
    decision_log: list[Decision] = field(default_factory=list)

    def seed(self, n: int) -> None:
        self.rng = random.Random(n)

    def begin_episode(self) -> None:
        self.decision_log.clear()

    def distribution(self, traj: Trajectory) -> np.ndarray:
        features = featurize(traj, self.t_max)
        if self.temperature == 0:
            logits = features @ self.theta
            probs = np.zeros(N_TEMPLATES)
            probs[int(np.argmax(logits))] = 1.0
            return probs
        return softmax(features @ self.theta / max(self.temperature, 1e-8))

    def generate(self, state_text: str, trajectory: Trajectory | None = None) -> str:
        if trajectory is None:
            raise ValueError("the template policy needs the structured trajectory")
        features = featurize(trajectory, self.t_max)
        probs = self.distribution(trajectory)
        if self.temperature == 0:
            template = int(np.argmax(probs))
        else:
            u = self.rng.random()
            cumulative = 0.0
            template = N_TEMPLATES - 1
            for k, p in enumerate(probs):
                cumulative += p
                if u < cumulative:
                    template = k
                    break
        self.decision_log.append(
            Decision(features=features, template=template, malformed_prob=float(probs[MALFORMED_TEMPLATE]))
        )
        return instantiate_template(template, trajectory, self.rng, self.require_think)


# --- training loop ---------------------------------------------------------------


@dataclass
class ToyTrainingResult:
    curves: list[dict]
    theta: np.ndarray
    world_seed: int
    train_seed: int

    def final_malformed_prob(self) -> float:
        return self.curves[-1]["malformed_prob"]


CURVE_COLUMNS = (
    "step",
    "mean_reward",
    "accuracy",
    "executability",
    "mean_turns",
    "malformed_prob",
    "loss",
)


def train_toy(
    world: ToyWorld,
    grpo_cfg: GrpoConfig = GrpoConfig(),
    steps: int = 200,
    seed: int = 0,
    lr: float = 0.05,
    batch_questions: int = 4,
    t_max: int = 10,
    temperature: float = 1.0,
    require_think: bool = True,
    init_bias: tuple[float, ...] = DEFAULT_INIT_BIAS,
    reward_cfg: RewardConfig = RewardConfig(),
    system_prompt: str = SYSTEM_PROMPT_V1,
) -> ToyTrainingResult:
    """Run the full GRPO loop on the toy world; single worker, bit-reproducible.

    Per step: sample ``batch_questions`` tasks, roll out ``group_size``
    episodes each, score with the composite reward (local judge), compute
    group advantages, and take one gradient step on the masked objective
    against the rollout policy as reference. ``steps=0`` measures the
    initial policy (one rollout batch, no update).
    """
    update_enabled = steps > 0
    rng = random.Random(seed)
    theta = initial_theta(t_max, init_bias)
    policy = SoftmaxTemplatePolicy(
        theta=theta, temperature=temperature, require_think=require_think, t_max=t_max, rng=rng
    )
    executor = EmbeddedExecutor(world.store)
    episode_cfg = EpisodeConfig(
        executor=executor, t_max=t_max, require_think=require_think, system_prompt=system_prompt
    )
    curves: list[dict] = []
    for step_idx in range(steps if update_enabled else 1):
        records: list[TrainingRecord] = []
        decisions_for: dict[int, list[Decision]] = {}
        rewards: list[float] = []
        n_correct = 0
        n_rollouts = 0
        n_issued = 0
        n_succeeded = 0
        turn_sum = 0
        malformed_probs: list[float] = []
        for _ in range(batch_questions):
            task = world.tasks[rng.randrange(len(world.tasks))]
            group: list[tuple[Trajectory, float, list[Decision]]] = []
            for _ in range(grpo_cfg.group_size):
                policy.begin_episode()
                traj, stats = run_episode(policy, task.question, episode_cfg, prompt_id=task.task_id)
                decisions = list(policy.decision_log)
                judgment = None
                if is_structurally_valid(traj):
                    judgment = judge_local(
                        traj.final_answer or "", task.gold, prefixes=world.store.prefix_map
                    )
                breakdown = score(traj, stats, judgment, reward_cfg)
                group.append((traj, breakdown.total, decisions))
                rewards.append(breakdown.total)
                n_rollouts += 1
                if judgment is not None and judgment.correct:
                    n_correct += 1
                n_issued += stats.n_err + stats.n_exec_success
                n_succeeded += stats.n_exec_success
                turn_sum += stats.turns
                malformed_probs.extend(d.malformed_prob for d in decisions)
            advantages = compute_advantages([r for _, r, _ in group], grpo_cfg)
            for (traj, reward_total, decisions), advantage in zip(group, advantages):
                text, mask = serialize_state(traj, system_prompt)
                offsets = tuple((span.start, span.end) for span in mask.spans)
                loss_mask = tuple(compute_loss_mask(mask, list(offsets)))
                record = TrainingRecord(
                    prompt_id=task.task_id,
                    text=text,
                    token_offsets=offsets,
                    loss_mask=loss_mask,
                    reward=reward_total,
                    advantage=advantage,
                )
                records.append(record)
                decisions_for[id(record)] = decisions

        rollout_theta = theta.copy()

        def logprob_with_grad(record: TrainingRecord) -> tuple[np.ndarray, np.ndarray]:
            decisions = decisions_for[id(record)]
            n_tokens = len(record.token_offsets)
            logprobs = np.zeros(n_tokens)
            grads = np.zeros((n_tokens, theta.size))
            decision_idx = 0
            for t, is_agent in enumerate(record.loss_mask):
                if is_agent:
                    d = decisions[decision_idx]
                    decision_idx += 1
                    lp, g = policy_logprob(theta, d.features, d.template, temperature)
                    logprobs[t] = lp
                    grads[t] = g.ravel()
            return logprobs, grads

        def ref_logprob(record: TrainingRecord) -> np.ndarray:
            decisions = decisions_for[id(record)]
            n_tokens = len(record.token_offsets)
            logprobs = np.zeros(n_tokens)
            decision_idx = 0
            for t, is_agent in enumerate(record.loss_mask):
                if is_agent:
                    d = decisions[decision_idx]
                    decision_idx += 1
                    lp, _ = policy_logprob(rollout_theta, d.features, d.template, temperature)
                    logprobs[t] = lp
            return logprobs

        loss, grad = grpo_objective(records, logprob_with_grad, ref_logprob, grpo_cfg)
        if update_enabled:
            theta = theta - lr * grad.reshape(theta.shape)
            policy.theta = theta

        curves.append(
            {
                "step": step_idx,
                "mean_reward": sum(rewards) / len(rewards),
                "accuracy": n_correct / n_rollouts,
                "executability": (n_succeeded / n_issued) if n_issued else float("nan"),
                "mean_turns": turn_sum / n_rollouts,
                "malformed_prob": sum(malformed_probs) / len(malformed_probs),
                "loss": loss,
            }
        )
    return ToyTrainingResult(curves=curves, theta=theta, world_seed=world.seed, train_seed=seed)


def write_curves(curves: list[dict], path: str) -> None:
    """Comma-separated columnar curve file, one row per training step."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CURVE_COLUMNS) + "\n")
        for row in curves:
            fh.write(",".join(_format_cell(row[c]) for c in CURVE_COLUMNS) + "\n")


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def training_summary(result: ToyTrainingResult, window: int = 20) -> dict:
    """Summary statistics over the first/last ``window`` steps of a run."""
    head = result.curves[:window]
    tail = result.curves[-window:]

    def mean(rows: list[dict], column: str) -> float:
        return sum(r[column] for r in rows) / len(rows)

    return {
        "schema": "queryloop.toy_training_summary.v1",
        "world_seed": result.world_seed,
        "train_seed": result.train_seed,
        "steps": len(result.curves),
        "first_window_mean_reward": mean(head, "mean_reward"),
        "final_window_mean_reward": mean(tail, "mean_reward"),
        "first_window_mean_turns": mean(head, "mean_turns"),
        "final_window_mean_turns": mean(tail, "mean_turns"),
        "final_accuracy": result.curves[-1]["accuracy"],
        "final_executability": result.curves[-1]["executability"],
        "final_malformed_prob": result.curves[-1]["malformed_prob"],
    }
