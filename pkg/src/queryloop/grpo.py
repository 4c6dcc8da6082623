"""Group-relative advantages, the masked KL-regularized objective, and
training-record export.

The loss over a batch of records is

    loss = -(1/N) * sum_i a_i * sum_{t in masked_i} logpi(tok_t)
           + beta * (1/N) * sum_i sum_{t in masked_i} (exp(d) - d - 1)

with d = logpi_ref - logpi, N the total masked-token count (token-mean
aggregation, so long trajectories are not overweighted), and a_i the
group-relative advantage. The KL estimator exp(d)-d-1 is non-negative and
zero exactly when the policy matches the reference on masked tokens.
Gradient flows only through masked (agent-generated) tokens.

Because this is a library function over arbitrary policies, the gradient
is transported by the caller: ``logprob_fn(record)`` returns the per-token
log-probabilities together with their gradients w.r.t. the flattened
parameter vector; ``ref_logprob_fn(record)`` returns reference
log-probabilities only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .protocol import Trajectory, compute_loss_mask, serialize_state
from .prompts import SYSTEM_PROMPT_V1
from .reward import RewardBreakdown

TRAINING_RECORD_SCHEMA = "queryloop.training_record.v1"


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 16
    kl_beta: float = 0.04
    learning_rate: float = 5e-6  # LLM-scale default; the toy trainer overrides
    batch_questions: int = 128
    normalize_by_std: bool = True
    std_eps: float = 1e-8
    discount: float = 1.0  # terminal-reward MDP: kept for completeness, no effect

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")
        if self.std_eps <= 0:
            raise ValueError("std_eps must be > 0")


@dataclass(frozen=True)
class TrainingRecord:
    prompt_id: str
    text: str
    token_offsets: tuple[tuple[int, int], ...]
    loss_mask: tuple[bool, ...]
    reward: float
    advantage: float

    def __post_init__(self) -> None:
        if len(self.loss_mask) != len(self.token_offsets):
            raise ValueError("loss mask length must equal token count")

    def masked_count(self) -> int:
        return sum(self.loss_mask)


@dataclass(frozen=True)
class Group:
    prompt_id: str
    members: tuple[tuple[Trajectory, RewardBreakdown], ...]

    @property
    def size(self) -> int:
        return len(self.members)


def compute_advantages(rewards: Sequence[float], cfg: GrpoConfig = GrpoConfig()) -> list[float]:
    """Center rewards on the group mean; optionally divide by population std.

    All-equal groups yield exactly zero advantages in both variants.
    """
    if len(rewards) < 2:
        raise ValueError("advantage computation needs a group of size >= 2")
    arr = np.asarray(rewards, dtype=float)
    centered = arr - arr.mean()
    if cfg.normalize_by_std:
        centered = centered / (arr.std() + cfg.std_eps)
    return centered.tolist()


LogprobFn = Callable[[TrainingRecord], tuple[np.ndarray, np.ndarray]]
RefLogprobFn = Callable[[TrainingRecord], np.ndarray]


def grpo_objective(
    records: Sequence[TrainingRecord],
    logprob_fn: LogprobFn,
    ref_logprob_fn: RefLogprobFn,
    cfg: GrpoConfig = GrpoConfig(),
) -> tuple[float, np.ndarray]:
    """Masked policy-gradient loss and its gradient w.r.t. the policy parameters."""
    if not records:
        raise ValueError("no records")
    total_masked = sum(r.masked_count() for r in records)
    if total_masked == 0:
        raise ValueError("no masked tokens in batch")
    pg_sum = 0.0
    kl_sum = 0.0
    grad: np.ndarray | None = None
    for record in records:
        logprobs, grads = logprob_fn(record)
        ref_logprobs = np.asarray(ref_logprob_fn(record), dtype=float)
        n_tokens = len(record.token_offsets)
        logprobs = np.asarray(logprobs, dtype=float)
        grads = np.asarray(grads, dtype=float)
        if logprobs.shape != (n_tokens,) or ref_logprobs.shape != (n_tokens,):
            raise ValueError("logprob vector length must equal token count")
        if grads.shape[0] != n_tokens:
            raise ValueError("gradient rows must equal token count")
        if grad is None:
            grad = np.zeros(grads.shape[1])
        mask = np.asarray(record.loss_mask, dtype=bool)
        if not mask.any():
            continue
        lp = logprobs[mask]
        delta = ref_logprobs[mask] - lp
        exp_delta = np.exp(delta)
        pg_sum += record.advantage * lp.sum()
        kl_sum += (exp_delta - delta - 1.0).sum()
        # d loss/d theta, restricted to masked tokens:
        coeff = -record.advantage - cfg.kl_beta * (exp_delta - 1.0)
        grad += coeff @ grads[mask]
    assert grad is not None
    loss = (-pg_sum + cfg.kl_beta * kl_sum) / total_masked
    return loss, grad / total_masked


# --- record construction and export ------------------------------------------


def records_from_group(
    group: Group,
    cfg: GrpoConfig = GrpoConfig(),
    system_prompt: str = SYSTEM_PROMPT_V1,
) -> list[TrainingRecord]:
    """Serialize a rollout group into training records.

    Token offsets default to the span partition (one coarse token per
    prompt/agent/environment block); an external trainer re-derives fine
    masks from the character spans via compute_loss_mask with its own
    tokenizer offsets.
    """
    if group.size < 2:
        raise ValueError("groups need >= 2 members for advantages")
    advantages = compute_advantages([bd.total for _, bd in group.members], cfg)
    records = []
    for (traj, breakdown), advantage in zip(group.members, advantages):
        text, mask = serialize_state(traj, system_prompt)
        offsets = [(span.start, span.end) for span in mask.spans]
        loss_mask = compute_loss_mask(mask, offsets)
        records.append(
            TrainingRecord(
                prompt_id=group.prompt_id,
                text=text,
                token_offsets=tuple(offsets),
                loss_mask=tuple(loss_mask),
                reward=breakdown.total,
                advantage=advantage,
            )
        )
    return records


def export_records(
    groups: Sequence[Group],
    path: str,
    cfg: GrpoConfig = GrpoConfig(),
    system_prompt: str = SYSTEM_PROMPT_V1,
) -> int:
    """Write line-delimited JSON training records; returns the count written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for group in groups:
            for record in records_from_group(group, cfg, system_prompt):
                fh.write(json.dumps(record_to_json(record), sort_keys=True) + "\n")
                count += 1
    return count


def record_to_json(record: TrainingRecord) -> dict:
    return {
        "schema": TRAINING_RECORD_SCHEMA,
        "prompt_id": record.prompt_id,
        "text": record.text,
        "token_offsets": [list(pair) for pair in record.token_offsets],
        "loss_mask": [int(b) for b in record.loss_mask],
        "reward": record.reward,
        "advantage": record.advantage,
    }


def record_from_json(obj: dict) -> TrainingRecord:
    if obj.get("schema") != TRAINING_RECORD_SCHEMA:
        raise ValueError(f"unknown record schema: {obj.get('schema')!r}")
    return TrainingRecord(
        prompt_id=obj["prompt_id"],
        text=obj["text"],
        token_offsets=tuple((int(s), int(e)) for s, e in obj["token_offsets"]),
        loss_mask=tuple(bool(b) for b in obj["loss_mask"]),
        reward=float(obj["reward"]),
        advantage=float(obj["advantage"]),
    )


def load_records(path: str) -> list[TrainingRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_json(json.loads(line)))
    return records
