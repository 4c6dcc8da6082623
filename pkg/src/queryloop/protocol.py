"""The tagged trajectory language: parsing, serialization, and loss masks.

An agent turn is one ``<think>...</think>`` block followed by exactly one
``<query>...</query>`` or ``<answer>...</answer>`` block, with nothing but
whitespace around them. The parser is strict — trailing content, duplicate
action blocks, or any reserved tag (including ``<query_result>``) inside a
block make the turn malformed; the episode aborts and the trajectory earns
the invalid-structure reward. With ``require_think=False`` (the reactive
agent variant) the grammar drops the think block entirely, so a think
block becomes invalid content.

Serialization is a deterministic concatenation with one newline between
blocks; a :class:`SpanMask` records which character ranges came from the
prompt, the agent, and the environment so that loss masks can be derived
for any tokenizer via character offsets.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Union

from .execution import ExecutionOutcome, Failure, Success
from .terms import render_term

THINK_OPEN, THINK_CLOSE = "<think>", "</think>"
QUERY_OPEN, QUERY_CLOSE = "<query>", "</query>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
RESULT_OPEN, RESULT_CLOSE = "<query_result>", "</query_result>"

_TAG_RE = re.compile(r"</?(?:think|query|answer|query_result)>")

REASON_MISSING_THINK = "missing-think"
REASON_MISSING_ACTION = "missing-action"
REASON_TRAILING_CONTENT = "trailing-content"
REASON_NESTED_TAGS = "nested-tags"
REASON_MULTIPLE_ACTIONS = "multiple-actions"


class MalformedError(ValueError):
    def __init__(self, reason: str, message: str):
        super().__init__(f"{reason}: {message}")
        self.reason = reason


@dataclass(frozen=True)
class Query:
    text: str


@dataclass(frozen=True)
class Answer:
    text: str


Action = Union[Query, Answer]


@dataclass(frozen=True)
class AgentTurn:
    think: str
    action: Action

    def render(self, include_think: bool = True) -> str:
        if isinstance(self.action, Query):
            action = f"{QUERY_OPEN}{self.action.text}{QUERY_CLOSE}"
        else:
            action = f"{ANSWER_OPEN}{self.action.text}{ANSWER_CLOSE}"
        if include_think:
            return f"{THINK_OPEN}{self.think}{THINK_CLOSE}{action}"
        return action


OBS_RESULT = "result"
OBS_EXEC_ERROR = "exec_error"


@dataclass(frozen=True)
class Observation:
    kind: str  # OBS_RESULT | OBS_EXEC_ERROR
    payload: str
    row_count: int = 0
    truncated: bool = False

    def __post_init__(self) -> None:
        if self.kind == OBS_EXEC_ERROR and self.row_count != 0:
            raise ValueError("error observations carry no rows")


@dataclass(frozen=True)
class Step:
    turn: AgentTurn
    raw: str
    observation: Observation | None = None


TERM_ANSWERED = "answered"
TERM_TURN_LIMIT = "turn_limit"
TERM_MALFORMED = "malformed"


@dataclass(frozen=True)
class Termination:
    kind: str
    malformed_raw: str | None = None
    malformed_reason: str | None = None


@dataclass(frozen=True)
class Trajectory:
    question: str
    prompt_id: str = ""
    steps: tuple[Step, ...] = ()
    termination: Termination | None = None
    final_answer: str | None = None


class Origin(str, Enum):
    PROMPT = "prompt"
    AGENT = "agent"
    ENVIRONMENT = "environment"


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    origin: Origin


@dataclass(frozen=True)
class SpanMask:
    spans: tuple[Span, ...]

    @property
    def total_length(self) -> int:
        return self.spans[-1].end if self.spans else 0


def parse_agent_output(raw: str, require_think: bool = True) -> AgentTurn:
    """Parse one generated action; raises :class:`MalformedError` otherwise.

    Reason codes: ``missing-think`` (no leading, closed think block),
    ``missing-action`` (no single query/answer block where one is due),
    ``nested-tags`` (a reserved tag inside a block), ``multiple-actions``
    (more than one action block), ``trailing-content`` (non-whitespace
    outside the blocks).
    """
    tags = [(m.group(0), m.start(), m.end()) for m in _TAG_RE.finditer(raw)]
    think = ""
    idx = 0
    cursor = 0
    if require_think:
        if not tags or tags[0][0] != THINK_OPEN:
            raise MalformedError(REASON_MISSING_THINK, "output must start with a <think> block")
        if raw[: tags[0][1]].strip():
            raise MalformedError(REASON_TRAILING_CONTENT, "content before <think>")
        if len(tags) < 2:
            raise MalformedError(REASON_MISSING_THINK, "unclosed <think> block")
        if tags[1][0] != THINK_CLOSE:
            raise MalformedError(REASON_NESTED_TAGS, f"{tags[1][0]} inside <think> block")
        think = raw[tags[0][2] : tags[1][1]]
        idx = 2
        cursor = tags[1][2]
    rest = tags[idx:]
    if not rest:
        raise MalformedError(REASON_MISSING_ACTION, "no <query> or <answer> block")
    name, start, end = rest[0]
    if name not in (QUERY_OPEN, ANSWER_OPEN):
        raise MalformedError(REASON_MISSING_ACTION, f"expected <query> or <answer>, found {name}")
    if raw[cursor:start].strip():
        raise MalformedError(REASON_TRAILING_CONTENT, "content before the action block")
    close = QUERY_CLOSE if name == QUERY_OPEN else ANSWER_CLOSE
    if len(rest) < 2:
        raise MalformedError(REASON_MISSING_ACTION, f"unclosed {name} block")
    if rest[1][0] != close:
        raise MalformedError(REASON_NESTED_TAGS, f"{rest[1][0]} inside {name} block")
    body = raw[rest[0][2] : rest[1][1]]
    extra = rest[2:]
    if extra:
        if any(t[0] in (QUERY_OPEN, ANSWER_OPEN) for t in extra):
            raise MalformedError(REASON_MULTIPLE_ACTIONS, "more than one action block")
        raise MalformedError(REASON_TRAILING_CONTENT, f"unexpected {extra[0][0]} after the action block")
    if raw[rest[1][2] :].strip():
        raise MalformedError(REASON_TRAILING_CONTENT, "content after the action block")
    action: Action = Query(body) if name == QUERY_OPEN else Answer(body)
    return AgentTurn(think=think, action=action)


@dataclass(frozen=True)
class RenderLimits:
    max_rows: int = 10
    max_chars: int = 2000

    def __post_init__(self) -> None:
        if self.max_rows < 1:
            raise ValueError("max_rows must be >= 1")
        if self.max_chars < 64:
            raise ValueError("max_chars must be >= 64")


def render_observation(
    outcome: ExecutionOutcome,
    limits: RenderLimits = RenderLimits(),
    prefixes: dict[str, str] | None = None,
) -> Observation:
    """Render an execution outcome into the text the agent will see.

    Tabular successes render as a header line of variable names plus one
    tab-separated line per row, clipped to the limits; ASK results render
    as ``true``/``false``; an empty row set renders as an empty payload.
    Failures render as ``ERROR: <category>: <message>``.
    """
    if isinstance(outcome, Failure):
        return Observation(OBS_EXEC_ERROR, f"ERROR: {outcome.label()}: {outcome.message}")
    if outcome.is_boolean is not None:
        return Observation(OBS_RESULT, "true" if outcome.is_boolean else "false")
    rows = outcome.rows
    if not rows:
        return Observation(OBS_RESULT, "", row_count=0)
    variables = outcome.variables or tuple(rows[0].keys())
    truncated = len(rows) > limits.max_rows
    lines = ["\t".join(variables)]
    for row in rows[: limits.max_rows]:
        lines.append("\t".join(render_term(row[v], prefixes) for v in variables))
    payload = "\n".join(lines)
    if len(payload) > limits.max_chars:
        payload = payload[: limits.max_chars]
        truncated = True
    return Observation(OBS_RESULT, payload, row_count=len(rows), truncated=truncated)


def serialize_state(traj: Trajectory, system_prompt: str) -> tuple[str, SpanMask]:
    """Serialize the conversation state; spans label every character's origin.

    Block order: prompt+question (one Prompt span), then per step the raw
    agent text (Agent) and, for query steps, the observation wrapped in
    ``<query_result>`` tags (Environment). A terminating malformed
    generation is appended as a final Agent block — it was produced by the
    policy and must stay visible to the loss. Blocks are joined by one
    newline, charged to the preceding block's span.
    """
    blocks: list[tuple[str, Origin]] = []
    prompt = f"{system_prompt}\n{traj.question}" if system_prompt else traj.question
    blocks.append((prompt, Origin.PROMPT))
    for step in traj.steps:
        blocks.append((step.raw, Origin.AGENT))
        if step.observation is not None:
            blocks.append((f"{RESULT_OPEN}{step.observation.payload}{RESULT_CLOSE}", Origin.ENVIRONMENT))
    term = traj.termination
    if term is not None and term.kind == TERM_MALFORMED and term.malformed_raw is not None:
        blocks.append((term.malformed_raw, Origin.AGENT))
    parts: list[str] = []
    spans: list[Span] = []
    pos = 0
    for i, (text, origin) in enumerate(blocks):
        chunk = text + ("\n" if i < len(blocks) - 1 else "")
        parts.append(chunk)
        spans.append(Span(pos, pos + len(chunk), origin))
        pos += len(chunk)
    return "".join(parts), SpanMask(tuple(spans))


def compute_loss_mask(mask: SpanMask, token_offsets: list[tuple[int, int]]) -> list[bool]:
    """True for tokens lying entirely inside Agent spans.

    ``token_offsets`` must partition the serialized text (contiguous,
    ascending, covering [0, length)); a token overlapping any Prompt or
    Environment character — including one straddling a span boundary — is
    masked out (False).
    """
    total = mask.total_length
    expected = 0
    for start, end in token_offsets:
        if start != expected or end <= start:
            raise ValueError("token offsets must partition the serialized text")
        expected = end
    if expected != total:
        raise ValueError("token offsets must partition the serialized text")
    out: list[bool] = []
    span_idx = 0
    for start, end in token_offsets:
        while span_idx < len(mask.spans) and mask.spans[span_idx].end <= start:
            span_idx += 1
        inside_agent = True
        j = span_idx
        covered = start
        while covered < end:
            span = mask.spans[j]
            if span.origin is not Origin.AGENT:
                inside_agent = False
            covered = span.end
            j += 1
        out.append(inside_agent)
    return out


def is_structurally_valid(traj: Trajectory) -> bool:
    """True iff the episode terminated with an answer and every turn parsed."""
    return traj.termination is not None and traj.termination.kind == TERM_ANSWERED
