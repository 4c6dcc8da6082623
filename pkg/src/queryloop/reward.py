"""Composite terminal reward and answer judging.

The reward has two branches: a flat penalty for structurally invalid
trajectories (bad tag grammar, or no final answer), otherwise a base for
validity plus an answer term minus error/turn costs:

    total = -1                                    if not structurally valid
    total = 1 + r_ans - (0.1 * N_err + 0.02 * T)  otherwise

with r_ans = +0.5 for a correct answer and -0.2 for a wrong one. Invalid
trajectories are never judged (judge calls are the expensive part of the
loop), and score() enforces that contract in both directions.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .environment import EpisodeStats
from .generation import DecodingParams, GenerationEndpoint, GenerationError, generate_text
from .prompts import JUDGE_PROMPT_V1
from .protocol import Trajectory, is_structurally_valid
from .terms import (
    Boolean,
    DEFAULT_PREFIXES,
    Iri,
    Literal,
    RdfTerm,
    XSD_BOOLEAN,
    compact_iri,
    iri_local_name,
    render_term,
    term_as_float,
)


@dataclass(frozen=True)
class RewardConfig:
    base_valid: float = 1.0
    ans_correct: float = 0.5
    ans_wrong: float = -0.2
    err_coef: float = 0.1
    turn_coef: float = 0.02
    invalid: float = -1.0


@dataclass(frozen=True)
class Judgment:
    correct: bool
    justification: str
    judge_id: str


@dataclass(frozen=True)
class RewardBreakdown:
    structural_valid: bool
    r_ans: float
    cost: float
    total: float


def score(
    traj: Trajectory,
    stats: EpisodeStats,
    judgment: Judgment | None,
    cfg: RewardConfig = RewardConfig(),
) -> RewardBreakdown:
    valid = is_structurally_valid(traj)
    if not valid:
        if judgment is not None:
            raise ValueError("invalid trajectories are never judged")
        return RewardBreakdown(structural_valid=False, r_ans=0.0, cost=0.0, total=cfg.invalid)
    if judgment is None:
        raise ValueError("a structurally valid trajectory requires a judgment")
    r_ans = cfg.ans_correct if judgment.correct else cfg.ans_wrong
    cost = cfg.err_coef * stats.n_err + cfg.turn_coef * stats.turns
    return RewardBreakdown(
        structural_valid=True,
        r_ans=r_ans,
        cost=cost,
        total=cfg.base_valid + r_ans - cost,
    )


# --- local deterministic judge ------------------------------------------------

LOCAL_JUDGE_ID = "local-normalizer-v1"

_TRUE_WORDS = frozenset({"yes", "true", "1"})
_FALSE_WORDS = frozenset({"no", "false", "0"})

_NUMBER_RE = re.compile(r"[-+]?[0-9][0-9,]*(?:\.[0-9]+)?(?:[eE][-+]?[0-9]+)?")


def _normalize(text: str) -> str:
    text = " ".join(text.split()).casefold()
    while len(text) >= 2 and (
        (text[0] == text[-1] and text[0] in "\"'`") or (text[0] == "<" and text[-1] == ">")
    ):
        text = text[1:-1].strip()
    return text


def _parse_number(text: str) -> float | None:
    """Unit-free numeric parse: the leading number, ignoring a trailing unit."""
    m = _NUMBER_RE.match(text.strip())
    if m is None:
        return None
    rest = text.strip()[m.end():].strip()
    if rest and not re.fullmatch(r"[A-Za-z°%μ²³/\s\.]*", rest):
        return None
    try:
        return float(m.group(0).replace(",", ""))
    except ValueError:
        return None


def _gold_bool(gold: RdfTerm) -> bool | None:
    if isinstance(gold, Boolean):
        return gold.value
    if isinstance(gold, Literal) and gold.datatype == XSD_BOOLEAN:
        return gold.lexical.strip().casefold() in ("true", "1")
    return None


def judge_local(
    answer: str,
    gold: RdfTerm,
    aliases: tuple[str, ...] | list[str] = (),
    prefixes: dict[str, str] | None = None,
) -> Judgment:
    """Deterministic normalization judge.

    Booleans accept the yes/true/1 equivalence classes; numeric answers
    compare with relative tolerance 1e-6 after a unit-free parse; IRIs
    match their full form, QName (under ``prefixes``, default the common
    namespace map), local name, or any provided alias; literals match
    their lexical form or an alias. All comparisons are whitespace- and
    case-insensitive.
    """
    norm_answer = _normalize(answer)
    candidates: set[str] = {_normalize(a) for a in aliases}

    gold_as_bool = _gold_bool(gold)
    if gold_as_bool is not None:
        if norm_answer in (_TRUE_WORDS if gold_as_bool else _FALSE_WORDS):
            return Judgment(True, f"boolean match for {gold_as_bool}", LOCAL_JUDGE_ID)
        if norm_answer in (_FALSE_WORDS if gold_as_bool else _TRUE_WORDS):
            return Judgment(False, "opposite boolean", LOCAL_JUDGE_ID)

    gold_number = term_as_float(gold)
    if gold_number is not None:
        answer_number = _parse_number(answer)
        if answer_number is not None and math.isclose(
            answer_number, gold_number, rel_tol=1e-6, abs_tol=1e-12
        ):
            return Judgment(True, f"numeric match {answer_number} ~ {gold_number}", LOCAL_JUDGE_ID)

    if isinstance(gold, Iri):
        candidates.add(_normalize(gold.value))
        candidates.add(_normalize(iri_local_name(gold.value)))
        prefix_map = DEFAULT_PREFIXES if prefixes is None else prefixes
        compact = compact_iri(gold.value, prefix_map)
        if compact is not None:
            candidates.add(_normalize(compact))
    elif isinstance(gold, Literal):
        candidates.add(_normalize(gold.lexical))
    elif isinstance(gold, Boolean):
        candidates.add("true" if gold.value else "false")

    if norm_answer and norm_answer in candidates:
        return Judgment(True, f"matched {norm_answer!r}", LOCAL_JUDGE_ID)
    return Judgment(False, f"no candidate matched {norm_answer!r}", LOCAL_JUDGE_ID)


# --- remote (LLM service) judge ------------------------------------------------

_VERDICT_RE = re.compile(r"VERDICT:\s*(yes|no)\b", re.IGNORECASE)


def judge_remote(
    question: str,
    gold: RdfTerm,
    answer: str,
    endpoint: GenerationEndpoint,
    gold_label: str | None = None,
    prefixes: dict[str, str] | None = None,
) -> Judgment:
    """Ask a text-generation service for a yes/no verdict.

    The gold binding is rendered as its term text plus the label when one
    is available. Unparseable or unreachable verdicts are conservatively
    judged incorrect and flagged in the justification.
    """
    gold_text = render_term(gold, prefixes)
    if gold_label:
        gold_text = f"{gold_text} ({gold_label})"
    prompt = JUDGE_PROMPT_V1.format(question=question, gold=gold_text, answer=answer)
    judge_id = f"remote:{endpoint.url}"
    try:
        reply = generate_text(endpoint, [{"role": "user", "content": prompt}], DecodingParams())
    except GenerationError as exc:
        return Judgment(False, f"unparseable: judge unreachable ({exc})", judge_id)
    match = _VERDICT_RE.search(reply)
    if match is None:
        return Judgment(False, "unparseable: no VERDICT marker in reply", judge_id)
    return Judgment(match.group(1).lower() == "yes", reply.strip(), judge_id)
