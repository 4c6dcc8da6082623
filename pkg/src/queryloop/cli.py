"""Operator entry point: curation, serving, episodes, toy training,
evaluation, and training-record export.

Configuration is layered (command-line flags > QUERYLOOP_* environment
variables > --config JSON file > built-in defaults) and every effective
setting is printed at startup. All randomness flows from the single
--seed / --world-seed flags, so seeded commands are bit-reproducible.
Exit codes: 0 success, 2 partial (transient transport failures; rerun
possible), 1 fatal. See MANUAL.md for the full flag and schema reference.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
from typing import Any, Callable, Sequence

from .client import EndpointConfig, RemoteExecutor
from .curation import LCQUAD_FIELD_MAP, curate_dataset, read_raw_records
from .endpoint import ServerConfig, serve
from .environment import (
    EpisodeConfig,
    episode_record,
    read_episode_log,
    run_episode,
    trajectory_from_record,
    write_episode_log,
)
from .evaluation import (
    RunResult,
    discordant_counts,
    mcnemar,
    mcnemar_pvalue,
    metrics_report,
    read_results,
    render_metrics_table,
    write_report,
)
from .execution import EmbeddedExecutor, Executor
from .grpo import Group, GrpoConfig, export_records
from .policies import ScriptedPolicy
from .prompts import SYSTEM_PROMPT_V1
from .protocol import RenderLimits, is_structurally_valid
from .reward import RewardBreakdown, RewardConfig, judge_local, score
from .store import load_ntriples_file
from .terms import (
    Boolean,
    DEFAULT_PREFIXES,
    Iri,
    Literal,
    RdfTerm,
    expand_qname,
    render_term,
)
from .toyworld import (
    SoftmaxTemplatePolicy,
    TOY_PREFIXES,
    generate_world,
    initial_theta,
    train_toy,
    training_summary,
    write_curves,
)

ENV_PREFIX = "QUERYLOOP_"


class CliError(Exception):
    """Fatal command error (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors are fatal, not "partial"
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(config, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return config


def _resolve(args: argparse.Namespace, config: dict, name: str, default: Any, cast: Callable) -> Any:
    """Layered setting resolution: flag > environment > config file > default."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    env = os.environ.get(ENV_PREFIX + name.upper())
    if env is not None:
        return cast(env)
    if name in config:
        return cast(config[name])
    return default


def _print_settings(command: str, settings: dict) -> None:
    print(f"config: {json.dumps({'command': command, **settings}, sort_keys=True)}")


def _parse_term_arg(text: str) -> RdfTerm:
    """Parse a --gold style term: QName, <iri>, true/false, number, or literal."""
    text = text.strip()
    if text.startswith("<") and text.endswith(">"):
        return Iri(text[1:-1])
    if text.lower() in ("true", "false"):
        return Boolean(text.lower() == "true")
    expanded = expand_qname(text, DEFAULT_PREFIXES | TOY_PREFIXES)
    if expanded is not None:
        return Iri(expanded)
    if "://" in text:
        return Iri(text)
    return Literal(text)


def _make_executor(store_path: str | None, endpoint_url: str | None, timeout: float) -> Executor:
    if (store_path is None) == (endpoint_url is None):
        raise CliError("exactly one of --store or --endpoint is required")
    if store_path is not None:
        try:
            return EmbeddedExecutor(load_ntriples_file(store_path))
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load store {store_path}: {exc}") from exc
    assert endpoint_url is not None
    cfg = EndpointConfig(url=endpoint_url, timeout=timeout)
    return RemoteExecutor(cfg, prefixes=DEFAULT_PREFIXES | TOY_PREFIXES)


# --- curate -------------------------------------------------------------------


def cmd_curate(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    max_workers = _resolve(args, config, "max_workers", 8, int)
    timeout = _resolve(args, config, "timeout", 3.0, float)
    _print_settings(
        "curate",
        {
            "input": args.input,
            "out": args.out,
            "store": args.store,
            "endpoint": args.endpoint,
            "field_map": args.field_map,
            "max_workers": max_workers,
            "timeout": timeout,
        },
    )
    field_map = None
    if args.field_map == "lcquad":
        field_map = LCQUAD_FIELD_MAP
    elif args.field_map not in (None, "none"):
        field_map = json.loads(args.field_map)
    try:
        records = read_raw_records(args.input, field_map=field_map)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    executor = _make_executor(args.store, args.endpoint, timeout)
    summary = curate_dataset(records, executor, args.out, max_workers=max_workers)
    print(json.dumps(summary.to_json(), sort_keys=True))
    if summary.transport_failures:
        manifest = args.out + ".rerun"
        with open(manifest, "w", encoding="utf-8") as fh:
            fh.write("\n".join(summary.transport_failures) + "\n")
        print(f"transport failures: {len(summary.transport_failures)} (ids in {manifest})", file=sys.stderr)
        return 2
    return 0


# --- serve --------------------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    bind = _resolve(args, config, "bind", "127.0.0.1:0", str)
    host, _, port_text = bind.partition(":")
    fail_pattern = tuple(int(s) for s in args.fail_pattern.split(",")) if args.fail_pattern else ()
    _print_settings(
        "serve",
        {"store": args.store, "bind": bind, "latency": args.latency or 0.0, "fail_pattern": list(fail_pattern)},
    )
    try:
        store = load_ntriples_file(args.store)
        server_cfg = ServerConfig(
            host=host or "127.0.0.1",
            port=int(port_text or 0),
            artificial_latency=args.latency or 0.0,
            fail_pattern=fail_pattern,
        )
        endpoint = serve(store, server_cfg)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot serve: {exc}") from exc
    print(f"serving {len(store)} triples at {endpoint.url}", flush=True)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    stop.wait()
    endpoint.stop()
    print("stopped")
    return 0


# --- episode --------------------------------------------------------------------


def _make_policy(spec: str, seed: int | None, require_think: bool):
    kind, _, value = spec.partition(":")
    if kind == "scripted":
        try:
            with open(value, encoding="utf-8") as fh:
                script = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot load script {value}: {exc}") from exc
        if not isinstance(script, list):
            raise CliError("a script file must hold a JSON list of raw generations")
        return ScriptedPolicy(script)
    if kind == "toy":
        policy = SoftmaxTemplatePolicy(theta=initial_theta(), require_think=require_think)
        policy.seed(int(value or 0) if seed is None else seed)
        return policy
    raise CliError(f"unknown policy spec {spec!r} (expected scripted:FILE or toy:SEED)")


def cmd_episode(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    t_max = _resolve(args, config, "t_max", 10, int)
    timeout = _resolve(args, config, "timeout", 3.0, float)
    seed = _resolve(args, config, "seed", None, int)
    require_think = not args.no_require_think
    _print_settings(
        "episode",
        {
            "question": args.question,
            "policy": args.policy,
            "store": args.store,
            "endpoint": args.endpoint,
            "seed": seed,
            "t_max": t_max,
            "require_think": require_think,
            "gold": args.gold,
        },
    )
    executor = _make_executor(args.store, args.endpoint, timeout)
    policy = _make_policy(args.policy, seed, require_think)
    cfg = EpisodeConfig(
        executor=executor,
        t_max=t_max,
        limits=RenderLimits(),
        require_think=require_think,
        system_prompt=SYSTEM_PROMPT_V1,
    )
    traj, stats = run_episode(policy, args.question, cfg, rng_seed=seed, prompt_id=args.question_id)
    print(f"question: {traj.question}")
    for i, s in enumerate(traj.steps, start=1):
        if s.turn.think:
            print(f"[turn {i}] think: {s.turn.think}")
        kind = "query" if s.observation is not None else "answer"
        print(f"[turn {i}] {kind}: {s.turn.action.text}")
        if s.observation is not None:
            label = "result" if s.observation.kind == "result" else "error"
            print(f"[turn {i}] {label} ({s.observation.row_count} rows): {s.observation.payload!r}")
    assert traj.termination is not None
    print(
        f"termination: {traj.termination.kind}  turns={stats.turns} "
        f"n_err={stats.n_err} n_exec_success={stats.n_exec_success}"
    )
    breakdown: RewardBreakdown | None = None
    if not is_structurally_valid(traj):
        breakdown = score(traj, stats, None, RewardConfig())
    elif args.gold is not None:
        gold = _parse_term_arg(args.gold)
        judgment = judge_local(traj.final_answer or "", gold, tuple(args.alias or ()))
        print(f"judgment: correct={judgment.correct} ({judgment.justification})")
        breakdown = score(traj, stats, judgment, RewardConfig())
    else:
        print("reward: not scored (pass --gold to judge a valid trajectory)")
    if breakdown is not None:
        print(
            "reward: "
            + json.dumps(
                {
                    "structural_valid": breakdown.structural_valid,
                    "r_ans": breakdown.r_ans,
                    "cost": breakdown.cost,
                    "total": breakdown.total,
                },
                sort_keys=True,
            )
        )
    if args.log:
        write_episode_log([episode_record(traj, stats, breakdown, system_id="episode-cli")], args.log)
    return 0


# --- train-toy -------------------------------------------------------------------


def cmd_train_toy(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    settings = {
        "world_seed": _resolve(args, config, "world_seed", 7, int),
        "seed": _resolve(args, config, "seed", 0, int),
        "steps": _resolve(args, config, "steps", 200, int),
        "group_size": _resolve(args, config, "group_size", 16, int),
        "batch_questions": _resolve(args, config, "batch_questions", 4, int),
        "lr": _resolve(args, config, "lr", 0.05, float),
        "entities": _resolve(args, config, "entities", 30, int),
        "tasks": _resolve(args, config, "tasks", 40, int),
        "t_max": _resolve(args, config, "t_max", 10, int),
        "normalize_by_std": not args.no_normalize_std,
        "require_think": not args.no_require_think,
        "curves": args.curves,
        "summary": args.summary,
    }
    _print_settings("train-toy", settings)
    world = generate_world(settings["world_seed"], settings["entities"], settings["tasks"])
    grpo_cfg = GrpoConfig(
        group_size=settings["group_size"],
        normalize_by_std=settings["normalize_by_std"],
        batch_questions=settings["batch_questions"],
    )
    result = train_toy(
        world,
        grpo_cfg,
        steps=settings["steps"],
        seed=settings["seed"],
        lr=settings["lr"],
        batch_questions=settings["batch_questions"],
        t_max=settings["t_max"],
        require_think=settings["require_think"],
    )
    summary = training_summary(result) if result.curves else {"steps": 0}
    print(json.dumps(summary, sort_keys=True))
    if args.curves:
        write_curves(result.curves, args.curves)
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(summary, sort_keys=True) + "\n")
    return 0


# --- evaluate ---------------------------------------------------------------------


def cmd_evaluate(args: argparse.Namespace) -> int:
    _print_settings(
        "evaluate",
        {"logs": args.log or [], "mcnemar": args.mcnemar, "report": args.report},
    )
    if not args.log and args.mcnemar is None:
        raise CliError("provide at least one --log or --mcnemar counts")
    systems: dict[str, list[RunResult]] = {}
    for path in args.log or []:
        try:
            results = read_results(path)
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"cannot read log {path}: {exc}") from exc
        for result in results:
            systems.setdefault(result.system_id or path, []).append(result)
    rows = metrics_report(systems)
    if rows:
        print(render_metrics_table(rows))
    counts: tuple[int, int] | None = None
    if args.mcnemar is not None:
        counts = (args.mcnemar[0], args.mcnemar[1])
    elif len(systems) == 2:
        first, second = list(systems.values())
        counts = discordant_counts(first, second)
    if counts is not None:
        statistic = mcnemar(*counts)
        if statistic is None:
            print(f"mcnemar: discordant={counts} chi2=undefined (no discordant pairs)")
        else:
            print(
                f"mcnemar: discordant={counts} chi2={statistic:.2f} p={mcnemar_pvalue(statistic):.3g}"
            )
    if args.report:
        write_report(rows, args.report)
    return 0


# --- export-records -----------------------------------------------------------------


def cmd_export_records(args: argparse.Namespace) -> int:
    _print_settings(
        "export-records",
        {"log": args.log, "out": args.out, "normalize_by_std": not args.no_normalize_std},
    )
    try:
        records = read_episode_log(args.log)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read log {args.log}: {exc}") from exc
    by_prompt: dict[str, list[dict]] = {}
    for record in records:
        by_prompt.setdefault(record.get("prompt_id", ""), []).append(record)
    groups = []
    skipped = 0
    for prompt_id, group_records in by_prompt.items():
        if len(group_records) < 2:
            skipped += 1
            continue
        members = []
        for record in group_records:
            if "reward" not in record:
                raise CliError(f"record for prompt {prompt_id!r} has no reward fields")
            traj, _ = trajectory_from_record(record)
            reward = record["reward"]
            members.append(
                (
                    traj,
                    RewardBreakdown(
                        structural_valid=reward["structural_valid"],
                        r_ans=reward["r_ans"],
                        cost=reward["cost"],
                        total=reward["total"],
                    ),
                )
            )
        groups.append(Group(prompt_id=prompt_id, members=tuple(members)))
    grpo_cfg = GrpoConfig(normalize_by_std=not args.no_normalize_std)
    count = export_records(groups, args.out, grpo_cfg, system_prompt=args.system_prompt or SYSTEM_PROMPT_V1)
    print(f"wrote {count} training records from {len(groups)} groups ({skipped} singleton groups skipped)")
    return 0


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="queryloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="re-execute gold queries and keep single-binding records")
    p.add_argument("--input", required=True, help="raw records (JSONL)")
    p.add_argument("--out", required=True, help="curated output (JSONL)")
    p.add_argument("--store", help="embedded store (N-Triples subset file)")
    p.add_argument("--endpoint", help="remote SPARQL endpoint URL")
    p.add_argument("--field-map", help="'lcquad', 'none', or a JSON field mapping")
    p.add_argument("--max-workers", dest="max_workers", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--config")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("serve", help="serve a store over the SPARQL HTTP protocol")
    p.add_argument("--store", required=True)
    p.add_argument("--bind", help="HOST:PORT (default 127.0.0.1:0)")
    p.add_argument("--latency", type=float, help="artificial response latency, seconds")
    p.add_argument("--fail-pattern", dest="fail_pattern", help="scripted status codes, e.g. 503,503,200")
    p.add_argument("--config")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("episode", help="run one episode and print the transcript + reward")
    p.add_argument("--question", required=True)
    p.add_argument("--question-id", dest="question_id", default="")
    p.add_argument("--policy", required=True, help="scripted:FILE or toy:SEED")
    p.add_argument("--store", help="embedded store file")
    p.add_argument("--endpoint", help="remote SPARQL endpoint URL")
    p.add_argument("--seed", type=int)
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--no-require-think", action="store_true")
    p.add_argument("--gold", help="gold answer term for judging (QName, <iri>, literal, true/false)")
    p.add_argument("--alias", action="append", help="extra accepted answer surface (repeatable)")
    p.add_argument("--log", help="write the episode record to this JSONL file")
    p.add_argument("--config")
    p.set_defaults(func=cmd_episode)

    p = sub.add_parser("train-toy", help="run the desk-scale GRPO training loop")
    p.add_argument("--world-seed", dest="world_seed", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--group-size", dest="group_size", type=int)
    p.add_argument("--batch-questions", dest="batch_questions", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--entities", type=int)
    p.add_argument("--tasks", type=int)
    p.add_argument("--t-max", dest="t_max", type=int)
    p.add_argument("--no-normalize-std", action="store_true")
    p.add_argument("--no-require-think", action="store_true")
    p.add_argument("--curves", help="write per-step curves to this CSV file")
    p.add_argument("--summary", help="write the summary to this JSONL file")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("evaluate", help="compute metrics over episode/eval logs")
    p.add_argument("--log", action="append", help="episode or eval-result log (repeatable)")
    p.add_argument("--mcnemar", nargs=2, type=int, metavar=("N01", "N10"))
    p.add_argument("--report", help="write metric rows to this JSONL file")
    p.add_argument("--config")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-records", help="export masked GRPO training records")
    p.add_argument("--log", required=True, help="episode log with reward fields")
    p.add_argument("--out", required=True)
    p.add_argument("--system-prompt", dest="system_prompt", help="override the serialized system prompt")
    p.add_argument("--no-normalize-std", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_export_records)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
