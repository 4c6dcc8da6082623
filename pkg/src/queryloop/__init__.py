"""queryloop: RL environment, trainer, and evaluation harness for
iterative SPARQL query construction by agents."""

__version__ = "0.1.0"

from .client import EndpointConfig, RemoteExecutor, SparqlClient, cached_execute, execute_remote, normalize_query
from .curation import CurationVerdict, RawRecord, curate_dataset, curate_record, is_valid_rdf_term
from .endpoint import MiniEndpoint, ServerConfig, serve
from .environment import (
    EpisodeAborted,
    EpisodeConfig,
    EpisodeStats,
    count_errors,
    run_episode,
    step,
)
from .evaluation import (
    RunResult,
    accuracy,
    avg_turns,
    classify_failure,
    executability_rate,
    mcnemar,
    pass_at_k,
)
from .execution import EmbeddedExecutor, ExecutionOutcome, Failure, Success
from .grpo import Group, GrpoConfig, TrainingRecord, compute_advantages, export_records, grpo_objective
from .policies import BaselineQuestion, RemotePolicy, ScriptedPolicy, run_baseline
from .protocol import (
    AgentTurn,
    Answer,
    MalformedError,
    Observation,
    Query,
    RenderLimits,
    SpanMask,
    Trajectory,
    compute_loss_mask,
    is_structurally_valid,
    parse_agent_output,
    render_observation,
    serialize_state,
)
from .reward import Judgment, RewardBreakdown, RewardConfig, judge_local, judge_remote, score
from .store import TripleStore, load_ntriples
from .subset import SubsetQuery, execute_subset, lexical_precheck, parse_subset
from .terms import Boolean, Iri, Literal, RdfTerm
from .toyworld import SoftmaxTemplatePolicy, ToyWorld, generate_world, train_toy
