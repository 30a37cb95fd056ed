"""selfloop: an actor-critic self-learning harness for embodied instruction
following, with a deterministic symbolic household environment and
pluggable model backends."""

from selfloop.actor import (
    ActorSample,
    Trajectory,
    TrajectoryStep,
    augment_shuffle_action_list,
    build_actor_dataset,
    collect_trajectory,
)
from selfloop.backends import (
    BackendConfig,
    BackendError,
    ErrorModel,
    ModelBackend,
    PromptContext,
    RemoteBackend,
    ScriptedBackend,
    TabularBackend,
    build_backend,
)
from selfloop.critic import (
    CriticSample,
    EvaluationOutcome,
    build_critic_dataset,
    evaluate_trajectory,
    extract_object,
    extract_verb,
)
from selfloop.instructions import Instruction, InstructionError, make_instruction, parse_instruction
from selfloop.loop import (
    ConfigError,
    EvalEpisode,
    MetricsReport,
    RunConfig,
    RunResult,
    build_eval_batch,
    compute_metrics,
    run_baseline_lmsi,
    run_baseline_sc,
    run_baseline_self_refine,
    run_experiment,
    run_selu,
    run_variant,
    validate_config,
)
from selfloop.prompts import PromptTemplate, load_templates, render_prompt, verb_to_adjective
from selfloop.records import ActionRecord, DetectionResult, StateAnalysis, StepOutcome

__version__ = "0.1.0"

__all__ = [
    "ActionRecord",
    "ActorSample",
    "BackendConfig",
    "BackendError",
    "ConfigError",
    "CriticSample",
    "DetectionResult",
    "ErrorModel",
    "EvalEpisode",
    "EvaluationOutcome",
    "Instruction",
    "InstructionError",
    "MetricsReport",
    "ModelBackend",
    "PromptContext",
    "PromptTemplate",
    "RemoteBackend",
    "RunConfig",
    "RunResult",
    "ScriptedBackend",
    "StateAnalysis",
    "StepOutcome",
    "TabularBackend",
    "Trajectory",
    "TrajectoryStep",
    "augment_shuffle_action_list",
    "build_actor_dataset",
    "build_backend",
    "build_critic_dataset",
    "build_eval_batch",
    "collect_trajectory",
    "compute_metrics",
    "evaluate_trajectory",
    "extract_object",
    "extract_verb",
    "load_templates",
    "make_instruction",
    "parse_instruction",
    "render_prompt",
    "run_baseline_lmsi",
    "run_baseline_sc",
    "run_baseline_self_refine",
    "run_experiment",
    "run_selu",
    "run_variant",
    "validate_config",
    "verb_to_adjective",
]
