"""End-to-end orchestration: rollout, triage, dataset build, fine-tune, repeat.

One engine drives the full method, its ablations (no hindsight
relabeling; no critic correction at all; one shared model for both
roles) and the prompting/fine-tuning baselines, so runs stay comparable
under identical seeds. Every run emits a per-iteration metrics series
whose iteration 0 is always the raw, untrained backends.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from selfloop.actor import (
    ActorSample,
    DecideFn,
    Trajectory,
    augment_shuffle_action_list,
    build_actor_dataset,
    collect_trajectory,
    decide_direct,
)
from selfloop.backends import BackendConfig, ModelBackend, PromptContext, build_backend
from selfloop.critic import (
    CRITIC_PROMPT_ID,
    CriticSample,
    EvaluationOutcome,
    build_critic_dataset,
    evaluate_trajectory,
)
from selfloop.instructions import Instruction, parse_instruction
from selfloop.prompts import PromptTemplate, load_templates
from selfloop.records import ActionRecord, DetectionResult
from selfloop.seeding import derive_seed
from selfloop.worldsim.oracle import frame_success
from selfloop.worldsim.scene import SceneSpec, load_scene, scene_from_dict, validate_scene
from selfloop.worldsim.state import Observation

logger = logging.getLogger(__name__)

VARIANTS = ("selu", "selu_one", "wo_hr", "wo_critic", "dg", "sc", "self_refine", "lmsi")

# Judgments an oracle-style callable maps (frame, instruction) -> bool.
OracleFn = Callable[[Observation, Instruction], bool]

LMSI_VOTES = 3


class ConfigError(ValueError):
    """Invalid run configuration; ``errors`` lists field-level messages."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class RunConfig:
    scene: SceneSpec
    tasks: list[Instruction]
    actor_backend: BackendConfig
    critic_backend: BackendConfig
    horizon: int = 10
    trajectories_per_task: int = 1000
    iterations: int = 1
    seed: int = 0
    variant: str = "selu"
    augmentation: int = 3
    eval_episodes_per_task: int = 500
    sc_cot_count: int = 3
    refine_rounds: int = 3
    archive_trajectories: bool = True
    scene_path: str = ""
    # Recorded for the external fine-tuning service; nothing here trains.
    training_meta: dict = field(default_factory=lambda: {"lr_actor": 2e-5, "lr_critic": 2e-6})

    def to_dict(self) -> dict:
        return {
            "schema_version": "run-config-v1",
            "scene": self.scene.to_dict(),
            "scene_path": self.scene_path,
            "tasks": [task.raw for task in self.tasks],
            "actor_backend": self.actor_backend.to_dict(),
            "critic_backend": self.critic_backend.to_dict(),
            "horizon": self.horizon,
            "trajectories_per_task": self.trajectories_per_task,
            "iterations": self.iterations,
            "seed": self.seed,
            "variant": self.variant,
            "augmentation": self.augmentation,
            "eval_episodes_per_task": self.eval_episodes_per_task,
            "sc_cot_count": self.sc_cot_count,
            "refine_rounds": self.refine_rounds,
            "archive_trajectories": self.archive_trajectories,
            "training_meta": dict(self.training_meta),
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path | None = None) -> "RunConfig":
        if "scene" in data and isinstance(data["scene"], dict):
            scene = scene_from_dict(data["scene"])
        else:
            scene_path = Path(data.get("scene_path") or data.get("scene", ""))
            if base_dir is not None and not scene_path.is_absolute():
                scene_path = Path(base_dir) / scene_path
            if not scene_path.is_file():
                raise ConfigError([f"scene: file not found: {scene_path}"])
            scene = load_scene(scene_path)
        try:
            tasks = [parse_instruction(raw) for raw in data.get("tasks", [])]
        except ValueError as exc:
            raise ConfigError([f"tasks: {exc}"]) from exc
        config = cls(
            scene=scene,
            scene_path=str(data.get("scene_path", data.get("scene", "")) if not isinstance(data.get("scene"), dict) else data.get("scene_path", "")),
            tasks=tasks,
            actor_backend=BackendConfig.from_dict(data.get("actor_backend", {"kind": "scripted"})),
            critic_backend=BackendConfig.from_dict(data.get("critic_backend", {"kind": "scripted"})),
            horizon=int(data.get("horizon", 10)),
            trajectories_per_task=int(data.get("trajectories_per_task", 1000)),
            iterations=int(data.get("iterations", 1)),
            seed=int(data.get("seed", 0)),
            variant=str(data.get("variant", "selu")),
            augmentation=int(data.get("augmentation", 3)),
            eval_episodes_per_task=int(data.get("eval_episodes_per_task", 500)),
            sc_cot_count=int(data.get("sc_cot_count", 3)),
            refine_rounds=int(data.get("refine_rounds", 3)),
            archive_trajectories=bool(data.get("archive_trajectories", True)),
            training_meta=dict(data.get("training_meta", {"lr_actor": 2e-5, "lr_critic": 2e-6})),
        )
        resolve_backend_seeds(config)
        return config


def resolve_backend_seeds(config: RunConfig) -> None:
    """Derive backend seeds from the run seed when a config omits them.

    The single-model variant shares one seed so both roles resolve to
    the same backend instance.
    """
    if config.variant == "selu_one":
        shared = derive_seed(config.seed, "shared-backend")
        if config.actor_backend.seed == 0:
            config.actor_backend.seed = shared
        if config.critic_backend.seed == 0:
            config.critic_backend.seed = shared
        return
    if config.actor_backend.seed == 0:
        config.actor_backend.seed = derive_seed(config.seed, "actor-backend")
    if config.critic_backend.seed == 0:
        config.critic_backend.seed = derive_seed(config.seed, "critic-backend")


def validate_config(config: RunConfig) -> list[str]:
    errors: list[str] = []
    if config.variant not in VARIANTS:
        errors.append(f"variant: unknown variant {config.variant!r}")
    try:
        validate_scene(config.scene)
    except ValueError as exc:
        errors.append(f"scene: {exc}")
    if not config.tasks:
        errors.append("tasks: at least one task instruction is required")
    known = set(config.scene.object_ids())
    for task in config.tasks:
        if task.object not in known:
            errors.append(f"tasks: {task.raw!r} references unknown object {task.object!r}")
    if config.horizon < 1:
        errors.append("horizon: must be at least 1")
    elif config.horizon > config.scene.horizon:
        errors.append(f"horizon: exceeds the scene step budget ({config.scene.horizon})")
    if config.trajectories_per_task < 1:
        errors.append("trajectories_per_task: must be at least 1")
    if config.iterations < 0:
        errors.append("iterations: must be non-negative")
    if config.augmentation < 1:
        errors.append("augmentation: must be at least 1")
    if config.eval_episodes_per_task < 1:
        errors.append("eval_episodes_per_task: must be at least 1")
    if config.sc_cot_count < 1:
        errors.append("sc_cot_count: must be at least 1")
    if config.refine_rounds < 0:
        errors.append("refine_rounds: must be non-negative")
    for name, backend in (("actor_backend", config.actor_backend), ("critic_backend", config.critic_backend)):
        try:
            backend.validate()
        except ValueError as exc:
            errors.append(f"{name}: {exc}")
    if config.variant == "selu_one" and config.actor_backend.to_dict() != config.critic_backend.to_dict():
        errors.append("variant: selu_one requires actor_backend and critic_backend to be the same backend")
    return errors


@dataclass
class MetricsReport:
    iteration: int
    per_task_detection_accuracy: dict[str, float]
    per_task_success_rate: dict[str, float]
    counts: dict[str, int]
    dataset_sizes: dict[str, int]

    @property
    def detection_accuracy(self) -> float:
        values = list(self.per_task_detection_accuracy.values())
        return sum(values) / len(values)

    @property
    def task_success_rate(self) -> float:
        values = list(self.per_task_success_rate.values())
        return sum(values) / len(values)

    def to_record(self) -> dict:
        return {
            "schema_version": "metrics-v1",
            "iteration": self.iteration,
            "per_task_detection_accuracy": dict(sorted(self.per_task_detection_accuracy.items())),
            "detection_accuracy": self.detection_accuracy,
            "per_task_success_rate": dict(sorted(self.per_task_success_rate.items())),
            "task_success_rate": self.task_success_rate,
            "counts": dict(sorted(self.counts.items())),
            "dataset_sizes": dict(sorted(self.dataset_sizes.items())),
        }

    @classmethod
    def from_record(cls, data: dict) -> "MetricsReport":
        return cls(
            iteration=data["iteration"],
            per_task_detection_accuracy=dict(data["per_task_detection_accuracy"]),
            per_task_success_rate=dict(data["per_task_success_rate"]),
            counts=dict(data["counts"]),
            dataset_sizes=dict(data["dataset_sizes"]),
        )


@dataclass
class IterationData:
    iteration: int
    trajectories: list[Trajectory]
    outcomes: list[EvaluationOutcome]
    critic_samples: list[CriticSample]
    actor_samples: list[ActorSample]
    actor_traj_ids: tuple[str, ...]
    counts: dict[str, int]


@dataclass
class RunResult:
    config: RunConfig
    reports: list[MetricsReport]
    iterations: list[IterationData]
    actor_backend: ModelBackend
    critic_backend: ModelBackend

    def actor_dataset_traj_ids(self, iteration: int = 1) -> set[str]:
        for data in self.iterations:
            if data.iteration == iteration:
                return set(data.actor_traj_ids)
        return set()


@dataclass(frozen=True)
class EvalEpisode:
    instruction: Instruction
    seed: int


def build_eval_batch(config: RunConfig) -> list[EvalEpisode]:
    """Fixed evaluation episodes; seeds are disjoint from training streams."""
    episodes = []
    for task_index, task in enumerate(config.tasks):
        for episode_index in range(config.eval_episodes_per_task):
            episodes.append(
                EvalEpisode(instruction=task, seed=derive_seed(config.seed, "eval", task_index, episode_index))
            )
    return episodes


def compute_metrics(
    eval_batch: Sequence[EvalEpisode],
    critic_backend: ModelBackend,
    actor_backend: ModelBackend,
    oracle: OracleFn,
    *,
    scene: SceneSpec,
    horizon: int,
    templates: dict[str, PromptTemplate] | None = None,
    decide: DecideFn = decide_direct,
    iteration: int = 0,
    counts: dict[str, int] | None = None,
    dataset_sizes: dict[str, int] | None = None,
) -> MetricsReport:
    """Measure success-detection accuracy and task success on fresh episodes.

    Success is the oracle's verdict on the episode's final frame; the
    critic is scored against that same oracle, never consulted for it.
    """
    from selfloop.worldsim.scene import reset

    if not eval_batch:
        raise ValueError("empty evaluation batch")
    templates = templates or load_templates()
    success_hits: dict[str, list[bool]] = {}
    detect_hits: dict[str, list[bool]] = {}
    for index, episode in enumerate(eval_batch):
        state = reset(scene, episode.seed)
        traj = collect_trajectory(
            actor_backend,
            state,
            episode.instruction,
            horizon,
            traj_id=f"eval-{iteration:02d}-{index:05d}",
            templates=templates,
            decide=decide,
        )
        succeeded = (not traj.aborted) and oracle(traj.final_frame, episode.instruction)
        detection = critic_backend.critic_detect(episode.instruction, templates[CRITIC_PROMPT_ID], traj.final_frame)
        task = episode.instruction.raw
        success_hits.setdefault(task, []).append(succeeded)
        detect_hits.setdefault(task, []).append(detection.is_yes == succeeded)
    per_task_success = {task: _mean(flags) for task, flags in success_hits.items()}
    per_task_detect = {task: _mean(flags) for task, flags in detect_hits.items()}
    return MetricsReport(
        iteration=iteration,
        per_task_detection_accuracy=per_task_detect,
        per_task_success_rate=per_task_success,
        counts=counts or _zero_counts(),
        dataset_sizes=dataset_sizes or {"actor": 0, "actor_preaugment": 0, "critic": 0},
    )


def _mean(flags: Sequence[bool]) -> float:
    return sum(1 for flag in flags if flag) / len(flags)


def _zero_counts() -> dict[str, int]:
    return {"total": 0, "direct": 0, "self_asked": 0, "relabeled": 0, "discarded": 0, "aborted": 0}


def _tally(outcomes: Sequence[EvaluationOutcome], aborted: int) -> dict[str, int]:
    counts = _zero_counts()
    counts["aborted"] = aborted
    counts["total"] = len(outcomes)
    for outcome in outcomes:
        key = {
            "success_direct": "direct",
            "success_self_asked": "self_asked",
            "success_relabeled": "relabeled",
            "discarded": "discarded",
        }[outcome.result]
        counts[key] += 1
    if counts["direct"] + counts["self_asked"] + counts["relabeled"] + counts["discarded"] != counts["total"]:
        raise RuntimeError("triage conservation violated: branch counts do not sum to the total")
    return counts


def _make_backends(config: RunConfig) -> tuple[ModelBackend, ModelBackend]:
    context = PromptContext(agent=config.scene.agent_id, environment=config.scene.environment)
    if config.variant == "selu_one":
        shared = build_backend(config.actor_backend, role="both", context=context)
        return shared, shared
    actor = build_backend(config.actor_backend, role="actor", context=context)
    critic = build_backend(config.critic_backend, role="critic", context=context)
    return actor, critic


def run_experiment(config: RunConfig) -> RunResult:
    """Validate and dispatch a run to the engine matching its variant."""
    errors = validate_config(config)
    if errors:
        raise ConfigError(errors)
    if config.variant in ("selu", "selu_one", "wo_hr", "wo_critic", "dg"):
        return _run_improvement(config)
    if config.variant == "sc":
        return _run_prompt_baseline(config, _sc_decider(config))
    if config.variant == "self_refine":
        return _run_prompt_baseline(config, _refine_decider(config))
    return _run_lmsi(config)


def run_selu(config: RunConfig) -> RunResult:
    if config.variant not in ("selu", "dg"):
        raise ConfigError([f"variant: run_selu drives selu/dg runs, not {config.variant!r}"])
    return run_experiment(config)


def run_variant(config: RunConfig) -> RunResult:
    if config.variant not in ("selu_one", "wo_hr", "wo_critic"):
        raise ConfigError([f"variant: run_variant drives the ablations, not {config.variant!r}"])
    return run_experiment(config)


def run_baseline_sc(config: RunConfig) -> RunResult:
    if config.variant != "sc":
        raise ConfigError(["variant: run_baseline_sc requires variant=sc"])
    return run_experiment(config)


def run_baseline_self_refine(config: RunConfig) -> RunResult:
    if config.variant != "self_refine":
        raise ConfigError(["variant: run_baseline_self_refine requires variant=self_refine"])
    return run_experiment(config)


def run_baseline_lmsi(config: RunConfig) -> RunResult:
    if config.variant != "lmsi":
        raise ConfigError(["variant: run_baseline_lmsi requires variant=lmsi"])
    return run_experiment(config)


def _collect_batch(
    config: RunConfig,
    actor: ModelBackend,
    iteration: int,
    templates: dict[str, PromptTemplate],
) -> list[Trajectory]:
    trajectories: list[Trajectory] = []
    from selfloop.worldsim.scene import reset

    for task_index, task in enumerate(config.tasks):
        for episode_index in range(config.trajectories_per_task):
            env_seed = derive_seed(config.seed, "train", iteration, task_index, episode_index)
            state = reset(config.scene, env_seed)
            trajectories.append(
                collect_trajectory(
                    actor,
                    state,
                    task,
                    config.horizon,
                    traj_id=f"it{iteration:02d}-t{task_index:02d}-e{episode_index:05d}",
                    templates=templates,
                )
            )
    return trajectories


def _run_improvement(config: RunConfig) -> RunResult:
    templates = load_templates()
    actor, critic = _make_backends(config)
    eval_batch = build_eval_batch(config)
    enable_self_ask = config.variant != "wo_critic"
    enable_relabel = config.variant not in ("wo_hr", "wo_critic")
    tune_critic = config.variant != "wo_critic"
    iterations = 0 if config.variant == "dg" else config.iterations

    metrics = lambda it, counts=None, sizes=None: compute_metrics(  # noqa: E731
        eval_batch,
        critic,
        actor,
        frame_success,
        scene=config.scene,
        horizon=config.horizon,
        templates=templates,
        iteration=it,
        counts=counts,
        dataset_sizes=sizes,
    )
    reports = [metrics(0)]
    iteration_data: list[IterationData] = []
    for iteration in range(1, iterations + 1):
        trajectories = _collect_batch(config, actor, iteration, templates)
        triaged = [traj for traj in trajectories if not traj.aborted]
        outcomes = [
            evaluate_trajectory(
                critic,
                traj,
                frame_success,
                templates=templates,
                enable_self_ask=enable_self_ask,
                enable_relabel=enable_relabel,
            )
            for traj in triaged
        ]
        counts = _tally(outcomes, aborted=len(trajectories) - len(triaged))
        critic_samples = build_critic_dataset(outcomes, triaged)
        actor_base = build_actor_dataset(outcomes, triaged)
        actor_samples = augment_shuffle_action_list(
            actor_base, config.augmentation, derive_seed(config.seed, "augment", iteration)
        )
        if config.variant == "selu_one":
            actor.fine_tune(list(critic_samples) + list(actor_samples))
        else:
            if tune_critic:
                critic.fine_tune(critic_samples)
            actor.fine_tune(actor_samples)
        sizes = {"actor": len(actor_samples), "actor_preaugment": len(actor_base), "critic": len(critic_samples)}
        reports.append(metrics(iteration, counts, sizes))
        iteration_data.append(
            IterationData(
                iteration=iteration,
                trajectories=trajectories,
                outcomes=outcomes,
                critic_samples=critic_samples,
                actor_samples=actor_samples,
                actor_traj_ids=tuple(sorted({sample.traj_ref for sample in actor_base})),
                counts=counts,
            )
        )
        logger.info(
            "iteration %d: success %.3f, detection %.3f, counts %s",
            iteration,
            reports[-1].task_success_rate,
            reports[-1].detection_accuracy,
            counts,
        )
    return RunResult(config=config, reports=reports, iterations=iteration_data, actor_backend=actor, critic_backend=critic)


def _sc_decider(config: RunConfig) -> DecideFn:
    """Majority vote over prompt variants; variant i shuffles the action list."""

    def decide(backend, instruction, template, observation, state, step_index):
        votes = [
            backend.actor_plan(
                instruction, template, observation, state=state, step=step_index, action_list_order=variant
            )
            for variant in range(config.sc_cot_count)
        ]
        return _majority_action(votes)

    return decide


def _majority_action(votes: list[ActionRecord]) -> ActionRecord:
    counts: dict[tuple, int] = {}
    first_index: dict[tuple, int] = {}
    for index, vote in enumerate(votes):
        key = (vote.action, vote.target)
        counts[key] = counts.get(key, 0) + 1
        first_index.setdefault(key, index)
    winner = max(counts, key=lambda key: (counts[key], -first_index[key]))
    return votes[first_index[winner]]


def _refine_decider(config: RunConfig) -> DecideFn:
    """Reflect-and-revise; the round count includes the initial answer."""

    def decide(backend, instruction, template, observation, state, step_index):
        current = backend.actor_plan(instruction, template, observation, state=state, step=step_index)
        for _round in range(max(config.refine_rounds - 1, 0)):
            current = backend.actor_refine(
                instruction, template, observation, current, state=state, step=step_index
            )
        return current

    return decide


def _run_prompt_baseline(config: RunConfig, decide: DecideFn) -> RunResult:
    templates = load_templates()
    actor, critic = _make_backends(config)
    eval_batch = build_eval_batch(config)
    report = compute_metrics(
        eval_batch,
        critic,
        actor,
        frame_success,
        scene=config.scene,
        horizon=config.horizon,
        templates=templates,
        decide=decide,
        iteration=0,
    )
    return RunResult(config=config, reports=[report], iterations=[], actor_backend=actor, critic_backend=critic)


def _run_lmsi(config: RunConfig) -> RunResult:
    """Self-training from majority-voted labels: no self-asking, no
    relabeling, no critic fine-tuning."""
    templates = load_templates()
    actor, critic = _make_backends(config)
    eval_batch = build_eval_batch(config)
    metrics = lambda it, counts=None, sizes=None: compute_metrics(  # noqa: E731
        eval_batch,
        critic,
        actor,
        frame_success,
        scene=config.scene,
        horizon=config.horizon,
        templates=templates,
        iteration=it,
        counts=counts,
        dataset_sizes=sizes,
    )
    reports = [metrics(0)]
    trajectories = _collect_batch(config, actor, 1, templates)
    triaged = [traj for traj in trajectories if not traj.aborted]
    outcomes: list[EvaluationOutcome] = []
    for traj in triaged:
        votes = [
            critic.critic_detect(traj.instruction, templates[CRITIC_PROMPT_ID], traj.final_frame, variant=variant)
            for variant in range(LMSI_VOTES)
        ]
        yes_votes = sum(1 for vote in votes if vote.is_yes)
        if yes_votes * 2 > LMSI_VOTES:
            detection = DetectionResult(label="yes", reasoning=f"{yes_votes}/{LMSI_VOTES} votes", provenance="direct")
            outcomes.append(EvaluationOutcome(trajectory_ref=traj.traj_id, result="success_direct", detection=detection))
        else:
            detection = DetectionResult(label="no", reasoning=f"{yes_votes}/{LMSI_VOTES} votes", provenance="direct")
            outcomes.append(EvaluationOutcome(trajectory_ref=traj.traj_id, result="discarded", detection=detection))
    counts = _tally(outcomes, aborted=len(trajectories) - len(triaged))
    actor_base = build_actor_dataset(outcomes, triaged)
    actor_samples = augment_shuffle_action_list(actor_base, config.augmentation, derive_seed(config.seed, "augment", 1))
    actor.fine_tune(actor_samples)
    sizes = {"actor": len(actor_samples), "actor_preaugment": len(actor_base), "critic": 0}
    reports.append(metrics(1, counts, sizes))
    iteration_data = [
        IterationData(
            iteration=1,
            trajectories=trajectories,
            outcomes=outcomes,
            critic_samples=[],
            actor_samples=actor_samples,
            actor_traj_ids=tuple(sorted({sample.traj_ref for sample in actor_base})),
            counts=counts,
        )
    ]
    return RunResult(config=config, reports=reports, iterations=iteration_data, actor_backend=actor, critic_backend=critic)
