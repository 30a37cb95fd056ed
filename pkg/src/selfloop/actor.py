"""Trajectory collection and actor fine-tuning dataset construction."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Sequence

from selfloop.backends.base import BackendError, ModelBackend
from selfloop.instructions import Instruction
from selfloop.prompts import PromptTemplate, action_list_for_order, load_templates
from selfloop.records import ActionRecord, StepOutcome
from selfloop.seeding import keyed_rng
from selfloop.worldsim.engine import ACTION_NAMES, ProtocolError, observe, step
from selfloop.worldsim.state import FIRST_PERSON, THIRD_PERSON, Observation, WorldState

logger = logging.getLogger(__name__)

ACTOR_PROMPT_ID = "actor_interaction"

# A decision strategy maps (backend, instruction, template, observation,
# state, step index) to an action; baselines swap in voting or reflection.
DecideFn = Callable[[ModelBackend, Instruction, PromptTemplate, Observation, WorldState, int], ActionRecord]


def decide_direct(
    backend: ModelBackend,
    instruction: Instruction,
    template: PromptTemplate,
    observation: Observation,
    state: WorldState,
    step_index: int,
) -> ActionRecord:
    return backend.actor_plan(instruction, template, observation, state=state, step=step_index)


@dataclass(frozen=True)
class TrajectoryStep:
    observation: Observation  # first-person, taken before acting
    action: ActionRecord
    outcome: StepOutcome

    def to_dict(self) -> dict:
        return {
            "observation": self.observation.to_dict(),
            "action": self.action.to_dict(),
            "outcome": self.outcome.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrajectoryStep":
        return cls(
            observation=Observation.from_dict(data["observation"]),
            action=ActionRecord.from_dict(data["action"]),
            outcome=StepOutcome.from_dict(data["outcome"]),
        )


@dataclass(frozen=True)
class Trajectory:
    traj_id: str
    instruction: Instruction
    seed: int
    scene_name: str
    steps: tuple[TrajectoryStep, ...]
    baseline_frame: Observation  # third-person, before the first step
    final_frame: Observation  # third-person, after the last step
    aborted: bool = False
    abort_reason: str = ""

    def to_record(self) -> dict:
        return {
            "schema_version": "trajectory-v1",
            "traj_id": self.traj_id,
            "instruction": self.instruction.to_dict(),
            "seed": self.seed,
            "scene_name": self.scene_name,
            "steps": [item.to_dict() for item in self.steps],
            "baseline_frame": self.baseline_frame.to_dict(),
            "final_frame": self.final_frame.to_dict(),
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
        }

    @classmethod
    def from_record(cls, data: dict) -> "Trajectory":
        return cls(
            traj_id=data["traj_id"],
            instruction=Instruction.from_dict(data["instruction"]),
            seed=data["seed"],
            scene_name=data["scene_name"],
            steps=tuple(TrajectoryStep.from_dict(d) for d in data["steps"]),
            baseline_frame=Observation.from_dict(data["baseline_frame"]),
            final_frame=Observation.from_dict(data["final_frame"]),
            aborted=data.get("aborted", False),
            abort_reason=data.get("abort_reason", ""),
        )


def collect_trajectory(
    actor_backend: ModelBackend,
    env_state: WorldState,
    instruction: Instruction,
    steps: int,
    *,
    traj_id: str = "traj",
    templates: dict[str, PromptTemplate] | None = None,
    decide: DecideFn = decide_direct,
) -> Trajectory:
    """Roll one episode: observe, plan, act, for exactly ``steps`` steps.

    Episodes always run to the step budget; there is no early-stop
    action. Model parse/contract failures abort the trajectory, which is
    returned flagged rather than dropped; connectivity failures
    propagate (the whole run cannot proceed without the endpoint).
    """
    if steps < 1:
        raise ValueError("step budget must be at least 1")
    if env_state.step_count != 0:
        raise ValueError("trajectory collection starts from a freshly reset state")
    templates = templates or load_templates()
    template = templates[ACTOR_PROMPT_ID]
    baseline = observe(env_state, THIRD_PERSON)
    state = env_state
    recorded: list[TrajectoryStep] = []
    aborted = False
    abort_reason = ""
    for step_index in range(1, steps + 1):
        observation = observe(state, FIRST_PERSON)
        try:
            action = decide(actor_backend, instruction, template, observation, state, step_index)
            state, outcome = step(state, action)
        except BackendError as exc:
            if exc.kind == "connectivity":
                raise
            aborted = True
            abort_reason = f"backend failure at step {step_index}: {exc}"
            logger.warning("trajectory %s aborted: %s", traj_id, abort_reason)
            break
        except ProtocolError as exc:
            aborted = True
            abort_reason = f"protocol failure at step {step_index}: {exc}"
            logger.warning("trajectory %s aborted: %s", traj_id, abort_reason)
            break
        recorded.append(TrajectoryStep(observation=observation, action=action, outcome=outcome))
    return Trajectory(
        traj_id=traj_id,
        instruction=instruction,
        seed=env_state.rng_seed,
        scene_name=env_state.scene_name,
        steps=tuple(recorded),
        baseline_frame=baseline,
        final_frame=observe(state, THIRD_PERSON),
        aborted=aborted,
        abort_reason=abort_reason,
    )


@dataclass(frozen=True)
class ActorSample:
    instruction: Instruction
    observation: Observation
    action: ActionRecord
    action_list_order: int = 0
    prompt_id: str = ACTOR_PROMPT_ID
    traj_ref: str = ""  # provenance; not part of the wire schema

    def memory_key(self) -> str:
        from selfloop.backends.tabular import memory_key

        return memory_key(self.instruction.raw, self.observation.canonical_key())

    def memory_value(self) -> dict:
        return {"kind": "action", "action": self.action.action, "target": self.action.target}

    def to_record(self) -> dict:
        return {
            "schema_version": "actor-sample-v1",
            "instruction": self.instruction.to_dict(),
            "prompt_id": self.prompt_id,
            "observation": self.observation.to_dict(),
            "action": self.action.to_dict(),
            "action_list_order": self.action_list_order,
        }

    @classmethod
    def from_record(cls, data: dict, traj_ref: str = "") -> "ActorSample":
        return cls(
            instruction=Instruction.from_dict(data["instruction"]),
            observation=Observation.from_dict(data["observation"]),
            action=ActionRecord.from_dict(data["action"]),
            action_list_order=data.get("action_list_order", 0),
            prompt_id=data.get("prompt_id", ACTOR_PROMPT_ID),
            traj_ref=traj_ref,
        )


def build_actor_dataset(outcomes: Sequence, trajectories: Iterable[Trajectory]) -> list[ActorSample]:
    """One sample per step of every trajectory the critic kept.

    Relabeled trajectories contribute every step under the new
    instruction; discarded trajectories contribute nothing.
    """
    by_id = {traj.traj_id: traj for traj in trajectories}
    samples: list[ActorSample] = []
    for outcome in outcomes:
        if outcome.result == "discarded":
            continue
        traj = by_id.get(outcome.trajectory_ref)
        if traj is None:
            raise ValueError(f"outcome references unknown trajectory {outcome.trajectory_ref!r}")
        instruction = outcome.new_instruction if outcome.result == "success_relabeled" else traj.instruction
        for item in traj.steps:
            samples.append(
                ActorSample(
                    instruction=instruction,
                    observation=item.observation,
                    action=item.action,
                    action_list_order=0,
                    traj_ref=traj.traj_id,
                )
            )
    return samples


def augment_shuffle_action_list(
    samples: Sequence[ActorSample],
    permutations_per_sample: int,
    seed: int,
) -> list[ActorSample]:
    """Expand each sample into copies differing only in action-list order.

    The recorded action and observation never change; copies get fresh
    distinct shuffle indices, so output size is input size times the
    permutation count (capped at the number of distinct orderings).
    """
    if permutations_per_sample < 1:
        raise ValueError("permutations_per_sample must be at least 1")
    limit = math.factorial(len(ACTION_NAMES))
    if permutations_per_sample > limit:
        logger.warning(
            "requested %d permutations but only %d distinct orderings exist; capping",
            permutations_per_sample,
            limit,
        )
        permutations_per_sample = limit
    augmented: list[ActorSample] = []
    for index, sample in enumerate(samples):
        group = [sample]
        seen = {action_list_for_order(sample.action_list_order)}
        rng = keyed_rng(seed, "augment", index)
        while len(group) < permutations_per_sample:
            order = rng.randrange(1, 1 << 30)
            ordering = action_list_for_order(order)
            if ordering in seen:
                continue
            seen.add(ordering)
            group.append(replace(sample, action_list_order=order))
        augmented.extend(group)
    return augmented
