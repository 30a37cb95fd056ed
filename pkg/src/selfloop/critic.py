"""Trajectory triage: success detection, self-asking, hindsight relabeling.

Every collected trajectory lands in exactly one of four buckets. A "yes"
on direct detection keeps it as-is; a "no" triggers a focused state
query and a re-judgment; a still-failed trajectory is scanned for some
other object the episode happened to satisfy and relabeled to that
instruction; otherwise it is discarded with a logged reason.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from selfloop.actor import Trajectory
from selfloop.backends.base import ModelBackend
from selfloop.instructions import Instruction, extract_object, extract_verb
from selfloop.prompts import PromptTemplate, load_templates
from selfloop.records import DetectionResult
from selfloop.worldsim.oracle import VERB_ASPECT, aspect_satisfied
from selfloop.worldsim.state import Observation

logger = logging.getLogger(__name__)

__all__ = [
    "CriticSample",
    "EvaluationOutcome",
    "build_critic_dataset",
    "evaluate_trajectory",
    "extract_object",
    "extract_verb",
]

CRITIC_PROMPT_ID = "success_detection"

RESULTS = ("success_direct", "success_self_asked", "success_relabeled", "discarded")


@dataclass(frozen=True)
class EvaluationOutcome:
    trajectory_ref: str
    result: str
    detection: DetectionResult
    relabel: str | None = None
    new_instruction: Instruction | None = None

    def __post_init__(self) -> None:
        if self.result not in RESULTS:
            raise ValueError(f"unknown outcome result {self.result!r}")
        if self.result == "success_relabeled" and (self.relabel is None or self.new_instruction is None):
            raise ValueError("relabeled outcomes carry the new instruction")

    @property
    def kept(self) -> bool:
        return self.result != "discarded"


@dataclass(frozen=True)
class CriticSample:
    instruction: Instruction
    frame: Observation
    label: str = "yes"
    prompt_id: str = CRITIC_PROMPT_ID
    traj_ref: str = ""  # provenance; not part of the wire schema

    def __post_init__(self) -> None:
        # Only success-labeled tuples are ever stored for critic training.
        if self.label != "yes":
            raise ValueError("critic samples are success-labeled by construction")

    def memory_key(self) -> str:
        from selfloop.backends.tabular import memory_key

        return memory_key(self.instruction.raw, self.frame.canonical_key())

    def memory_value(self) -> dict:
        return {"kind": "label", "label": self.label}

    def to_record(self) -> dict:
        return {
            "schema_version": "critic-sample-v1",
            "instruction": self.instruction.to_dict(),
            "prompt_id": self.prompt_id,
            "frame": self.frame.to_dict(),
            "label": self.label,
        }

    @classmethod
    def from_record(cls, data: dict, traj_ref: str = "") -> "CriticSample":
        return cls(
            instruction=Instruction.from_dict(data["instruction"]),
            frame=Observation.from_dict(data["frame"]),
            label=data["label"],
            prompt_id=data.get("prompt_id", CRITIC_PROMPT_ID),
            traj_ref=traj_ref,
        )


def _baseline_satisfied_ids(baseline: Observation, verb: str) -> set[str]:
    """Objects already satisfying the verb before the episode started.

    Relabeling against these would credit the actor with pre-existing
    state, so they are excluded from the hindsight scan.
    """
    aspect = VERB_ASPECT[verb]
    satisfied = set()
    for entry in baseline.visible:
        if aspect in dict(entry.state) and aspect_satisfied(entry.state_value(aspect), aspect):
            satisfied.add(entry.obj_id)
    return satisfied


def evaluate_trajectory(
    critic_backend: ModelBackend,
    traj: Trajectory,
    oracle: Callable[[Observation, Instruction], bool] | None = None,
    *,
    templates: dict[str, PromptTemplate] | None = None,
    enable_self_ask: bool = True,
    enable_relabel: bool = True,
) -> EvaluationOutcome:
    """Run the four-way triage on one trajectory.

    The optional oracle is consulted only for audit logging; branching
    never depends on it, so outcomes are identical with or without it.
    """
    if traj.aborted:
        raise ValueError(f"trajectory {traj.traj_id!r} was aborted and cannot be triaged")
    templates = templates or load_templates()
    instruction = traj.instruction
    frame = traj.final_frame

    detection = critic_backend.critic_detect(instruction, templates[CRITIC_PROMPT_ID], frame)
    if detection.is_yes:
        return EvaluationOutcome(trajectory_ref=traj.traj_id, result="success_direct", detection=detection)

    if enable_self_ask:
        analysis = critic_backend.critic_state_analysis(
            extract_object(instruction), templates["self_ask_state"], frame
        )
        rejudged = critic_backend.critic_rejudge(analysis, instruction)
        if rejudged.is_yes:
            return EvaluationOutcome(trajectory_ref=traj.traj_id, result="success_self_asked", detection=rejudged)

    if enable_relabel:
        verb = extract_verb(instruction)
        exclude = {instruction.object} | _baseline_satisfied_ids(traj.baseline_frame, verb)
        found = critic_backend.critic_scan_other_objects(
            verb, templates["relabel_scan"], frame, exclude=tuple(sorted(exclude))
        )
        if found is not None:
            relabeled = critic_backend.critic_relabel(found, verb)
            if relabeled.object == instruction.object:
                raise ValueError("relabeling returned the original target")
            return EvaluationOutcome(
                trajectory_ref=traj.traj_id,
                result="success_relabeled",
                detection=DetectionResult(label="yes", reasoning=f"relabeled to {relabeled.raw}", provenance="relabeled"),
                relabel=found,
                new_instruction=relabeled,
            )

    if oracle is not None and oracle(frame, instruction):
        logger.info("discarding trajectory %s although the oracle marks it successful", traj.traj_id)
    else:
        logger.debug("discarding trajectory %s: no branch kept it", traj.traj_id)
    return EvaluationOutcome(
        trajectory_ref=traj.traj_id,
        result="discarded",
        detection=DetectionResult(label="no", reasoning="no triage branch kept this trajectory", provenance="direct"),
    )


def build_critic_dataset(outcomes: Sequence[EvaluationOutcome], trajectories: Iterable[Trajectory]) -> list[CriticSample]:
    """Success-labeled detection tuples, deduplicated by (instruction, frame)."""
    by_id = {traj.traj_id: traj for traj in trajectories}
    samples: list[CriticSample] = []
    seen: set[tuple[str, str]] = set()
    for outcome in outcomes:
        if not outcome.kept:
            continue
        traj = by_id.get(outcome.trajectory_ref)
        if traj is None:
            raise ValueError(f"outcome references unknown trajectory {outcome.trajectory_ref!r}")
        instruction = outcome.new_instruction if outcome.result == "success_relabeled" else traj.instruction
        key = (instruction.raw, traj.final_frame.canonical_key())
        if key in seen:
            continue
        seen.add(key)
        samples.append(CriticSample(instruction=instruction, frame=traj.final_frame, traj_ref=traj.traj_id))
    return samples
