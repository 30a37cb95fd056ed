"""Scripted backend: a deterministic oracle corrupted by configured noise.

This is the verification workhorse: it knows the true world, so its
behavior is exactly tunable. Every stochastic choice is a keyed draw
from the backend seed, which makes whole runs replayable bit for bit.
"""

from __future__ import annotations

import logging

from selfloop.backends.base import (
    ASPECT_TOKENS,
    SELF_ASK_ERROR_FACTOR,
    VERB_SATISFIED_TOKEN,
    BackendConfig,
    BackendError,
    ModelBackend,
)
from selfloop.instructions import Instruction, make_instruction
from selfloop.prompts import PromptTemplate
from selfloop.records import ActionRecord, DetectionResult, StateAnalysis
from selfloop.seeding import keyed_rng, unit_draw
from selfloop.worldsim.engine import NAVIGATION_ACTIONS, OBJECT_ACTIONS, legal_actions
from selfloop.worldsim.oracle import (
    VERB_ASPECT,
    aspect_satisfied,
    frame_success,
    plan_oracle_action,
)
from selfloop.worldsim.state import Observation, WorldState

logger = logging.getLogger(__name__)

# Error-rate lookups for state analysis are keyed by the aspect's primary verb.
_ASPECT_VERB = {"opened": "open", "broken": "break", "held_by": "pick up", "occupied_by": "sit"}


class ScriptedBackend(ModelBackend):
    kind = "scripted"

    def __init__(self, config: BackendConfig):
        config.validate()
        self.config = config
        self.seed = config.seed
        self.errors = config.error_model

    # -- actor -----------------------------------------------------------

    def actor_plan(
        self,
        instruction: Instruction,
        template: PromptTemplate,
        observation: Observation,
        *,
        state: WorldState | None = None,
        step: int = 0,
        action_list_order: int = 0,
    ) -> ActionRecord:
        if observation.view != "first_person":
            raise ValueError("the actor plans from first-person observations")
        if state is None:
            raise BackendError("scripted actor needs the world state as its oracle", kind="contract")
        misact = self.errors.misact(instruction.verb)
        draw = unit_draw(self.seed, "misact", state.rng_seed, step, instruction.raw, action_list_order)
        if draw < misact:
            return self._random_legal(observation, state.rng_seed, step, instruction, action_list_order)
        return plan_oracle_action(state, instruction)

    def _random_legal(
        self,
        observation: Observation,
        episode_seed: int,
        step: int,
        instruction: Instruction,
        action_list_order: int,
    ) -> ActionRecord:
        choices = legal_actions(observation)
        rng = keyed_rng(self.seed, "misact-pick", episode_seed, step, instruction.raw, action_list_order)
        picked = choices[rng.randrange(len(choices))]
        return ActionRecord(action=picked.action, target=picked.target, reasoning="exploratory action")

    def actor_refine(
        self,
        instruction: Instruction,
        template: PromptTemplate,
        observation: Observation,
        previous: ActionRecord,
        *,
        state: WorldState | None = None,
        step: int = 0,
    ) -> ActionRecord:
        """Keep legal previous answers; repair illegal ones in place."""
        if _is_legal(previous, observation):
            return previous
        return self.actor_plan(instruction, template, observation, state=state, step=step)

    # -- critic ----------------------------------------------------------

    def critic_detect(
        self,
        instruction: Instruction,
        template: PromptTemplate,
        frame: Observation,
        *,
        variant: int = 0,
    ) -> DetectionResult:
        if frame.view != "third_person":
            raise ValueError("success detection reads third-person frames")
        truth = frame_success(frame, instruction)
        fnr, fpr = self.errors.detect_rates(instruction.verb)
        draw = unit_draw(self.seed, "detect", instruction.raw, frame.canonical_key(), variant)
        flipped = draw < (fnr if truth else fpr)
        label = ("no" if truth else "yes") if flipped else ("yes" if truth else "no")
        reasoning = f"the {instruction.object} looks {'done' if label == 'yes' else 'not done'}"
        return DetectionResult(label=label, reasoning=reasoning, provenance="direct")

    def critic_state_analysis(
        self,
        object_name: str,
        template: PromptTemplate,
        frame: Observation,
    ) -> StateAnalysis:
        entry = frame.entry(object_name)
        if entry is None:
            return StateAnalysis(object=object_name, state_text="not present")
        tokens: list[str] = []
        for aspect, value in entry.state:
            satisfied = aspect_satisfied(value, aspect)
            fnr, fpr = self.errors.detect_rates(_ASPECT_VERB[aspect])
            rate = SELF_ASK_ERROR_FACTOR * (fnr if satisfied else fpr)
            draw = unit_draw(self.seed, "state", object_name, aspect, frame.canonical_key())
            if draw < rate:
                satisfied = not satisfied
            done_token, undone_token = ASPECT_TOKENS[aspect]
            tokens.append(done_token if satisfied else undone_token)
        return StateAnalysis(object=object_name, state_text=", ".join(tokens))

    def critic_rejudge(self, analysis: StateAnalysis, instruction: Instruction) -> DetectionResult:
        token = VERB_SATISFIED_TOKEN[instruction.verb]
        parts = [part.strip() for part in analysis.state_text.split(",")]
        label = "yes" if token in parts else "no"
        reasoning = f"state of the {analysis.object}: {analysis.state_text}"
        return DetectionResult(label=label, reasoning=reasoning, provenance="self_asked")

    def critic_scan_other_objects(
        self,
        verb: str,
        template: PromptTemplate,
        frame: Observation,
        *,
        exclude: tuple[str, ...] = (),
    ) -> str | None:
        aspect = VERB_ASPECT[verb]
        for entry in sorted(frame.visible, key=lambda item: item.obj_id):
            if entry.obj_id in exclude:
                continue
            if aspect in dict(entry.state) and aspect_satisfied(entry.state_value(aspect), aspect):
                return entry.obj_id
        return None

    def critic_relabel(self, relabel_object: str, verb: str) -> Instruction:
        if not relabel_object:
            raise ValueError("relabeling requires an object name")
        return make_instruction(verb, relabel_object)

    # -- learning --------------------------------------------------------

    def fine_tune(self, dataset) -> "ScriptedBackend":
        logger.warning("scripted backend does not learn; ignoring %d samples", len(dataset))
        return self


def _is_legal(action: ActionRecord, observation: Observation) -> bool:
    if action.action in NAVIGATION_ACTIONS:
        return action.target is None
    if action.action not in OBJECT_ACTIONS:
        return False
    if not action.target:
        return False
    entry = observation.entry(action.target)
    if entry is None:
        return False
    aspect_keys = {aspect for aspect, _value in entry.state}
    required = OBJECT_ACTIONS[action.action]
    by_affordance = {"pickupable": "held_by", "openable": "opened", "breakable": "broken", "sittable": "occupied_by"}
    return by_affordance[required] in aspect_keys
