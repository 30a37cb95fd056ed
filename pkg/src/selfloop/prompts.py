"""Prompt templates for the acting and judging models.

Six templates cover the whole protocol: one actor prompt and five critic
prompts (detection, the two self-asking stages, the two relabeling
stages). Bodies can be overridden from a text asset directory; rendering
is plain named-placeholder substitution and must leave nothing unresolved.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

from selfloop.instructions import VERB_TO_ADJECTIVE, InstructionError
from selfloop.seeding import keyed_rng
from selfloop.worldsim.engine import ACTION_NAMES
from selfloop.worldsim.state import Observation

TEMPLATE_IDS = (
    "actor_interaction",
    "success_detection",
    "self_ask_state",
    "self_ask_judge",
    "relabel_scan",
    "relabel_instruct",
)

_DEFAULT_BODIES = {
    "actor_interaction": (
        "This is the current observation from a {agent} in a {environment} environment. "
        "Now the {agent} needs to finish the task {instruction}, you can only choose the "
        "following action to interact with the environment, which are {action_list}. "
        "If you choose PickupObject, GrabObject, OpenObject, BreakObject, or SitObject, "
        "you should give a specific object name. Now the objects you can interact with "
        "are {visible_objs}. What's your next action to implement the command to "
        "{instruction}? You should output your action and the reasoning. "
        "The output format should be:\n\nAction:...\nObject:...\nReasoning:..."
    ),
    "success_detection": (
        "The image shows a third-person view from the {agent}'s perspective in a "
        "{environment} environment. Please check whether the {object} in the image is "
        "{verb_adj} or not? You should output yes or no, and the reasoning. "
        "The output format should be:\n\nResult:...\nReasoning:..."
    ),
    "self_ask_state": (
        "The image shows a third-person view from the {agent}'s perspective in a "
        "{environment} environment. Please check the state of the {object} in the image. "
        "You should output the state and the reasoning. "
        "The output format should be:\n\nState:...\nReasoning:..."
    ),
    "self_ask_judge": (
        "The image shows a third-person view from the {agent}'s perspective in a "
        "{environment} environment. The {object} in the observation is in {state} state, "
        "please determine whether the {instruction} has been completed or not. You should "
        "output yes or no, and the reasoning. "
        "The output format should be:\n\nResult:...\nReasoning:..."
    ),
    "relabel_scan": (
        "The image shows a third-person view from the {agent}'s perspective in a "
        "{environment} environment. Please see the image carefully. Determine whether "
        "there is any object that is {verb_adj} by the {agent}? You should output the "
        "object name and the reasoning. "
        "The output format should be:\n\nObject:...\nReasoning:..."
    ),
    "relabel_instruct": (
        "The image shows a third-person view from the {agent}'s perspective in a "
        "{environment} environment. The {object} in the observation is {verb_adj}, you "
        "should give a new instruction based on it. The original instruction is "
        "{instruction}, what's the new instruction? "
        "The output format should be:\n\nNew instruction:...\nReasoning:..."
    ),
}


class PromptError(ValueError):
    """Raised when a template cannot be rendered or loaded."""


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str

    def placeholders(self) -> set[str]:
        return {
            field
            for _text, field, _spec, _conv in string.Formatter().parse(self.body)
            if field
        }


def default_templates() -> dict[str, PromptTemplate]:
    return {tid: PromptTemplate(template_id=tid, body=body) for tid, body in _DEFAULT_BODIES.items()}


def load_templates(asset_dir: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Built-in templates, overridden by ``<id>.txt`` files when present."""
    templates = default_templates()
    if asset_dir is None:
        return templates
    root = Path(asset_dir)
    if not root.is_dir():
        raise PromptError(f"prompt asset directory not found: {root}")
    for tid in TEMPLATE_IDS:
        override = root / f"{tid}.txt"
        if override.exists():
            templates[tid] = PromptTemplate(template_id=tid, body=override.read_text(encoding="utf-8").rstrip("\n"))
    return templates


def render_prompt(template: PromptTemplate, bindings: dict) -> str:
    """Substitute bindings into the template body.

    Extra bindings are ignored; a missing one raises a PromptError naming
    the unresolved placeholder.
    """
    missing = sorted(template.placeholders() - set(bindings))
    if missing:
        raise PromptError(f"{missing[0]} unbound in template {template.template_id!r}")
    return template.body.format(**{key: str(value) for key, value in bindings.items()})


def verb_to_adjective(verb: str) -> str:
    """Map a task verb to the participle used in critic prompts."""
    try:
        return VERB_TO_ADJECTIVE[verb]
    except KeyError:
        raise InstructionError(f"unsupported verb: {verb!r}") from None


def action_list_for_order(order: int) -> tuple[str, ...]:
    """The action-list permutation identified by a shuffle index.

    Index 0 is the canonical order; any other index derives a fixed
    shuffle from the index alone, so datasets can record just the index
    and every reader reconstructs the same prompt rendering.
    """
    if order == 0:
        return ACTION_NAMES
    names = list(ACTION_NAMES)
    keyed_rng("action-list-order", order).shuffle(names)
    return tuple(names)


def render_action_list(action_names: tuple[str, ...] | list[str]) -> str:
    return ", ".join(action_names)


def render_visible_objects(observation: Observation) -> str:
    names = [entry.obj_id for entry in observation.visible]
    return ", ".join(names) if names else "nothing"


def describe_observation(observation: Observation) -> str:
    """Plain-text stand-in for the rendered image sent to remote models."""
    parts: list[str] = []
    if observation.agent is not None:
        pose = observation.agent
        stance = f"agent at {pose.cell} facing {pose.facing}"
        if pose.holding:
            stance += f", holding {pose.holding}"
        if pose.sitting_on:
            stance += f", sitting on {pose.sitting_on}"
        parts.append(stance)
    else:
        parts.append(f"facing {observation.facing}")
    for entry in observation.visible:
        bits = [f"{entry.obj_id} ({entry.kind})"]
        if entry.cell is not None:
            bits.append(f"at {tuple(entry.cell)}")
        else:
            bits.append(f"{entry.direction}, distance {entry.distance}")
        for aspect, value in entry.state:
            bits.append(_aspect_phrase(aspect, value))
        parts.append(" ".join(bits))
    return "; ".join(parts)


def _aspect_phrase(aspect: str, value) -> str:
    if aspect == "opened":
        return "open" if value else "closed"
    if aspect == "broken":
        return "broken" if value else "intact"
    if aspect == "held_by":
        return f"held by {value}" if value else "not held"
    return f"occupied by {value}" if value else "unoccupied"
