"""Deterministic symbolic household environment.

Stands in for the game engines behind embodied-agent research: a grid
world with affordance-typed objects, first-person observations for the
acting model and third-person detection frames for the judging model.
"""

from selfloop.worldsim.engine import (
    ACTION_NAMES,
    NAVIGATION_ACTIONS,
    OBJECT_ACTIONS,
    ProtocolError,
    is_visible,
    legal_actions,
    observe,
    step,
    visible_objects,
)
from selfloop.worldsim.oracle import (
    PADDING_ACTION,
    VERB_ASPECT,
    frame_success,
    ground_truth_success,
    plan_oracle_action,
    task_achievable,
)
from selfloop.worldsim.scene import (
    SceneObject,
    SceneSpec,
    SceneValidationError,
    load_scene,
    reset,
    save_scene,
    scene_from_dict,
    validate_scene,
)
from selfloop.worldsim.state import (
    AFFORDANCES,
    FACINGS,
    FIRST_PERSON,
    THIRD_PERSON,
    VISIBILITY_RANGE,
    AgentPose,
    Observation,
    StateInvariantError,
    VisibleEntry,
    WorldObject,
    WorldState,
)

__all__ = [
    "ACTION_NAMES",
    "AFFORDANCES",
    "AgentPose",
    "FACINGS",
    "FIRST_PERSON",
    "NAVIGATION_ACTIONS",
    "OBJECT_ACTIONS",
    "Observation",
    "PADDING_ACTION",
    "ProtocolError",
    "SceneObject",
    "SceneSpec",
    "SceneValidationError",
    "StateInvariantError",
    "THIRD_PERSON",
    "VERB_ASPECT",
    "VISIBILITY_RANGE",
    "VisibleEntry",
    "WorldObject",
    "WorldState",
    "frame_success",
    "ground_truth_success",
    "is_visible",
    "legal_actions",
    "load_scene",
    "observe",
    "plan_oracle_action",
    "reset",
    "save_scene",
    "scene_from_dict",
    "step",
    "task_achievable",
    "validate_scene",
    "visible_objects",
]
