"""Ground-truth predicates and a privileged greedy planner.

These are evaluation plumbing: the self-learning loop itself never
branches on them, but metrics need an exact success oracle and the
scripted model backend needs an optimal action to corrupt with noise.
"""

from __future__ import annotations

from selfloop.instructions import SUPPORTED_VERBS, VERB_TO_ACTION, Instruction
from selfloop.records import ActionRecord
from selfloop.worldsim.engine import is_visible
from selfloop.worldsim.state import FACINGS, Observation, WorldState

# Aspect of the target's state each verb must satisfy.
VERB_ASPECT = {
    "pick up": "held_by",
    "grab": "held_by",
    "open": "opened",
    "break": "broken",
    "sit": "occupied_by",
}

# Padding emitted once a task is complete (or unachievable): rotating in
# place can never undo holding, opened, broken or sitting.
PADDING_ACTION = ActionRecord(action="RotateLeft", reasoning="task settled; idle rotation")


def ground_truth_success(state: WorldState, instruction: Instruction) -> bool:
    """Exact per-verb completion predicate over the true world state."""
    if instruction.verb not in SUPPORTED_VERBS:
        raise ValueError(f"unsupported verb: {instruction.verb!r}")
    if not state.has_object(instruction.object):
        raise ValueError(f"instruction references object absent from scene: {instruction.object!r}")
    target = state.object(instruction.object)
    if instruction.verb in ("pick up", "grab"):
        return state.agent.holding == instruction.object
    if instruction.verb == "open":
        return target.opened
    if instruction.verb == "break":
        return target.broken
    return state.agent.sitting_on == instruction.object


def frame_success(frame: Observation, instruction: Instruction) -> bool:
    """The same predicate read off a third-person detection frame.

    A frame canonically encodes object states and the agent pose, so the
    predicate is derivable from the frame alone; an absent object can
    never witness success.
    """
    if frame.view != "third_person":
        raise ValueError("success is judged on third-person frames")
    entry = frame.entry(instruction.object)
    if entry is None:
        return False
    aspect = VERB_ASPECT[instruction.verb]
    value = entry.state_value(aspect)
    if aspect in ("held_by", "occupied_by"):
        return value is not None
    return bool(value)


def aspect_satisfied(entry_state_value, aspect: str) -> bool:
    if aspect in ("held_by", "occupied_by"):
        return entry_state_value is not None
    return bool(entry_state_value)


def task_achievable(state: WorldState, instruction: Instruction) -> bool:
    if not state.has_object(instruction.object):
        return False
    if instruction.verb in ("pick up", "grab"):
        # No drop action exists, so full hands are terminal for pickup tasks.
        return state.agent.holding in (None, instruction.object)
    return True


def plan_oracle_action(state: WorldState, instruction: Instruction) -> ActionRecord:
    """Greedy navigate-then-interact step toward completing the instruction.

    Order of play: pad once the task is complete or unachievable; stand
    up when a different seat blocks sitting; interact when the target is
    visible; otherwise rotate toward the target and walk.
    """
    if ground_truth_success(state, instruction) or not task_achievable(state, instruction):
        return PADDING_ACTION
    target = state.object(instruction.object)
    agent = state.agent
    if instruction.verb == "sit" and agent.sitting_on is not None:
        return ActionRecord(action="MoveAhead", reasoning="stand up before sitting elsewhere")
    if is_visible(state, target):
        return ActionRecord(
            action=VERB_TO_ACTION[instruction.verb],
            target=instruction.object,
            reasoning=f"{instruction.object} is visible; executing the task action",
        )
    assert target.cell is not None  # held targets were handled above
    return _navigate_toward(agent.facing, agent.cell, target.cell)


def _navigate_toward(facing: str, origin: tuple[int, int], goal: tuple[int, int]) -> ActionRecord:
    dx, dy = goal[0] - origin[0], goal[1] - origin[1]
    candidates: list[tuple[int, str]] = []
    if dx:
        candidates.append((abs(dx), "east" if dx > 0 else "west"))
    if dy:
        candidates.append((abs(dy), "south" if dy > 0 else "north"))
    # Largest remaining component first; axis order breaks ties.
    candidates.sort(key=lambda item: (-item[0], FACINGS.index(item[1])))
    headings = [name for _weight, name in candidates]
    if facing in headings:
        return ActionRecord(action="MoveAhead", reasoning="walking toward the target")
    desired = headings[0]
    turn = (FACINGS.index(desired) - FACINGS.index(facing)) % 4
    action = "RotateLeft" if turn == 3 else "RotateRight"
    return ActionRecord(action=action, reasoning=f"turning {desired} toward the target")
