"""Action semantics and observations for the household gridworld.

Object-directed actions succeed only when the target is currently
visible (Chebyshev distance <= 3 inside the 90-degree facing cone) and
affordance-compatible; anything else fails softly, mutating nothing but
the step counter. Episodes run to a fixed horizon with no early stop.
"""

from __future__ import annotations

from dataclasses import replace

from selfloop.records import ActionRecord, StepOutcome
from selfloop.worldsim.state import (
    FACING_VECTORS,
    FACINGS,
    FIRST_PERSON,
    THIRD_PERSON,
    VISIBILITY_RANGE,
    AgentPose,
    Observation,
    VisibleEntry,
    WorldObject,
    WorldState,
)

NAVIGATION_ACTIONS = ("MoveAhead", "RotateLeft", "RotateRight")

# Object action -> affordance it requires on the target.
OBJECT_ACTIONS = {
    "PickupObject": "pickupable",
    "GrabObject": "pickupable",
    "OpenObject": "openable",
    "BreakObject": "breakable",
    "SitObject": "sittable",
}

# Canonical rendering order for prompts and action-list shuffles.
ACTION_NAMES = NAVIGATION_ACTIONS + tuple(OBJECT_ACTIONS)

# Aspect key -> object action that manipulates it.
ASPECT_ACTIONS = {
    "opened": ("OpenObject",),
    "broken": ("BreakObject",),
    "held_by": ("PickupObject", "GrabObject"),
    "occupied_by": ("SitObject",),
}


class ProtocolError(ValueError):
    """A malformed action record; distinct from an in-world failure."""


def chebyshev(a: tuple[int, int], b: tuple[int, int]) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


def in_view_cone(agent: AgentPose, cell: tuple[int, int]) -> bool:
    """True when the cell sits inside the 90-degree cone of facing.

    Forward component must dominate the lateral one (diagonals count as
    inside); the agent's own cell passes.
    """
    fx, fy = FACING_VECTORS[agent.facing]
    dx, dy = cell[0] - agent.cell[0], cell[1] - agent.cell[1]
    forward = dx * fx + dy * fy
    lateral = abs(fx * dy - fy * dx)
    return forward >= lateral


def is_visible(state: WorldState, obj: WorldObject) -> bool:
    if obj.held_by == state.agent_id:
        return True  # held objects track the holder
    if obj.cell is None:
        return False
    if chebyshev(obj.cell, state.agent.cell) > VISIBILITY_RANGE:
        return False
    return in_view_cone(state.agent, obj.cell)


def visible_objects(state: WorldState) -> list[WorldObject]:
    return [obj for obj in state.objects if is_visible(state, obj)]


def step(state: WorldState, action: ActionRecord) -> tuple[WorldState, StepOutcome]:
    """Apply one action; returns the successor state and its outcome."""
    if state.step_count >= state.horizon:
        raise ValueError("episode horizon exhausted; reset the world before stepping")
    if action.action in NAVIGATION_ACTIONS:
        if action.target is not None:
            raise ProtocolError(f"navigation action {action.action} must not carry a target")
        new_state, outcome = _navigate(state, action.action)
    elif action.action in OBJECT_ACTIONS:
        if not action.target:
            raise ProtocolError(f"object action {action.action} requires a target")
        new_state, outcome = _interact(state, action.action, action.target)
    else:
        raise ProtocolError(f"unknown action name: {action.action!r}")
    return replace(new_state, step_count=state.step_count + 1), outcome


def _navigate(state: WorldState, name: str) -> tuple[WorldState, StepOutcome]:
    agent = state.agent
    if name == "RotateLeft":
        idx = (FACINGS.index(agent.facing) - 1) % 4
        return replace(state, agent=replace(agent, facing=FACINGS[idx])), StepOutcome(ok=True)
    if name == "RotateRight":
        idx = (FACINGS.index(agent.facing) + 1) % 4
        return replace(state, agent=replace(agent, facing=FACINGS[idx])), StepOutcome(ok=True)
    # MoveAhead: stand up first when sitting, then advance unless blocked.
    stood = False
    new_state = state
    if agent.sitting_on is not None:
        seat = state.object(agent.sitting_on)
        new_state = state.with_objects([replace(seat, occupied_by=None)])
        agent = replace(agent, sitting_on=None)
        stood = True
    fx, fy = FACING_VECTORS[agent.facing]
    target = (agent.cell[0] + fx, agent.cell[1] + fy)
    if 0 <= target[0] < state.grid[0] and 0 <= target[1] < state.grid[1]:
        return replace(new_state, agent=replace(agent, cell=target)), StepOutcome(ok=True)
    if stood:
        return replace(new_state, agent=agent), StepOutcome(ok=True, reason="stood up; move blocked")
    return state, StepOutcome(ok=False, reason="blocked")


def _interact(state: WorldState, name: str, target_id: str) -> tuple[WorldState, StepOutcome]:
    if not state.has_object(target_id):
        return state, StepOutcome(ok=False, reason=f"{target_id} not visible")
    target = state.object(target_id)
    if not is_visible(state, target):
        return state, StepOutcome(ok=False, reason=f"{target_id} not visible")
    affordance = OBJECT_ACTIONS[name]
    if affordance not in target.affordances:
        return state, StepOutcome(ok=False, reason=f"{target_id} is not {affordance}")
    agent = state.agent
    if name in ("PickupObject", "GrabObject"):
        if target.held_by == state.agent_id:
            return state, StepOutcome(ok=False, reason=f"{target_id} already held")
        if agent.holding is not None:
            return state, StepOutcome(ok=False, reason="hands full")
        new_state = state.with_objects([replace(target, held_by=state.agent_id, cell=None)])
        return replace(new_state, agent=replace(agent, holding=target_id)), StepOutcome(ok=True)
    if name == "OpenObject":
        if target.opened:
            return state, StepOutcome(ok=False, reason=f"{target_id} already opened")
        return state.with_objects([replace(target, opened=True)]), StepOutcome(ok=True)
    if name == "BreakObject":
        if target.broken:
            return state, StepOutcome(ok=False, reason=f"{target_id} already broken")
        return state.with_objects([replace(target, broken=True)]), StepOutcome(ok=True)
    # SitObject: the agent moves onto the seat.
    if agent.sitting_on is not None:
        return state, StepOutcome(ok=False, reason="already sitting")
    if target.occupied_by is not None:
        return state, StepOutcome(ok=False, reason=f"{target_id} occupied")
    new_state = state.with_objects([replace(target, occupied_by=state.agent_id)])
    new_agent = replace(agent, cell=target.cell, sitting_on=target_id)
    return replace(new_state, agent=new_agent), StepOutcome(ok=True)


def observe(state: WorldState, view: str) -> Observation:
    """Render the state as seen from the requested perspective.

    Third-person frames list every object plus the full agent pose (the
    critic's detection frame); first-person lists only objects passing
    the visibility predicate and exposes the facing alone.
    """
    if view == THIRD_PERSON:
        entries = [_entry(state, obj, relative=False) for obj in state.objects]
        entries.sort(key=lambda item: item.obj_id)
        return Observation(view=view, facing=state.agent.facing, visible=tuple(entries), agent=state.agent)
    if view == FIRST_PERSON:
        entries = [_entry(state, obj, relative=True) for obj in visible_objects(state)]
        entries.sort(key=lambda item: (item.distance, item.obj_id))
        return Observation(view=view, facing=state.agent.facing, visible=tuple(entries), agent=None)
    raise ValueError(f"unknown view: {view!r}")


def _entry(state: WorldState, obj: WorldObject, relative: bool) -> VisibleEntry:
    agent = state.agent
    if obj.held_by == state.agent_id:
        direction, distance, cell = "held", 0, None
    else:
        assert obj.cell is not None
        dx, dy = obj.cell[0] - agent.cell[0], obj.cell[1] - agent.cell[1]
        distance = max(abs(dx), abs(dy))
        direction = _relative_direction(agent.facing, dx, dy) if relative else _compass(dx, dy)
        cell = None if relative else obj.cell
    return VisibleEntry(
        obj_id=obj.obj_id,
        kind=obj.kind,
        state=tuple(sorted(obj.state_dict().items())),
        direction=direction,
        distance=distance,
        cell=cell,
    )


def _relative_direction(facing: str, dx: int, dy: int) -> str:
    if dx == 0 and dy == 0:
        return "here"
    fx, fy = FACING_VECTORS[facing]
    forward = dx * fx + dy * fy
    lateral = fx * dy - fy * dx  # positive = to the agent's right
    main = "ahead" if forward > 0 else "behind" if forward < 0 else ""
    side = "right" if lateral > 0 else "left" if lateral < 0 else ""
    return "-".join(part for part in (main, side) if part)


def _compass(dx: int, dy: int) -> str:
    if dx == 0 and dy == 0:
        return "here"
    ns = "north" if dy < 0 else "south" if dy > 0 else ""
    ew = "east" if dx > 0 else "west" if dx < 0 else ""
    return ns + ew


def legal_actions(observation: Observation) -> list[ActionRecord]:
    """Every action executable without in-world failure risk at protocol level.

    Navigation is always legal; object actions are legal for visible,
    affordance-compatible targets (they may still fail softly, e.g.
    opening an already open cabinet).
    """
    actions = [ActionRecord(action=name) for name in NAVIGATION_ACTIONS]
    for entry in observation.visible:
        for aspect, _value in entry.state:
            for name in ASPECT_ACTIONS[aspect]:
                actions.append(ActionRecord(action=name, target=entry.obj_id))
    return actions
