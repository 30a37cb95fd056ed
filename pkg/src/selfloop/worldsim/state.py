"""Immutable world state for the symbolic household environment.

States are plain frozen dataclasses; stepping the world produces a new
state, so episodes can run concurrently on independent values. Every
type serializes to a canonical dict for golden tests and hashing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

from selfloop.canonical import canonical_json, content_hash

AFFORDANCES = ("openable", "breakable", "pickupable", "sittable")

FACINGS = ("north", "east", "south", "west")

# Grid vectors, row/column style: north decreases y.
FACING_VECTORS = {
    "north": (0, -1),
    "east": (1, 0),
    "south": (0, 1),
    "west": (-1, 0),
}

FIRST_PERSON = "first_person"
THIRD_PERSON = "third_person"

# How far (Chebyshev cells) the agent can see inside its facing cone.
VISIBILITY_RANGE = 3


class StateInvariantError(ValueError):
    """An object or state value violates its structural invariants."""


@dataclass(frozen=True)
class WorldObject:
    obj_id: str
    kind: str
    cell: tuple[int, int] | None
    affordances: frozenset[str]
    opened: bool = False
    broken: bool = False
    held_by: str | None = None
    occupied_by: str | None = None

    def validate(self) -> None:
        for name in self.affordances:
            if name not in AFFORDANCES:
                raise StateInvariantError(f"object {self.obj_id!r}: unknown affordance {name!r}")
        if self.opened and "openable" not in self.affordances:
            raise StateInvariantError(f"object {self.obj_id!r}: opened but not openable")
        if self.broken and "breakable" not in self.affordances:
            raise StateInvariantError(f"object {self.obj_id!r}: broken but not breakable")
        if self.held_by is not None and "pickupable" not in self.affordances:
            raise StateInvariantError(f"object {self.obj_id!r}: held but not pickupable")
        if self.occupied_by is not None and "sittable" not in self.affordances:
            raise StateInvariantError(f"object {self.obj_id!r}: occupied but not sittable")
        if (self.held_by is None) == (self.cell is None):
            raise StateInvariantError(
                f"object {self.obj_id!r}: held objects track the holder and carry no cell"
            )

    def state_dict(self) -> dict:
        """Observable state, one key per supported affordance aspect."""
        state: dict = {}
        if "openable" in self.affordances:
            state["opened"] = self.opened
        if "breakable" in self.affordances:
            state["broken"] = self.broken
        if "pickupable" in self.affordances:
            state["held_by"] = self.held_by
        if "sittable" in self.affordances:
            state["occupied_by"] = self.occupied_by
        return state

    def to_dict(self) -> dict:
        return {
            "id": self.obj_id,
            "kind": self.kind,
            "cell": list(self.cell) if self.cell is not None else None,
            "affordances": sorted(self.affordances),
            "state": self.state_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WorldObject":
        state = data.get("state", {})
        return cls(
            obj_id=data["id"],
            kind=data["kind"],
            cell=tuple(data["cell"]) if data.get("cell") is not None else None,
            affordances=frozenset(data.get("affordances", ())),
            opened=bool(state.get("opened", False)),
            broken=bool(state.get("broken", False)),
            held_by=state.get("held_by"),
            occupied_by=state.get("occupied_by"),
        )


@dataclass(frozen=True)
class AgentPose:
    cell: tuple[int, int]
    facing: str
    sitting_on: str | None = None
    holding: str | None = None

    def validate(self) -> None:
        if self.facing not in FACINGS:
            raise StateInvariantError(f"unknown facing {self.facing!r}")

    def to_dict(self) -> dict:
        return {
            "cell": list(self.cell),
            "facing": self.facing,
            "sitting_on": self.sitting_on,
            "holding": self.holding,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AgentPose":
        return cls(
            cell=tuple(data["cell"]),
            facing=data["facing"],
            sitting_on=data.get("sitting_on"),
            holding=data.get("holding"),
        )


@dataclass(frozen=True)
class WorldState:
    scene_name: str
    environment: str
    agent_id: str
    grid: tuple[int, int]
    objects: tuple[WorldObject, ...]  # sorted by id
    agent: AgentPose
    step_count: int = 0
    horizon: int = 10
    rng_seed: int = 0

    def object(self, obj_id: str) -> WorldObject:
        for obj in self.objects:
            if obj.obj_id == obj_id:
                return obj
        raise KeyError(obj_id)

    def has_object(self, obj_id: str) -> bool:
        return any(obj.obj_id == obj_id for obj in self.objects)

    def with_objects(self, updated: Iterable[WorldObject]) -> "WorldState":
        by_id = {obj.obj_id: obj for obj in self.objects}
        for obj in updated:
            by_id[obj.obj_id] = obj
        return replace(self, objects=tuple(sorted(by_id.values(), key=lambda o: o.obj_id)))

    def validate(self) -> None:
        seen: set[str] = set()
        for obj in self.objects:
            if obj.obj_id in seen:
                raise StateInvariantError(f"duplicate object id {obj.obj_id!r}")
            seen.add(obj.obj_id)
            obj.validate()
        self.agent.validate()
        if self.step_count > self.horizon:
            raise StateInvariantError("step_count exceeds the configured horizon")
        # holding / held_by and sitting_on / occupied_by must cross-reference.
        held = [o.obj_id for o in self.objects if o.held_by == self.agent_id]
        if self.agent.holding is not None and held != [self.agent.holding]:
            raise StateInvariantError("agent.holding does not cross-reference held_by")
        if self.agent.holding is None and held:
            raise StateInvariantError(f"object {held[0]!r} held by agent but agent holds nothing")
        occupied = [o.obj_id for o in self.objects if o.occupied_by == self.agent_id]
        if self.agent.sitting_on is not None and occupied != [self.agent.sitting_on]:
            raise StateInvariantError("agent.sitting_on does not cross-reference occupied_by")
        if self.agent.sitting_on is None and occupied:
            raise StateInvariantError(f"object {occupied[0]!r} occupied but agent sits on nothing")

    def to_dict(self) -> dict:
        return {
            "scene_name": self.scene_name,
            "environment": self.environment,
            "agent_id": self.agent_id,
            "grid": list(self.grid),
            "objects": [obj.to_dict() for obj in self.objects],
            "agent": self.agent.to_dict(),
            "step_count": self.step_count,
            "horizon": self.horizon,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WorldState":
        return cls(
            scene_name=data["scene_name"],
            environment=data["environment"],
            agent_id=data["agent_id"],
            grid=tuple(data["grid"]),
            objects=tuple(sorted((WorldObject.from_dict(d) for d in data["objects"]), key=lambda o: o.obj_id)),
            agent=AgentPose.from_dict(data["agent"]),
            step_count=data["step_count"],
            horizon=data["horizon"],
            rng_seed=data["rng_seed"],
        )

    def canonical(self) -> str:
        return canonical_json(self.to_dict())


@dataclass(frozen=True)
class VisibleEntry:
    obj_id: str
    kind: str
    state: tuple[tuple[str, object], ...]  # sorted (aspect, value) pairs
    direction: str
    distance: int
    cell: tuple[int, int] | None = None  # third-person frames only

    def state_value(self, aspect: str):
        for key, value in self.state:
            if key == aspect:
                return value
        return None

    def to_dict(self) -> dict:
        return {
            "id": self.obj_id,
            "kind": self.kind,
            "state": dict(self.state),
            "direction": self.direction,
            "distance": self.distance,
            "cell": list(self.cell) if self.cell is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "VisibleEntry":
        return cls(
            obj_id=data["id"],
            kind=data["kind"],
            state=tuple(sorted(data["state"].items())),
            direction=data["direction"],
            distance=data["distance"],
            cell=tuple(data["cell"]) if data.get("cell") is not None else None,
        )


@dataclass(frozen=True)
class Observation:
    view: str  # first_person | third_person
    facing: str
    visible: tuple[VisibleEntry, ...]
    agent: AgentPose | None = None  # populated for third-person frames only

    def entry(self, obj_id: str) -> VisibleEntry | None:
        for item in self.visible:
            if item.obj_id == obj_id:
                return item
        return None

    def to_dict(self) -> dict:
        return {
            "view": self.view,
            "facing": self.facing,
            "agent": self.agent.to_dict() if self.agent is not None else None,
            "visible": [item.to_dict() for item in self.visible],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Observation":
        return cls(
            view=data["view"],
            facing=data["facing"],
            visible=tuple(VisibleEntry.from_dict(d) for d in data["visible"]),
            agent=AgentPose.from_dict(data["agent"]) if data.get("agent") else None,
        )

    def canonical_key(self) -> str:
        """Content hash used as the learnable-backend memory key."""
        return content_hash(self.to_dict())
