"""Scene specifications: declarative JSON files describing a household layout.

A scene lists the grid size, the agent's start pose and every object with
its affordances and initial state. Object cells may be fixed or marked
``"random"``, in which case ``reset`` places them with the episode seed.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from selfloop.seeding import derive_seed
from selfloop.worldsim.state import (
    AFFORDANCES,
    FACINGS,
    AgentPose,
    StateInvariantError,
    WorldObject,
    WorldState,
)

SCENE_SCHEMA_VERSION = "scene-v1"


class SceneValidationError(ValueError):
    """A scene spec is malformed; the message names the offending object."""


@dataclass(frozen=True)
class SceneObject:
    obj_id: str
    kind: str
    cell: tuple[int, int] | str  # fixed cell or "random"
    affordances: frozenset[str]
    opened: bool = False
    broken: bool = False


@dataclass(frozen=True)
class SceneSpec:
    name: str
    grid: tuple[int, int]
    agent_id: str
    agent_start: tuple[int, int]
    agent_facing: str
    objects: tuple[SceneObject, ...] = field(default_factory=tuple)
    environment: str = "household"
    horizon: int = 10

    def object_ids(self) -> list[str]:
        return [obj.obj_id for obj in self.objects]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCENE_SCHEMA_VERSION,
            "name": self.name,
            "environment": self.environment,
            "grid": list(self.grid),
            "horizon": self.horizon,
            "agent": {
                "id": self.agent_id,
                "start": list(self.agent_start),
                "facing": self.agent_facing,
            },
            "objects": [
                {
                    "id": obj.obj_id,
                    "kind": obj.kind,
                    "cell": obj.cell if isinstance(obj.cell, str) else list(obj.cell),
                    "affordances": sorted(obj.affordances),
                    "state": _initial_state_dict(obj),
                }
                for obj in self.objects
            ],
        }


def _initial_state_dict(obj: SceneObject) -> dict:
    state: dict = {}
    if obj.opened:
        state["opened"] = True
    if obj.broken:
        state["broken"] = True
    return state


def scene_from_dict(data: dict, name: str = "scene") -> SceneSpec:
    agent = data.get("agent", {})
    objects = []
    for entry in data.get("objects", ()):
        cell = entry.get("cell", "random")
        objects.append(
            SceneObject(
                obj_id=str(entry.get("id", "")),
                kind=str(entry.get("kind", entry.get("id", ""))),
                cell=cell if isinstance(cell, str) else tuple(cell),
                affordances=frozenset(entry.get("affordances", ())),
                opened=bool(entry.get("state", {}).get("opened", False)),
                broken=bool(entry.get("state", {}).get("broken", False)),
            )
        )
    return SceneSpec(
        name=str(data.get("name", name)),
        environment=str(data.get("environment", "household")),
        grid=tuple(data.get("grid", (8, 8))),
        horizon=int(data.get("horizon", 10)),
        agent_id=str(agent.get("id", "agent")),
        agent_start=tuple(agent.get("start", (0, 0))),
        agent_facing=str(agent.get("facing", "north")),
        objects=tuple(objects),
    )


def load_scene(path: str | Path) -> SceneSpec:
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        data = json.load(handle)
    spec = scene_from_dict(data, name=path.stem)
    validate_scene(spec)
    return spec


def save_scene(spec: SceneSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def validate_scene(spec: SceneSpec) -> None:
    width, height = spec.grid
    if width < 1 or height < 1:
        raise SceneValidationError(f"scene {spec.name!r}: grid must be positive, got {spec.grid}")
    if not _in_grid(spec.agent_start, spec.grid):
        raise SceneValidationError(f"scene {spec.name!r}: agent start {spec.agent_start} outside grid")
    if spec.agent_facing not in FACINGS:
        raise SceneValidationError(f"scene {spec.name!r}: unknown facing {spec.agent_facing!r}")
    seen: set[str] = set()
    for obj in spec.objects:
        if not obj.obj_id:
            raise SceneValidationError(f"scene {spec.name!r}: object with empty id")
        if obj.obj_id in seen:
            raise SceneValidationError(f"object {obj.obj_id!r}: duplicate id")
        seen.add(obj.obj_id)
        for name in obj.affordances:
            if name not in AFFORDANCES:
                raise SceneValidationError(f"object {obj.obj_id!r}: unknown affordance {name!r}")
        if obj.opened and "openable" not in obj.affordances:
            raise SceneValidationError(f"object {obj.obj_id!r}: marked opened but not openable")
        if obj.broken and "breakable" not in obj.affordances:
            raise SceneValidationError(f"object {obj.obj_id!r}: marked broken but not breakable")
        if isinstance(obj.cell, str):
            if obj.cell != "random":
                raise SceneValidationError(f"object {obj.obj_id!r}: cell must be [x, y] or \"random\"")
        elif not _in_grid(obj.cell, spec.grid):
            raise SceneValidationError(f"object {obj.obj_id!r}: cell {obj.cell} outside grid")


def _in_grid(cell: tuple[int, int], grid: tuple[int, int]) -> bool:
    return 0 <= cell[0] < grid[0] and 0 <= cell[1] < grid[1]


def reset(scene: SceneSpec, seed: int) -> WorldState:
    """Instantiate a fresh world. Deterministic function of (scene, seed).

    Objects with ``cell="random"`` are placed in listed order by drawing
    ``randrange(len(free))`` from ``random.Random(derive_seed(seed,
    "placement", scene.name))`` over the row-major list of free cells.
    """
    validate_scene(scene)
    taken = {scene.agent_start}
    taken.update(obj.cell for obj in scene.objects if not isinstance(obj.cell, str))
    free = [
        (x, y)
        for y in range(scene.grid[1])
        for x in range(scene.grid[0])
        if (x, y) not in taken
    ]
    rng = random.Random(derive_seed(seed, "placement", scene.name))
    placed: list[WorldObject] = []
    for obj in scene.objects:
        if isinstance(obj.cell, str):
            if not free:
                raise SceneValidationError(f"object {obj.obj_id!r}: no free cell left for random placement")
            cell = free.pop(rng.randrange(len(free)))
        else:
            cell = obj.cell
        placed.append(
            WorldObject(
                obj_id=obj.obj_id,
                kind=obj.kind,
                cell=cell,
                affordances=obj.affordances,
                opened=obj.opened,
                broken=obj.broken,
            )
        )
    state = WorldState(
        scene_name=scene.name,
        environment=scene.environment,
        agent_id=scene.agent_id,
        grid=scene.grid,
        objects=tuple(sorted(placed, key=lambda o: o.obj_id)),
        agent=AgentPose(cell=scene.agent_start, facing=scene.agent_facing),
        step_count=0,
        horizon=scene.horizon,
        rng_seed=seed,
    )
    try:
        state.validate()
    except StateInvariantError as exc:  # pragma: no cover - guarded by validate_scene
        raise SceneValidationError(str(exc)) from exc
    return state
