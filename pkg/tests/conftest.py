"""Shared fixtures: scenes, backends, and hand-built trajectory helpers."""

from __future__ import annotations

from pathlib import Path

import pytest

from selfloop.actor import Trajectory, TrajectoryStep
from selfloop.backends import BackendConfig, ErrorModel, ScriptedBackend
from selfloop.instructions import Instruction
from selfloop.records import ActionRecord
from selfloop.worldsim import load_scene, observe, reset, step
from selfloop.worldsim.scene import SceneObject, SceneSpec
from selfloop.worldsim.state import FIRST_PERSON, THIRD_PERSON, WorldState

REPO_ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = REPO_ROOT / "configs"


@pytest.fixture(scope="session")
def kitchen_scene() -> SceneSpec:
    return load_scene(CONFIG_DIR / "scenes" / "kitchen.json")


@pytest.fixture(scope="session")
def studio_scene() -> SceneSpec:
    return load_scene(CONFIG_DIR / "scenes" / "studio.json")


def make_scene(
    objects: list[SceneObject],
    grid: tuple[int, int] = (7, 7),
    start: tuple[int, int] = (3, 3),
    facing: str = "north",
    name: str = "test",
    horizon: int = 10,
) -> SceneSpec:
    return SceneSpec(
        name=name,
        grid=grid,
        agent_id="agent",
        agent_start=start,
        agent_facing=facing,
        objects=tuple(objects),
        horizon=horizon,
    )


def obj(
    obj_id: str,
    cell,
    affordances: tuple[str, ...],
    kind: str | None = None,
    opened: bool = False,
    broken: bool = False,
) -> SceneObject:
    return SceneObject(
        obj_id=obj_id,
        kind=kind or obj_id,
        cell=cell,
        affordances=frozenset(affordances),
        opened=opened,
        broken=broken,
    )


def zero_error_backend(seed: int = 1) -> ScriptedBackend:
    return ScriptedBackend(BackendConfig(kind="scripted", seed=seed))


def noisy_backend(seed: int = 1, fnr: float = 0.0, fpr: float = 0.0, misact: float = 0.0) -> ScriptedBackend:
    return ScriptedBackend(
        BackendConfig(
            kind="scripted",
            seed=seed,
            error_model=ErrorModel(false_negative_rate=fnr, false_positive_rate=fpr, misact_rate=misact),
        )
    )


def scripted_trajectory(
    scene: SceneSpec,
    seed: int,
    instruction: Instruction,
    actions: list[ActionRecord],
    traj_id: str = "hand-built",
    pad_to: int | None = None,
) -> Trajectory:
    """Run an explicit action list through the environment.

    Pads with rotations up to ``pad_to`` steps so hand-built episodes
    honor the fixed step budget.
    """
    state = reset(scene, seed)
    baseline = observe(state, THIRD_PERSON)
    todo = list(actions)
    if pad_to is not None:
        while len(todo) < pad_to:
            todo.append(ActionRecord(action="RotateLeft"))
    recorded = []
    for action in todo:
        frame = observe(state, FIRST_PERSON)
        state, outcome = step(state, action)
        recorded.append(TrajectoryStep(observation=frame, action=action, outcome=outcome))
    return Trajectory(
        traj_id=traj_id,
        instruction=instruction,
        seed=seed,
        scene_name=scene.name,
        steps=tuple(recorded),
        baseline_frame=baseline,
        final_frame=observe(state, THIRD_PERSON),
    )


def run_actions(state: WorldState, actions: list[ActionRecord]) -> WorldState:
    for action in actions:
        state, _outcome = step(state, action)
    return state
