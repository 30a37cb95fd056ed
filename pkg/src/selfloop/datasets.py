"""Line-delimited JSON persistence for datasets, trajectories and metrics.

Records are written in canonical form (sorted keys, compact separators),
so export, parse and re-export round-trip byte for byte. Validation is
strict and names the offending field.
"""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Callable, Iterable, Sequence

from selfloop.canonical import canonical_json
from selfloop.instructions import SUPPORTED_VERBS
from selfloop.seeding import derive_seed
from selfloop.worldsim.engine import ACTION_NAMES

ACTOR_SCHEMA = "actor-sample-v1"
CRITIC_SCHEMA = "critic-sample-v1"
TRAJECTORY_SCHEMA = "trajectory-v1"
METRICS_SCHEMA = "metrics-v1"


class SchemaError(ValueError):
    """A record violates its schema; ``field`` names the bad entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _require(data: dict, field: str, kinds, prefix: str = ""):
    path = f"{prefix}{field}"
    if field not in data:
        raise SchemaError(path, "missing required field")
    value = data[field]
    if kinds is not None and not isinstance(value, kinds):
        if not (isinstance(kinds, tuple) and type(None) in kinds and value is None):
            raise SchemaError(path, f"expected {kinds}, got {type(value).__name__}")
    return value


def _validate_instruction(data: dict, prefix: str) -> None:
    instr = _require(data, "instruction", dict, prefix)
    verb = _require(instr, "verb", str, f"{prefix}instruction.")
    if verb not in SUPPORTED_VERBS:
        raise SchemaError(f"{prefix}instruction.verb", f"unsupported verb {verb!r}")
    _require(instr, "object", str, f"{prefix}instruction.")
    _require(instr, "raw", str, f"{prefix}instruction.")


def _validate_observation(data: dict, field: str, prefix: str = "") -> None:
    obs = _require(data, field, dict, prefix)
    inner = f"{prefix}{field}."
    view = _require(obs, "view", str, inner)
    if view not in ("first_person", "third_person"):
        raise SchemaError(f"{inner}view", f"unknown view {view!r}")
    _require(obs, "facing", str, inner)
    visible = _require(obs, "visible", list, inner)
    for index, entry in enumerate(visible):
        if not isinstance(entry, dict):
            raise SchemaError(f"{inner}visible[{index}]", "expected an object entry")
        _require(entry, "id", str, f"{inner}visible[{index}].")
        _require(entry, "state", dict, f"{inner}visible[{index}].")


def validate_actor_record(data: dict) -> None:
    if _require(data, "schema_version", str) != ACTOR_SCHEMA:
        raise SchemaError("schema_version", f"expected {ACTOR_SCHEMA!r}")
    _validate_instruction(data, "")
    if _require(data, "prompt_id", str) != "actor_interaction":
        raise SchemaError("prompt_id", "actor samples use the actor_interaction prompt")
    _validate_observation(data, "observation")
    action = _require(data, "action", dict)
    name = _require(action, "action", str, "action.")
    if name not in ACTION_NAMES:
        raise SchemaError("action.action", f"unknown action {name!r}")
    order = _require(data, "action_list_order", int)
    if isinstance(order, bool) or order < 0:
        raise SchemaError("action_list_order", "must be a non-negative integer")


def validate_critic_record(data: dict) -> None:
    if _require(data, "schema_version", str) != CRITIC_SCHEMA:
        raise SchemaError("schema_version", f"expected {CRITIC_SCHEMA!r}")
    _validate_instruction(data, "")
    if _require(data, "prompt_id", str) != "success_detection":
        raise SchemaError("prompt_id", "critic samples use the success_detection prompt")
    _validate_observation(data, "frame")
    if data["frame"]["view"] != "third_person":
        raise SchemaError("frame.view", "detection frames are third-person")
    if _require(data, "label", str) != "yes":
        raise SchemaError("label", "critic samples are always success-labeled")


def validate_trajectory_record(data: dict) -> None:
    if _require(data, "schema_version", str) != TRAJECTORY_SCHEMA:
        raise SchemaError("schema_version", f"expected {TRAJECTORY_SCHEMA!r}")
    _require(data, "traj_id", str)
    _validate_instruction(data, "")
    _require(data, "seed", int)
    steps = _require(data, "steps", list)
    for index, item in enumerate(steps):
        if not isinstance(item, dict):
            raise SchemaError(f"steps[{index}]", "expected a step record")
        _validate_observation(item, "observation", f"steps[{index}].")
        _require(item, "action", dict, f"steps[{index}].")
        _require(item, "outcome", dict, f"steps[{index}].")
    _validate_observation(data, "baseline_frame")
    _validate_observation(data, "final_frame")
    _require(data, "aborted", bool)


def validate_metrics_record(data: dict) -> None:
    if _require(data, "schema_version", str) != METRICS_SCHEMA:
        raise SchemaError("schema_version", f"expected {METRICS_SCHEMA!r}")
    _require(data, "iteration", int)
    for field in ("per_task_detection_accuracy", "per_task_success_rate", "counts", "dataset_sizes"):
        _require(data, field, dict)
    for field in ("detection_accuracy", "task_success_rate"):
        value = _require(data, field, (int, float))
        if not 0.0 <= float(value) <= 1.0:
            raise SchemaError(field, "rates live in [0, 1]")


VALIDATORS: dict[str, Callable[[dict], None]] = {
    ACTOR_SCHEMA: validate_actor_record,
    CRITIC_SCHEMA: validate_critic_record,
    TRAJECTORY_SCHEMA: validate_trajectory_record,
    METRICS_SCHEMA: validate_metrics_record,
}


def validate_record(data: dict) -> None:
    version = _require(data, "schema_version", str)
    validator = VALIDATORS.get(version)
    if validator is None:
        raise SchemaError("schema_version", f"unknown schema {version!r}")
    validator(data)


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(canonical_json(record) + "\n")
            count += 1
    return count


def read_jsonl(path: str | Path, validate: bool = True) -> list[dict]:
    path = Path(path)
    records: list[dict] = []
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {line_number}", f"invalid JSON: {exc}") from exc
            if validate:
                try:
                    validate_record(record)
                except SchemaError as exc:
                    raise SchemaError(f"line {line_number}.{exc.field}", str(exc).split(": ", 1)[1]) from exc
            records.append(record)
    return records


def split_records(records: Sequence[dict], ratio: float, seed: int) -> tuple[list[dict], list[dict]]:
    """Seeded train/holdout split; the train side gets floor(n * ratio) lines."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must be strictly between 0 and 1")
    indices = list(range(len(records)))
    random.Random(derive_seed(seed, "dataset-split")).shuffle(indices)
    cut = int(len(records) * ratio)
    train = sorted(indices[:cut])
    holdout = sorted(indices[cut:])
    return [records[i] for i in train], [records[i] for i in holdout]
