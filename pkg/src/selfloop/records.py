"""Wire records exchanged between models, the world and the triage pipeline."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ActionRecord:
    """One planned action: a verb token plus an optional object target.

    Navigation actions carry ``target=None``; object actions carry the
    target's id. ``reasoning`` is free text and never enters canonical keys.
    """

    action: str
    target: str | None = None
    reasoning: str = ""

    def to_dict(self) -> dict:
        return {"action": self.action, "target": self.target, "reasoning": self.reasoning}

    @classmethod
    def from_dict(cls, data: dict) -> "ActionRecord":
        return cls(action=data["action"], target=data.get("target"), reasoning=data.get("reasoning", ""))


@dataclass(frozen=True)
class DetectionResult:
    """A yes/no success judgment with its provenance.

    ``provenance`` records which triage stage produced the label:
    direct detection, self-asking, or hindsight relabeling. Relabeled
    results are by construction always "yes".
    """

    label: str  # "yes" | "no"
    reasoning: str = ""
    provenance: str = "direct"  # direct | self_asked | relabeled

    def __post_init__(self) -> None:
        if self.label not in ("yes", "no"):
            raise ValueError(f"detection label must be yes/no, got {self.label!r}")
        if self.provenance not in ("direct", "self_asked", "relabeled"):
            raise ValueError(f"unknown provenance: {self.provenance!r}")
        if self.provenance == "relabeled" and self.label != "yes":
            raise ValueError("relabeled detections are always yes")

    @property
    def is_yes(self) -> bool:
        return self.label == "yes"

    def to_dict(self) -> dict:
        return {"label": self.label, "reasoning": self.reasoning, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, data: dict) -> "DetectionResult":
        return cls(label=data["label"], reasoning=data.get("reasoning", ""), provenance=data.get("provenance", "direct"))


@dataclass(frozen=True)
class StateAnalysis:
    """Free-text description of one object's state in a detection frame."""

    object: str
    state_text: str

    def to_dict(self) -> dict:
        return {"object": self.object, "state_text": self.state_text}


@dataclass(frozen=True)
class StepOutcome:
    """Result of applying one action to the world."""

    ok: bool
    reason: str = ""

    def to_dict(self) -> dict:
        return {"ok": self.ok, "reason": self.reason}

    @classmethod
    def from_dict(cls, data: dict) -> "StepOutcome":
        return cls(ok=data["ok"], reason=data.get("reason", ""))
