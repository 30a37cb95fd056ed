"""Uniform model interface shared by the acting and judging roles.

Three interchangeable implementations exist: a scripted oracle-plus-noise
model, a learnable tabular model whose fine-tuning is exact-match
memorization, and a remote chat-endpoint client. Anything implementing
``ModelBackend`` can be dropped into the loop, including test stubs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from selfloop.instructions import SUPPORTED_VERBS, Instruction
from selfloop.prompts import PromptTemplate
from selfloop.records import ActionRecord, DetectionResult, StateAnalysis

if TYPE_CHECKING:
    from selfloop.worldsim.state import Observation, WorldState

BACKEND_KINDS = ("scripted", "tabular", "remote")

# Focused state queries hallucinate less than whole-frame judgments; the
# scripted model applies this fixed reduction to its detection error rates.
SELF_ASK_ERROR_FACTOR = 0.25

# Aspect value -> spoken state token pairs used by state analysis.
ASPECT_TOKENS = {
    "opened": ("open", "closed"),
    "broken": ("broken", "intact"),
    "held_by": ("held", "not held"),
    "occupied_by": ("occupied", "unoccupied"),
}

# Token that must appear in a state analysis for the verb to count as done.
VERB_SATISFIED_TOKEN = {
    "pick up": "held",
    "grab": "held",
    "open": "open",
    "break": "broken",
    "sit": "occupied",
}


@dataclass(frozen=True)
class PromptContext:
    """Scene-level names bound into every rendered prompt."""

    agent: str = "agent"
    environment: str = "household"


class BackendError(RuntimeError):
    """A model call failed. ``kind`` separates connectivity failures
    (fatal for a run) from parse/contract failures (abort one trajectory)."""

    def __init__(self, message: str, kind: str = "contract", raw_response: str | None = None):
        super().__init__(message)
        self.kind = kind
        self.raw_response = raw_response


@dataclass(frozen=True)
class VerbRates:
    false_negative_rate: float = 0.0
    false_positive_rate: float = 0.0
    misact_rate: float = 0.0


@dataclass(frozen=True)
class ErrorModel:
    """Per-verb flip probabilities emulating hallucination-prone judgments."""

    false_negative_rate: float = 0.0
    false_positive_rate: float = 0.0
    misact_rate: float = 0.0
    per_verb: dict[str, VerbRates] = field(default_factory=dict)

    def validate(self) -> None:
        rates = [self.false_negative_rate, self.false_positive_rate, self.misact_rate]
        for verb, verb_rates in self.per_verb.items():
            if verb not in SUPPORTED_VERBS:
                raise ValueError(f"error model names unsupported verb {verb!r}")
            rates += [verb_rates.false_negative_rate, verb_rates.false_positive_rate, verb_rates.misact_rate]
        for rate in rates:
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"error rate out of [0, 1]: {rate}")

    def detect_rates(self, verb: str) -> tuple[float, float]:
        verb_rates = self.per_verb.get(verb)
        if verb_rates is not None:
            return verb_rates.false_negative_rate, verb_rates.false_positive_rate
        return self.false_negative_rate, self.false_positive_rate

    def misact(self, verb: str) -> float:
        verb_rates = self.per_verb.get(verb)
        return verb_rates.misact_rate if verb_rates is not None else self.misact_rate

    def to_dict(self) -> dict:
        return {
            "false_negative_rate": self.false_negative_rate,
            "false_positive_rate": self.false_positive_rate,
            "misact_rate": self.misact_rate,
            "per_verb": {
                verb: {
                    "false_negative_rate": rates.false_negative_rate,
                    "false_positive_rate": rates.false_positive_rate,
                    "misact_rate": rates.misact_rate,
                }
                for verb, rates in sorted(self.per_verb.items())
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ErrorModel":
        return cls(
            false_negative_rate=float(data.get("false_negative_rate", 0.0)),
            false_positive_rate=float(data.get("false_positive_rate", 0.0)),
            misact_rate=float(data.get("misact_rate", 0.0)),
            per_verb={
                verb: VerbRates(
                    false_negative_rate=float(rates.get("false_negative_rate", 0.0)),
                    false_positive_rate=float(rates.get("false_positive_rate", 0.0)),
                    misact_rate=float(rates.get("misact_rate", 0.0)),
                )
                for verb, rates in data.get("per_verb", {}).items()
            },
        )


@dataclass
class BackendConfig:
    kind: str
    seed: int = 0
    # scripted and tabular (the tabular fallback is scripted-noisy):
    error_model: ErrorModel = field(default_factory=ErrorModel)
    # tabular only:
    memory: dict = field(default_factory=dict)
    # remote only:
    endpoint_url: str = ""
    auth_token_env: str = ""
    model_name: str = "default"
    export_path: str = ""
    max_in_flight: int = 4

    def validate(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        self.error_model.validate()
        if self.kind == "remote" and not self.endpoint_url:
            raise ValueError("remote backend requires endpoint_url")
        if self.kind != "remote" and self.endpoint_url:
            raise ValueError(f"{self.kind} backend must not set endpoint_url")
        if self.kind != "tabular" and self.memory:
            raise ValueError(f"{self.kind} backend must not carry a memory store")

    def to_dict(self) -> dict:
        data: dict = {"kind": self.kind, "seed": self.seed}
        if self.kind in ("scripted", "tabular"):
            data["error_model"] = self.error_model.to_dict()
        if self.kind == "remote":
            data["endpoint_url"] = self.endpoint_url
            data["auth_token_env"] = self.auth_token_env
            data["model_name"] = self.model_name
            data["export_path"] = self.export_path
            data["max_in_flight"] = self.max_in_flight
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "BackendConfig":
        return cls(
            kind=data["kind"],
            seed=int(data.get("seed", 0)),
            error_model=ErrorModel.from_dict(data.get("error_model", {})),
            memory=dict(data.get("memory", {})),
            endpoint_url=data.get("endpoint_url", ""),
            auth_token_env=data.get("auth_token_env", ""),
            model_name=data.get("model_name", "default"),
            export_path=data.get("export_path", ""),
            max_in_flight=int(data.get("max_in_flight", 4)),
        )


class ModelBackend:
    """Base class for model implementations. Subclasses override the
    inference methods; ``fine_tune`` is a no-op unless the backend learns."""

    kind = "abstract"

    def actor_plan(
        self,
        instruction: Instruction,
        template: PromptTemplate,
        observation: "Observation",
        *,
        state: "WorldState | None" = None,
        step: int = 0,
        action_list_order: int = 0,
    ) -> ActionRecord:
        raise NotImplementedError

    def actor_refine(
        self,
        instruction: Instruction,
        template: PromptTemplate,
        observation: "Observation",
        previous: ActionRecord,
        *,
        state: "WorldState | None" = None,
        step: int = 0,
    ) -> ActionRecord:
        """Reflect-and-revise hook; the default backend never revises."""
        return previous

    def critic_detect(
        self,
        instruction: Instruction,
        template: PromptTemplate,
        frame: "Observation",
        *,
        variant: int = 0,
    ) -> DetectionResult:
        raise NotImplementedError

    def critic_state_analysis(
        self,
        object_name: str,
        template: PromptTemplate,
        frame: "Observation",
    ) -> StateAnalysis:
        raise NotImplementedError

    def critic_rejudge(self, analysis: StateAnalysis, instruction: Instruction) -> DetectionResult:
        raise NotImplementedError

    def critic_scan_other_objects(
        self,
        verb: str,
        template: PromptTemplate,
        frame: "Observation",
        *,
        exclude: tuple[str, ...] = (),
    ) -> str | None:
        raise NotImplementedError

    def critic_relabel(self, relabel_object: str, verb: str) -> Instruction:
        raise NotImplementedError

    def fine_tune(self, dataset) -> "ModelBackend":
        raise NotImplementedError
