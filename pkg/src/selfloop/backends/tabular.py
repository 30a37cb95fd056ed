"""Tabular backend: a learnable model whose fine-tuning is memorization.

Keys are (instruction text, canonical observation hash); values are the
trained answer. This gives a measurable analogue of supervised
fine-tuning: trained keys are always answered from memory, everything
else falls back to the scripted noisy policy, so improvement is exactly
the memory's coverage. An untrained tabular backend behaves identically
to a scripted backend with the same seed and error model.
"""

from __future__ import annotations

import logging

from selfloop.backends.base import BackendConfig, ModelBackend
from selfloop.backends.scripted import ScriptedBackend
from selfloop.instructions import Instruction
from selfloop.prompts import PromptTemplate
from selfloop.records import ActionRecord, DetectionResult, StateAnalysis
from selfloop.worldsim.state import Observation, WorldState

logger = logging.getLogger(__name__)

_KEY_SEP = "\x1f"

_ROLE_KINDS = {"actor": {"action"}, "critic": {"label"}, "both": {"action", "label"}}


def memory_key(instruction_raw: str, observation_hash: str) -> str:
    return instruction_raw + _KEY_SEP + observation_hash


class TabularBackend(ModelBackend):
    kind = "tabular"

    def __init__(self, config: BackendConfig, role: str = "both"):
        config.validate()
        if role not in _ROLE_KINDS:
            raise ValueError(f"unknown tabular role {role!r}")
        self.config = config
        self.role = role
        self.memory: dict[str, dict] = dict(config.memory)
        self._fallback = ScriptedBackend(
            BackendConfig(kind="scripted", seed=config.seed, error_model=config.error_model)
        )

    # -- actor -----------------------------------------------------------

    def actor_plan(
        self,
        instruction: Instruction,
        template: PromptTemplate,
        observation: Observation,
        *,
        state: WorldState | None = None,
        step: int = 0,
        action_list_order: int = 0,
    ) -> ActionRecord:
        value = self._lookup(instruction.raw, observation.canonical_key(), "action")
        if value is not None:
            return ActionRecord(
                action=value["action"],
                target=value.get("target"),
                reasoning="recalled from fine-tuning",
            )
        return self._fallback.actor_plan(
            instruction, template, observation, state=state, step=step, action_list_order=action_list_order
        )

    def actor_refine(self, instruction, template, observation, previous, *, state=None, step=0):
        return self._fallback.actor_refine(instruction, template, observation, previous, state=state, step=step)

    # -- critic ----------------------------------------------------------

    def critic_detect(
        self,
        instruction: Instruction,
        template: PromptTemplate,
        frame: Observation,
        *,
        variant: int = 0,
    ) -> DetectionResult:
        value = self._lookup(instruction.raw, frame.canonical_key(), "label")
        if value is not None:
            return DetectionResult(label=value["label"], reasoning="recalled from fine-tuning", provenance="direct")
        return self._fallback.critic_detect(instruction, template, frame, variant=variant)

    def critic_state_analysis(self, object_name: str, template: PromptTemplate, frame: Observation) -> StateAnalysis:
        return self._fallback.critic_state_analysis(object_name, template, frame)

    def critic_rejudge(self, analysis: StateAnalysis, instruction: Instruction) -> DetectionResult:
        return self._fallback.critic_rejudge(analysis, instruction)

    def critic_scan_other_objects(self, verb, template, frame, *, exclude=()):
        return self._fallback.critic_scan_other_objects(verb, template, frame, exclude=exclude)

    def critic_relabel(self, relabel_object: str, verb: str) -> Instruction:
        return self._fallback.critic_relabel(relabel_object, verb)

    # -- learning --------------------------------------------------------

    def fine_tune(self, dataset) -> "TabularBackend":
        """Memorize every (key -> answer) pair in the dataset.

        Conflicting duplicates for one key resolve by majority vote,
        ties by the most recent occurrence.
        """
        allowed = _ROLE_KINDS[self.role]
        grouped: dict[str, list[dict]] = {}
        for sample in dataset:
            try:
                key = sample.memory_key()
                value = sample.memory_value()
            except AttributeError:
                raise ValueError(f"dataset contains a non-trainable record: {sample!r}") from None
            if value["kind"] not in allowed:
                raise ValueError(
                    f"schema mismatch: {value['kind']} samples cannot train a {self.role} backend"
                )
            grouped.setdefault(key, []).append(value)
        for key, values in grouped.items():
            self.memory[key] = _resolve(values)
        return self

    def _lookup(self, instruction_raw: str, observation_hash: str, kind: str) -> dict | None:
        value = self.memory.get(memory_key(instruction_raw, observation_hash))
        if value is None:
            return None
        if value["kind"] != kind:
            # Cross-role key collision in a shared store; treat as a miss.
            logger.warning("memory collision on shared store: wanted %s, found %s", kind, value["kind"])
            return None
        return value

    def export_memory(self) -> dict[str, dict]:
        return dict(self.memory)


def _resolve(values: list[dict]) -> dict:
    counts: dict[str, int] = {}
    last_seen: dict[str, int] = {}
    by_token: dict[str, dict] = {}
    for index, value in enumerate(values):
        token = repr(sorted(value.items()))
        counts[token] = counts.get(token, 0) + 1
        last_seen[token] = index
        by_token[token] = value
    best = max(counts, key=lambda token: (counts[token], last_seen[token]))
    return by_token[best]
