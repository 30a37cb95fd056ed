"""Remote backend: chat-style JSON over HTTP.

Requests carry the rendered prompt plus a text scene description in
place of an image (the world is symbolic, nothing is rasterized).
Replies are parsed from line-anchored "Action:/Result:/State:/Object:/
New instruction:" blocks; a parse failure re-prompts up to three times
before surfacing a backend error with the raw response attached.
"""

from __future__ import annotations

import logging
import os
import re

import httpx

from selfloop.backends.base import BackendConfig, BackendError, ModelBackend, PromptContext
from selfloop.canonical import canonical_json
from selfloop.instructions import Instruction, InstructionError, parse_instruction
from selfloop.prompts import (
    PromptTemplate,
    action_list_for_order,
    describe_observation,
    load_templates,
    render_action_list,
    render_prompt,
    render_visible_objects,
    verb_to_adjective,
)
from selfloop.records import ActionRecord, DetectionResult, StateAnalysis
from selfloop.worldsim.engine import ACTION_NAMES, NAVIGATION_ACTIONS
from selfloop.worldsim.state import Observation, WorldState

logger = logging.getLogger(__name__)

PARSE_RETRIES = 3

_RETRY_NOTE = (
    "Your previous reply could not be parsed. Answer again and follow the "
    "output format exactly, one field per line."
)

_LINE_PATTERNS = {
    field: re.compile(rf"^\s*{field}\s*:\s*(.*)\s*$", re.IGNORECASE | re.MULTILINE)
    for field in ("action", "object", "result", "state", "reasoning", "new instruction")
}


def parse_reply_field(text: str, field: str) -> str | None:
    """First line-anchored match for the field, case-insensitive."""
    match = _LINE_PATTERNS[field].search(text)
    return match.group(1).strip() if match else None


class RemoteBackend(ModelBackend):
    kind = "remote"

    def __init__(
        self,
        config: BackendConfig,
        context: PromptContext | None = None,
        templates: dict[str, PromptTemplate] | None = None,
        client: httpx.Client | None = None,
    ):
        config.validate()
        self.config = config
        self.context = context or PromptContext()
        self.templates = templates or load_templates()
        self._client = client or httpx.Client(timeout=30.0)

    # -- transport ---------------------------------------------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.auth_token_env, "") if self.config.auth_token_env else ""
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _chat(self, prompt: str, image_text: str) -> str:
        payload = {
            "model": self.config.model_name,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": prompt},
                        {"type": "image_ref", "ref": "scene-description", "text": image_text},
                    ],
                }
            ],
        }
        try:
            response = self._client.post(self.config.endpoint_url, json=payload, headers=self._headers())
        except httpx.HTTPError as exc:
            raise BackendError(f"endpoint unreachable: {exc}", kind="connectivity") from exc
        if response.status_code != 200:
            raise BackendError(
                f"endpoint returned HTTP {response.status_code}", kind="connectivity", raw_response=response.text
            )
        try:
            return str(response.json()["content"])
        except (ValueError, KeyError) as exc:
            raise BackendError("malformed endpoint response envelope", kind="connectivity", raw_response=response.text) from exc

    def _ask(self, prompt: str, image_text: str, parse):
        """Send, parse, and re-prompt up to PARSE_RETRIES times on parse failure."""
        attempt_prompt = prompt
        reply = ""
        for attempt in range(1 + PARSE_RETRIES):
            reply = self._chat(attempt_prompt, image_text)
            parsed = parse(reply)
            if parsed is not None:
                return parsed
            logger.debug("parse failure on attempt %d: %r", attempt + 1, reply)
            attempt_prompt = f"{prompt}\n\n{_RETRY_NOTE}"
        raise BackendError("unparseable model reply", kind="parse", raw_response=reply)

    # -- actor ---------------------------------------------------------------

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
        prompt = render_prompt(
            template,
            {
                "agent": self.context.agent,
                "environment": self.context.environment,
                "instruction": instruction.raw,
                "action_list": render_action_list(action_list_for_order(action_list_order)),
                "visible_objs": render_visible_objects(observation),
            },
        )
        return self._ask(prompt, describe_observation(observation), _parse_action)

    def actor_refine(
        self,
        instruction: Instruction,
        template: PromptTemplate,
        observation: Observation,
        previous: ActionRecord,
        *,
        state: WorldState | None = None,
        step: int = 0,
    ) -> ActionRecord:
        prompt = render_prompt(
            template,
            {
                "agent": self.context.agent,
                "environment": self.context.environment,
                "instruction": instruction.raw,
                "action_list": render_action_list(action_list_for_order(0)),
                "visible_objs": render_visible_objects(observation),
            },
        )
        prompt += (
            f"\n\nYour previous answer was Action: {previous.action}, Object: "
            f"{previous.target or 'None'}. Reflect on it and answer again."
        )
        return self._ask(prompt, describe_observation(observation), _parse_action)

    # -- critic ----------------------------------------------------------------

    def critic_detect(
        self,
        instruction: Instruction,
        template: PromptTemplate,
        frame: Observation,
        *,
        variant: int = 0,
    ) -> DetectionResult:
        prompt = render_prompt(
            template,
            {
                "agent": self.context.agent,
                "environment": self.context.environment,
                "object": instruction.object,
                "verb_adj": verb_to_adjective(instruction.verb),
            },
        )
        if variant:
            prompt += f"\n\nThink it through step by step (pass {variant})."
        label = self._ask(prompt, describe_observation(frame), _parse_result)
        return DetectionResult(label=label, reasoning="remote judgment", provenance="direct")

    def critic_state_analysis(self, object_name: str, template: PromptTemplate, frame: Observation) -> StateAnalysis:
        prompt = render_prompt(
            template,
            {
                "agent": self.context.agent,
                "environment": self.context.environment,
                "object": object_name,
            },
        )
        state_text = self._ask(prompt, describe_observation(frame), lambda text: parse_reply_field(text, "state"))
        return StateAnalysis(object=object_name, state_text=state_text)

    def critic_rejudge(self, analysis: StateAnalysis, instruction: Instruction) -> DetectionResult:
        prompt = render_prompt(
            self.templates["self_ask_judge"],
            {
                "agent": self.context.agent,
                "environment": self.context.environment,
                "object": analysis.object,
                "state": analysis.state_text,
                "instruction": instruction.raw,
            },
        )
        label = self._ask(prompt, f"state of the {analysis.object}: {analysis.state_text}", _parse_result)
        return DetectionResult(label=label, reasoning="remote re-judgment", provenance="self_asked")

    def critic_scan_other_objects(
        self,
        verb: str,
        template: PromptTemplate,
        frame: Observation,
        *,
        exclude: tuple[str, ...] = (),
    ) -> str | None:
        prompt = render_prompt(
            template,
            {
                "agent": self.context.agent,
                "environment": self.context.environment,
                "verb_adj": verb_to_adjective(verb),
            },
        )
        name = self._ask(prompt, describe_observation(frame), lambda text: parse_reply_field(text, "object"))
        if name.lower() in ("none", "nothing", "") or name in exclude:
            return None
        return name

    def critic_relabel(self, relabel_object: str, verb: str) -> Instruction:
        if not relabel_object:
            raise ValueError("relabeling requires an object name")
        prompt = render_prompt(
            self.templates["relabel_instruct"],
            {
                "agent": self.context.agent,
                "environment": self.context.environment,
                "object": relabel_object,
                "verb_adj": verb_to_adjective(verb),
                "instruction": f"{verb} task",
            },
        )
        return self._ask(prompt, f"the {relabel_object} is {verb_to_adjective(verb)}", _parse_new_instruction)

    # -- learning -----------------------------------------------------------------

    def fine_tune(self, dataset) -> "RemoteBackend":
        """Export the dataset for an external training service; training
        itself is out of scope here."""
        if not self.config.export_path:
            logger.warning("remote backend has no export_path; skipping %d samples", len(dataset))
            return self
        with open(self.config.export_path, "w", encoding="utf-8") as handle:
            for sample in dataset:
                handle.write(canonical_json(sample.to_record()) + "\n")
        logger.info("exported %d samples to %s", len(dataset), self.config.export_path)
        return self

    def close(self) -> None:
        self._client.close()


def _parse_action(text: str) -> ActionRecord | None:
    action = parse_reply_field(text, "action")
    if action is None:
        return None
    name = action.strip()
    matched = next((known for known in ACTION_NAMES if known.lower() == name.lower()), None)
    if matched is None:
        return None
    target = parse_reply_field(text, "object")
    if target is not None and target.lower() in ("none", ""):
        target = None
    if matched in NAVIGATION_ACTIONS:
        target = None  # models often echo an object; navigation takes none
    elif not target:
        return None
    reasoning = parse_reply_field(text, "reasoning") or ""
    return ActionRecord(action=matched, target=target, reasoning=reasoning)


def _parse_result(text: str) -> str | None:
    result = parse_reply_field(text, "result")
    if result is None:
        return None
    lowered = result.lower()
    if lowered.startswith("yes"):
        return "yes"
    if lowered.startswith("no"):
        return "no"
    return None


def _parse_new_instruction(text: str) -> Instruction | None:
    raw = parse_reply_field(text, "new instruction")
    if raw is None:
        return None
    try:
        return parse_instruction(raw.strip().rstrip("."))
    except InstructionError:
        return None
