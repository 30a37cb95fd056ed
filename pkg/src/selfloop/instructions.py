"""Task instructions: the (verb, object) commands agents are asked to follow.

An instruction's surface text is always produced by a per-verb template,
so parsing raw text back into (verb, object) is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

SUPPORTED_VERBS = ("pick up", "grab", "open", "break", "sit")

# Surface templates; "sit" needs a preposition to read grammatically.
SURFACE_TEMPLATES = {
    "pick up": "pick up the {obj}",
    "grab": "grab the {obj}",
    "open": "open the {obj}",
    "break": "break the {obj}",
    "sit": "sit on the {obj}",
}

VERB_TO_ACTION = {
    "pick up": "PickupObject",
    "grab": "GrabObject",
    "open": "OpenObject",
    "break": "BreakObject",
    "sit": "SitObject",
}

# Completed-state participle used in critic prompt slots.
VERB_TO_ADJECTIVE = {
    "pick up": "picked up",
    "grab": "grabbed",
    "open": "opened",
    "break": "broken",
    "sit": "sat on",
}


class InstructionError(ValueError):
    """Raised for malformed or unsupported instruction text."""


@dataclass(frozen=True)
class Instruction:
    verb: str
    object: str
    raw: str

    def to_dict(self) -> dict:
        return {"verb": self.verb, "object": self.object, "raw": self.raw}

    @classmethod
    def from_dict(cls, data: dict) -> "Instruction":
        return cls(verb=data["verb"], object=data["object"], raw=data["raw"])


def make_instruction(verb: str, obj: str) -> Instruction:
    if verb not in SUPPORTED_VERBS:
        raise InstructionError(f"unsupported verb: {verb!r}")
    if not obj:
        raise InstructionError("instruction needs a target object name")
    return Instruction(verb=verb, object=obj, raw=SURFACE_TEMPLATES[verb].format(obj=obj))


# Multiword verbs are matched before single-word ones ("pick up" vs "pick").
_PARSE_ORDER = sorted(SUPPORTED_VERBS, key=len, reverse=True)


def parse_instruction(raw: str) -> Instruction:
    """Parse surface text back into an Instruction.

    Raises InstructionError when the text does not match any per-verb
    template (including unsupported verbs such as "close").
    """
    text = raw.strip()
    for verb in _PARSE_ORDER:
        prefix = SURFACE_TEMPLATES[verb].format(obj="")
        if text.startswith(prefix) and len(text) > len(prefix):
            return Instruction(verb=verb, object=text[len(prefix):], raw=text)
    raise InstructionError(f"text matches no instruction template: {raw!r}")


def extract_object(instruction: Instruction | str) -> str:
    """The target object name referenced by the instruction."""
    if isinstance(instruction, str):
        instruction = parse_instruction(instruction)
    return instruction.object


def extract_verb(instruction: Instruction | str) -> str:
    """The task verb of the instruction; multiword verbs kept intact."""
    if isinstance(instruction, str):
        instruction = parse_instruction(instruction)
    return instruction.verb
