"""Model backends: scripted oracle-with-noise, learnable tabular, remote HTTP."""

from selfloop.backends.base import (
    ASPECT_TOKENS,
    BACKEND_KINDS,
    SELF_ASK_ERROR_FACTOR,
    VERB_SATISFIED_TOKEN,
    BackendConfig,
    BackendError,
    ErrorModel,
    ModelBackend,
    PromptContext,
    VerbRates,
)
from selfloop.backends.remote import RemoteBackend
from selfloop.backends.scripted import ScriptedBackend
from selfloop.backends.tabular import TabularBackend
from selfloop.prompts import PromptTemplate, load_templates, render_prompt, verb_to_adjective
from selfloop.records import ActionRecord, DetectionResult, StateAnalysis


def build_backend(config: BackendConfig, role: str = "both", context: PromptContext | None = None) -> ModelBackend:
    """Instantiate the backend described by a config for a given role."""
    if config.kind == "scripted":
        return ScriptedBackend(config)
    if config.kind == "tabular":
        return TabularBackend(config, role=role)
    if config.kind == "remote":
        return RemoteBackend(config, context=context)
    raise ValueError(f"unknown backend kind {config.kind!r}")


__all__ = [
    "ASPECT_TOKENS",
    "ActionRecord",
    "BACKEND_KINDS",
    "BackendConfig",
    "BackendError",
    "DetectionResult",
    "ErrorModel",
    "ModelBackend",
    "PromptContext",
    "PromptTemplate",
    "RemoteBackend",
    "SELF_ASK_ERROR_FACTOR",
    "ScriptedBackend",
    "StateAnalysis",
    "TabularBackend",
    "VERB_SATISFIED_TOKEN",
    "VerbRates",
    "build_backend",
    "load_templates",
    "render_prompt",
    "verb_to_adjective",
]
