"""Prompt templates, output parsing, and generation backends."""

from .gateway import (
    Backend,
    BackendUnavailable,
    GenerationRequest,
    OutputTooLong,
    SchemaRetryExhausted,
    backend_from_env,
    bindings_fingerprint,
    generate,
    generate_structured,
    request_for,
)
from .mock import MockBackend
from .parsing import MalformedJson, MissingKey, NotAnArray, NotAnObject, UnexpectedKey, parse_json_array, parse_json_object
from .templates import TEMPLATE_VERSION, PromptTemplate, TemplateCatalogue, default_catalogue, render_prompt

__all__ = [
    "Backend",
    "BackendUnavailable",
    "GenerationRequest",
    "MalformedJson",
    "MissingKey",
    "MockBackend",
    "NotAnArray",
    "NotAnObject",
    "OutputTooLong",
    "PromptTemplate",
    "SchemaRetryExhausted",
    "TEMPLATE_VERSION",
    "TemplateCatalogue",
    "UnexpectedKey",
    "backend_from_env",
    "bindings_fingerprint",
    "default_catalogue",
    "generate",
    "generate_structured",
    "parse_json_array",
    "parse_json_object",
    "render_prompt",
    "request_for",
]
