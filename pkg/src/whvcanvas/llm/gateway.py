"""Backend-agnostic text generation.

A backend is anything with ``complete(request) -> str``.  The gateway adds a
retry loop for transient failures, a global in-flight cap to protect remote
quotas, and a structured-generation helper that re-prompts once with the
schema violation appended as a corrective instruction.
"""

from __future__ import annotations

import json
import hashlib
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Protocol, TypeVar

from ..errors import WhvError
from .templates import BindingValue, default_catalogue

log = logging.getLogger(__name__)

# Creative templates decode warm; classification and extraction must be stable.
DEFAULT_TEMPERATURES = {
    "extractor": 0.0,
    "shift_classifier": 0.0,
    "rewriter": 0.7,
    "merge_nodes": 0.7,
    "merge_fragments": 0.7,
    "steering": 0.7,
    "corpus_expander": 0.7,
    "cluster_label": 0.7,
}

DEFAULT_MAX_OUTPUT_TOKENS = 4096
DEFAULT_INFLIGHT_CAP = 4


class BackendUnavailable(WhvError):
    code = "backend_unavailable"


class OutputTooLong(WhvError):
    code = "output_too_long"


class TransientBackendError(Exception):
    """Raised by backends for retryable failures (timeouts, 5xx, rate limits)."""


class SchemaRetryExhausted(WhvError):
    code = "schema_error"

    def __init__(self, detail: str, last_output: str = ""):
        super().__init__(detail)
        self.last_output = last_output


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float = 0.7
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    retry_budget: int = 1
    # Routing hints for fixture-keyed mock backends; harmless to real backends.
    tag: str = ""
    fingerprint: str = ""

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be >= 0")


class Backend(Protocol):
    name: str
    deterministic: bool

    def complete(self, request: GenerationRequest) -> str: ...


_inflight = threading.Semaphore(DEFAULT_INFLIGHT_CAP)
_inflight_cap = DEFAULT_INFLIGHT_CAP


def set_inflight_cap(cap: int) -> None:
    global _inflight, _inflight_cap
    if cap < 1:
        raise ValueError("in-flight cap must be >= 1")
    _inflight = threading.Semaphore(cap)
    _inflight_cap = cap


def bindings_fingerprint(bindings: Mapping[str, BindingValue]) -> str:
    canon = {
        name: value if isinstance(value, str) else json.dumps(value, ensure_ascii=False)
        for name, value in sorted(bindings.items())
    }
    blob = json.dumps(canon, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def generate(backend: Backend, request: GenerationRequest) -> str:
    """Run one generation, retrying transient failures up to the retry budget."""
    attempts = request.retry_budget + 1
    last_exc: Optional[Exception] = None
    for attempt in range(attempts):
        try:
            with _inflight:
                text = backend.complete(request)
            if len(text.split()) > request.max_output_tokens:
                raise OutputTooLong(
                    f"backend returned ~{len(text.split())} tokens "
                    f"(budget {request.max_output_tokens})"
                )
            return text
        except TransientBackendError as exc:
            last_exc = exc
            log.warning("backend %s transient failure (attempt %d/%d): %s",
                        getattr(backend, "name", "?"), attempt + 1, attempts, exc)
    raise BackendUnavailable(f"backend failed after {attempts} attempts: {last_exc}")


def request_for(template_id: str, bindings: Mapping[str, BindingValue],
                retry_budget: int = 1) -> GenerationRequest:
    """Render a catalogue template into a ready request."""
    prompt = default_catalogue().render(template_id, bindings)
    return GenerationRequest(
        prompt=prompt,
        temperature=DEFAULT_TEMPERATURES.get(template_id, 0.7),
        retry_budget=retry_budget,
        tag=template_id,
        fingerprint=bindings_fingerprint(bindings),
    )


T = TypeVar("T")


def generate_structured(
    backend: Backend,
    template_id: str,
    bindings: Mapping[str, BindingValue],
    parse: Callable[[str], T],
    schema_retries: int = 1,
) -> T:
    """Generate and parse; on schema violation, retry once with the violation
    appended as a corrective instruction, then surface the failure."""
    request = request_for(template_id, bindings)
    violation: Optional[WhvError] = None
    text = ""
    for attempt in range(schema_retries + 1):
        if violation is not None:
            corrected = (
                request.prompt
                + "\nYour previous response was invalid: "
                + violation.detail
                + "\nFollow the output format exactly."
            )
            attempt_request = replace(request, prompt=corrected)
        else:
            attempt_request = request
        text = generate(backend, attempt_request)
        try:
            return parse(text)
        except WhvError as exc:
            violation = exc
            log.info("schema violation from %s (attempt %d): %s", template_id, attempt + 1, exc.detail)
    raise SchemaRetryExhausted(
        f"template {template_id!r} output failed schema checks after "
        f"{schema_retries + 1} attempts: {violation.detail}",
        last_output=text,
    )


@dataclass
class RemoteConfig:
    endpoint: str
    api_key: str = ""
    model: str = ""
    timeout: float = 30.0


class RemoteBackend:
    """Single chat-completion-style POST against a configured endpoint."""

    deterministic = False

    def __init__(self, config: RemoteConfig):
        self.config = config
        self.name = f"remote:{config.model or config.endpoint}"

    def complete(self, request: GenerationRequest) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        try:
            resp = requests.post(
                self.config.endpoint, json=body, headers=headers, timeout=self.config.timeout
            )
        except requests.RequestException as exc:
            raise TransientBackendError(str(exc)) from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransientBackendError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        data = resp.json()
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise BackendUnavailable("unexpected completion payload shape") from None


ENV_PREFIX = "WHVCANVAS"


def backend_from_env(env: Optional[Mapping[str, str]] = None):
    """Build a backend from environment configuration.

    ``WHVCANVAS_BACKEND`` selects mock (default) or remote; remote mode reads
    ``WHVCANVAS_ENDPOINT``, ``WHVCANVAS_API_KEY``, ``WHVCANVAS_MODEL``, and
    ``WHVCANVAS_TIMEOUT``.
    """
    from .mock import MockBackend

    env = env if env is not None else os.environ
    kind = env.get(f"{ENV_PREFIX}_BACKEND", "mock").lower()
    if kind == "mock":
        seed = int(env.get(f"{ENV_PREFIX}_MOCK_SEED", "0"))
        return MockBackend(seed=seed)
    if kind == "remote":
        endpoint = env.get(f"{ENV_PREFIX}_ENDPOINT", "")
        if not endpoint:
            raise BackendUnavailable("remote backend selected but WHVCANVAS_ENDPOINT unset")
        return RemoteBackend(RemoteConfig(
            endpoint=endpoint,
            api_key=env.get(f"{ENV_PREFIX}_API_KEY", ""),
            model=env.get(f"{ENV_PREFIX}_MODEL", ""),
            timeout=float(env.get(f"{ENV_PREFIX}_TIMEOUT", "30")),
        ))
    raise BackendUnavailable(f"unknown backend kind {kind!r}")
