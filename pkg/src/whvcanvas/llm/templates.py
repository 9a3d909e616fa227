"""Prompt-template catalogue.

Templates ship as versioned text files under ``templates/<version>/``.  A
placeholder is ``[name]`` where name is a lowercase identifier; rendering
substitutes each binding verbatim, and list-valued bindings render one item
per line prefixed with ``"- "``.  The catalogue refuses to load a template
whose placeholder set disagrees with its declared required bindings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence, Union

from ..errors import WhvError

TEMPLATE_VERSION = "v1"

_PLACEHOLDER_RE = re.compile(r"\[([a-z][a-z0-9_]*)\]")

# Template id -> required binding names.
REQUIRED_BINDINGS: dict[str, frozenset[str]] = {
    "extractor": frozenset({"raw"}),
    "rewriter": frozenset(
        {"pillar", "level", "node_context", "seed_text", "topk_prototypes", "shift_type"}
    ),
    "merge_nodes": frozenset({"operator", "insights"}),
    "merge_fragments": frozenset({"mode", "fragments"}),
    "steering": frozenset({"primary_theme", "weighted_themes", "original_node"}),
    "cluster_label": frozenset({"member_titles"}),
    "shift_classifier": frozenset({"pillar", "seed_text", "node_context"}),
    "corpus_expander": frozenset({"pillar", "seed_examples", "batch_size"}),
}

TEMPLATE_IDS = tuple(sorted(REQUIRED_BINDINGS))

BindingValue = Union[str, int, float, Sequence[str]]


class UnknownTemplate(WhvError):
    code = "unknown_template"

    def __init__(self, template_id: str):
        super().__init__(f"no template named {template_id!r}")
        self.template_id = template_id


class MissingBinding(WhvError):
    code = "missing_binding"

    def __init__(self, name: str):
        super().__init__(f"binding {name!r} not supplied")
        self.name = name


class TemplateMismatch(WhvError):
    code = "template_mismatch"


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str
    required_bindings: frozenset[str]

    def placeholders(self) -> frozenset[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.body))

    def render(self, bindings: Mapping[str, BindingValue]) -> str:
        missing = self.required_bindings - set(bindings)
        if missing:
            raise MissingBinding(sorted(missing)[0])

        # Single pass: binding values are substituted verbatim and never
        # re-scanned, so a value containing "[name]" cannot trigger a second
        # substitution.
        def sub(match: re.Match) -> str:
            name = match.group(1)
            if name in self.required_bindings:
                return _format_binding(bindings[name])
            return match.group(0)

        return _PLACEHOLDER_RE.sub(sub, self.body)


def _format_binding(value: BindingValue) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)):
        return str(value)
    if isinstance(value, (list, tuple)):
        if not value:
            return "- (none)"
        return "\n".join(f"- {item}" for item in value)
    raise TemplateMismatch(f"unsupported binding type {type(value).__name__}")


class TemplateCatalogue:
    """Loads and validates the versioned template set at construction time."""

    def __init__(self, version: str = TEMPLATE_VERSION):
        self.version = version
        self._templates: dict[str, PromptTemplate] = {}
        root = resources.files(__package__) / "templates" / version
        for template_id, required in REQUIRED_BINDINGS.items():
            path = root / f"{template_id}.txt"
            try:
                body = path.read_text(encoding="utf-8")
            except FileNotFoundError:
                raise TemplateMismatch(f"template file missing: {version}/{template_id}.txt")
            tpl = PromptTemplate(id=template_id, body=body, required_bindings=required)
            found = tpl.placeholders()
            if found != required:
                raise TemplateMismatch(
                    f"template {template_id!r} placeholders {sorted(found)} != "
                    f"required bindings {sorted(required)}"
                )
            self._templates[template_id] = tpl

    def get(self, template_id: str) -> PromptTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise UnknownTemplate(template_id) from None

    def render(self, template_id: str, bindings: Mapping[str, BindingValue]) -> str:
        return self.get(template_id).render(bindings)


_default_catalogue: TemplateCatalogue | None = None


def default_catalogue() -> TemplateCatalogue:
    global _default_catalogue
    if _default_catalogue is None:
        _default_catalogue = TemplateCatalogue()
    return _default_catalogue


def render_prompt(template_id: str, bindings: Mapping[str, BindingValue]) -> str:
    """Render a catalogue template; fails on unknown ids or missing bindings."""
    return default_catalogue().render(template_id, bindings)
