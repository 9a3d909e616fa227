"""Canonical What-How-Value data model and structural validation.

An idea decomposes into typed fragments along two dimensions:

* pillar: ``what`` (form), ``how`` (mechanism), ``value`` (rationale)
* abstraction level: 25 (Fact), 50 (Insight), 75 (Principle), 100 (Vision)

A complete decomposition is a 12-slot fragment set, one fragment per
(level, pillar) pair.  Everything downstream (rewriting, merging, layout,
metrics) manipulates these units, so validation here is strict.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .errors import WhvError

# Hard ceiling on title/content length; generous on purpose so valid model
# output in any writing system is never rejected on style grounds.
MAX_TEXT_LEN = 500

LEVELS = (25, 50, 75, 100)
LEVEL_LABELS = {25: "L1", 50: "L2", 75: "L3", 100: "L4"}
LEVEL_NAMES = {25: "Fact", 50: "Insight", 75: "Principle", 100: "Vision"}


class Pillar(str, enum.Enum):
    WHAT = "what"
    HOW = "how"
    VALUE = "value"

    def __str__(self) -> str:  # serialized form is the lowercase value
        return self.value


PILLAR_ORDER = (Pillar.WHAT, Pillar.HOW, Pillar.VALUE)

# All 12 slots in stable iteration order: level-ascending, what -> how -> value.
SLOT_ORDER: tuple[tuple[int, Pillar], ...] = tuple(
    (level, pillar) for level in LEVELS for pillar in PILLAR_ORDER
)


class AbstractionOperator(str, enum.Enum):
    """Per-pillar perspective-shift operators.

    Each operator is bound to exactly one pillar: ELEVATE generalizes what-
    fragments, MECH extracts mechanisms from how-fragments, VALUE derives
    value positions from value-fragments.
    """

    ELEVATE = "Op_ELEVATE"
    MECH = "Op_MECH"
    VALUE = "Op_VALUE"

    @property
    def pillar(self) -> Pillar:
        return _OPERATOR_PILLAR[self]

    @property
    def semantics(self) -> str:
        return _OPERATOR_SEMANTICS[self]


_OPERATOR_PILLAR = {
    AbstractionOperator.ELEVATE: Pillar.WHAT,
    AbstractionOperator.MECH: Pillar.HOW,
    AbstractionOperator.VALUE: Pillar.VALUE,
}

_OPERATOR_SEMANTICS = {
    AbstractionOperator.ELEVATE: "Generalizes context-specific fragments into higher-level principles",
    AbstractionOperator.MECH: "Extracts causal mechanisms from surface phenomena",
    AbstractionOperator.VALUE: "Derives value positions through analogical transfer",
}


class InvalidLevel(WhvError):
    code = "invalid_level"

    def __init__(self, value):
        super().__init__(f"level must be one of {list(LEVELS)}, got {value!r}")
        self.value = value


class InvalidPillar(WhvError):
    code = "invalid_pillar"

    def __init__(self, value):
        super().__init__(f"pillar must be one of ['what', 'how', 'value'], got {value!r}")
        self.value = value


class EmptyField(WhvError):
    code = "empty_field"

    def __init__(self, key: str):
        super().__init__(f"field {key!r} is empty or missing")
        self.key = key


class TextTooLong(WhvError):
    code = "text_too_long"

    def __init__(self, key: str, length: int):
        super().__init__(f"field {key!r} has {length} characters (hard ceiling {MAX_TEXT_LEN})")
        self.key = key


class WrongCount(WhvError):
    code = "wrong_count"

    def __init__(self, n: int):
        super().__init__(f"a fragment set needs exactly 12 fragments, got {n}")
        self.n = n


class DuplicateSlot(WhvError):
    code = "duplicate_slot"

    def __init__(self, level: int, pillar: Pillar):
        super().__init__(f"slot (level={level}, pillar={pillar}) filled more than once")
        self.level = level
        self.pillar = pillar


class MissingSlot(WhvError):
    code = "missing_slot"

    def __init__(self, level: int, pillar: Pillar):
        super().__init__(f"slot (level={level}, pillar={pillar}) missing")
        self.level = level
        self.pillar = pillar


class LinkCycle(WhvError):
    code = "link_cycle"


class UnknownNode(WhvError):
    code = "unknown_node"


def level_label(level: int) -> str:
    """Map an abstraction level to its rung label (25->L1 ... 100->L4)."""
    try:
        return LEVEL_LABELS[level]
    except (KeyError, TypeError):
        raise InvalidLevel(level) from None


def normalize_level(value) -> int:
    """Accept ints, floats equal to an int, and numeric strings ("25")."""
    if isinstance(value, bool):
        raise InvalidLevel(value)
    if isinstance(value, str):
        try:
            value = int(value.strip())
        except ValueError:
            raise InvalidLevel(value) from None
    if isinstance(value, float):
        if not value.is_integer():
            raise InvalidLevel(value)
        value = int(value)
    if value not in LEVELS:
        raise InvalidLevel(value)
    return int(value)


def normalize_pillar(value) -> Pillar:
    """Accept mixed-case pillar strings; reject anything outside the enum."""
    if isinstance(value, Pillar):
        return value
    if not isinstance(value, str):
        raise InvalidPillar(value)
    try:
        return Pillar(value.strip().lower())
    except ValueError:
        raise InvalidPillar(value) from None


@dataclass(frozen=True)
class Fragment:
    """One typed idea unit: a short titled sentence at a fixed slot."""

    pillar: Pillar
    level: int
    title: str
    content: str
    id: Optional[int] = None

    @property
    def label(self) -> str:
        return LEVEL_LABELS[self.level]

    @property
    def slot(self) -> tuple[int, Pillar]:
        return (self.level, self.pillar)

    def with_id(self, frag_id: int) -> "Fragment":
        return replace(self, id=frag_id)

    def to_record(self) -> dict:
        """Canonical flat serialization: {"level", "pillar", "title", "content"}."""
        return {
            "level": self.level,
            "pillar": self.pillar.value,
            "title": self.title,
            "content": self.content,
        }


def _clean_text(raw: Mapping, key: str) -> str:
    value = raw.get(key)
    if value is None or not isinstance(value, str):
        raise EmptyField(key)
    value = value.strip()
    if not value:
        raise EmptyField(key)
    if len(value) > MAX_TEXT_LEN:
        raise TextTooLong(key, len(value))
    return value


def validate_fragment(raw: Mapping, frag_id: Optional[int] = None) -> Fragment:
    """Validate a parsed key-value record into a Fragment.

    Normalizes pillar case and numeric-string levels before checking; rejects
    out-of-range levels, unknown pillars, and empty title/content.
    """
    if "level" not in raw:
        raise InvalidLevel(None)
    if "pillar" not in raw:
        raise InvalidPillar(None)
    level = normalize_level(raw["level"])
    pillar = normalize_pillar(raw["pillar"])
    title = _clean_text(raw, "title")
    content = _clean_text(raw, "content")
    return Fragment(pillar=pillar, level=level, title=title, content=content, id=frag_id)


@dataclass(frozen=True)
class FragmentSet:
    """The complete 12-slot decomposition of one node.

    Exactly one fragment per (level, pillar) pair; iteration is level-ascending
    with pillars ordered what -> how -> value, which fixes serialization order.
    """

    slots: Mapping[tuple[int, Pillar], Fragment]

    def __post_init__(self):
        missing = [s for s in SLOT_ORDER if s not in self.slots]
        if missing:
            raise MissingSlot(*missing[0])
        if len(self.slots) != 12:
            raise WrongCount(len(self.slots))

    def __iter__(self) -> Iterator[Fragment]:
        for slot in SLOT_ORDER:
            yield self.slots[slot]

    def __len__(self) -> int:
        return 12

    def get(self, level: int, pillar: Pillar) -> Fragment:
        return self.slots[(level, pillar)]

    def fragments(self) -> list[Fragment]:
        return list(self)

    def by_pillar(self, pillar: Pillar) -> list[Fragment]:
        return [f for f in self if f.pillar == pillar]

    def to_records(self) -> list[dict]:
        """Serialize as the canonical 12-element array in stable order."""
        return [f.to_record() for f in self]


def validate_fragment_set(fragments: Sequence[Fragment]) -> FragmentSet:
    """Accept a fragment list iff it fills all 12 slots exactly once.

    Acceptance is order-independent; duplicates are reported before missing
    slots so the caller sees the actual defect first.
    """
    if len(fragments) != 12:
        raise WrongCount(len(fragments))
    slots: dict[tuple[int, Pillar], Fragment] = {}
    for frag in fragments:
        if frag.slot in slots:
            raise DuplicateSlot(frag.level, frag.pillar)
        slots[frag.slot] = frag
    for slot in SLOT_ORDER:
        if slot not in slots:
            raise MissingSlot(*slot)
    return FragmentSet(slots=slots)


class LinkKind(str, enum.Enum):
    DRAGOUT = "dragout"
    MERGE = "merge"
    STEER = "steer"
    ANALYZE_CHILD = "analyze-child"


@dataclass(frozen=True)
class ParentLink:
    parent_id: str
    kind: LinkKind

    def to_record(self) -> dict:
        return {"parent_id": self.parent_id, "kind": self.kind.value}


@dataclass
class IdeaNode:
    """A canvas node: raw idea text plus an optional 12-slot decomposition.

    ``parent_links`` record provenance (drag-out, merge, steer); the link graph
    must stay acyclic, which holds structurally because a parent's creation
    index is always smaller than its child's.
    """

    id: str
    title: str
    content: str
    created_at: int
    fragments: Optional[FragmentSet] = None
    parent_links: list[ParentLink] = field(default_factory=list)
    fragment_history: list[FragmentSet] = field(default_factory=list)

    def attach_fragments(self, fragment_set: FragmentSet) -> None:
        """Replace the fragment set atomically, retaining the old one in history."""
        if self.fragments is not None:
            self.fragment_history.append(self.fragments)
        self.fragments = fragment_set

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "title": self.title,
            "content": self.content,
            "created_at": self.created_at,
            "parent_links": [pl.to_record() for pl in self.parent_links],
            "fragments": None,
        }
        if self.fragments is not None:
            rec["fragments"] = [
                dict(f.to_record(), id=f.id) for f in self.fragments
            ]
        return rec


def check_parent_links(node: IdeaNode, known: Mapping[str, IdeaNode]) -> None:
    """Enforce node-link invariants: parents exist, no self-link, parent older."""
    for link in node.parent_links:
        if link.parent_id == node.id:
            raise LinkCycle(f"node {node.id} links to itself")
        parent = known.get(link.parent_id)
        if parent is None:
            raise UnknownNode(f"parent {link.parent_id} of node {node.id} does not exist")
        if parent.created_at >= node.created_at:
            raise LinkCycle(
                f"parent {parent.id} (created {parent.created_at}) is not older than "
                f"child {node.id} (created {node.created_at})"
            )


def fragments_from_records(records: Iterable[Mapping]) -> list[Fragment]:
    """Validate a list of raw records into fragments, in order."""
    return [validate_fragment(rec) for rec in records]
