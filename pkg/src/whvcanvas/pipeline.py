"""Staged idea transformations over canvas nodes.

Analyze extracts a node's 12-slot fragment decomposition; Transform rewrites
every slot under prototype-graph guidance; Merge combines nodes or fragments
through fixed operators and targeted modes; Steer rewrites a node toward
nearby theme anchors.  Every stage is human-triggered and atomic: on error
the node is left untouched.
"""

from __future__ import annotations

import enum
import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import (
    PILLAR_ORDER,
    SLOT_ORDER,
    AbstractionOperator,
    Fragment,
    FragmentSet,
    IdeaNode,
    LinkKind,
    ParentLink,
    Pillar,
    fragments_from_records,
    level_label,
    validate_fragment_set,
)
from .embedding import EmbeddingProvider, HashingEmbedder, cosine
from .errors import WhvError
from .linkmodel import LinkModel, forward, predict_topk
from .llm.gateway import (
    Backend,
    SchemaRetryExhausted,
    generate,
    generate_structured,
    request_for,
)
from .llm.parsing import parse_json_array, parse_json_object
from .protograph import PrototypeGraph, ShiftType, find_anchor, normalize_shift

DEFAULT_TOPK = 5
DEFAULT_STEER_K = 3
DEFAULT_STEER_TAU = 0.5
TITLE_MAX_WORDS = 8


class NotAnalyzed(WhvError):
    code = "not_analyzed"


class UnclassifiableShift(WhvError):
    code = "unclassifiable_shift"


class TransformFailure(WhvError):
    code = "transform_failure"


class OperatorPillarMismatch(WhvError):
    code = "operator_pillar_mismatch"


class MergeOutputInvalid(WhvError):
    code = "merge_output_invalid"


class InvalidMergeItems(WhvError):
    code = "invalid_merge_items"


class TooFewThemes(WhvError):
    code = "too_few_themes"


class MergeOperator(str, enum.Enum):
    WH = "Op_WH"
    VW = "Op_VW"
    HV = "Op_HV"
    WHV = "Op_WHV"


class TargetedMode(str, enum.Enum):
    BRAINSTORM = "Brainstorm"
    EXPERIMENTAL_INNOVATION = "ExperimentalInnovation"
    FUTURE_VISION = "FutureVision"
    PRODUCT_CONCEPT = "ProductConcept"


@dataclass
class PipelineResources:
    """Shared read-only context: backend plus per-pillar graphs and models."""

    backend: Backend
    embedder: EmbeddingProvider = field(default_factory=HashingEmbedder)
    graphs: dict[Pillar, PrototypeGraph] = field(default_factory=dict)
    models: dict[Pillar, LinkModel] = field(default_factory=dict)
    _h_cache: dict[Pillar, np.ndarray] = field(default_factory=dict, repr=False)

    def node_representations(self, pillar: Pillar) -> Optional[np.ndarray]:
        if pillar not in self.graphs or pillar not in self.models:
            return None
        if pillar not in self._h_cache:
            self._h_cache[pillar] = forward(self.models[pillar], self.graphs[pillar])
        return self._h_cache[pillar]

    def prototype_texts(self, pillar: Pillar, anchor: int, shift: ShiftType,
                        k: int) -> list[str]:
        h = self.node_representations(pillar)
        if h is None:
            return []
        graph = self.graphs[pillar]
        hits = predict_topk(self.models[pillar], graph, anchor, shift, k, h=h)
        return [graph.text_of(i) for i, _score in hits]


def derive_title(content: str, max_words: int = TITLE_MAX_WORDS) -> str:
    words = content.split()
    title = " ".join(words[:max_words]).rstrip(".,;:!?")
    return title or content[:40]


def _node_context(node: IdeaNode) -> str:
    return f"Title: {node.title}\nContent: {node.content}"


# -- Stage 1: analyze ----------------------------------------------------------

def analyze(
    node: IdeaNode,
    backend: Backend,
    next_id: Optional[Callable[[], int]] = None,
) -> FragmentSet:
    """Extract the node's 12-slot decomposition and attach it.

    The extractor output must fill every (level, pillar) slot exactly once;
    a schema violation triggers one corrective retry before failing.  The
    previous fragment set, if any, is kept in the node's history.
    """
    if not node.content.strip():
        raise NotAnalyzed("node has no content to analyze")

    def parse(text: str) -> FragmentSet:
        records = parse_json_array(text)
        fragments = fragments_from_records(records)
        fragment_set = validate_fragment_set(fragments)
        for pillar in PILLAR_ORDER:
            levels = [f.level for f in fragment_set.by_pillar(pillar)]
            assert levels == [25, 50, 75, 100], levels
        return fragment_set

    fragment_set = generate_structured(
        backend, "extractor", {"raw": node.content}, parse=parse,
    )
    if next_id is not None:
        fragment_set = validate_fragment_set(
            [f.with_id(next_id()) for f in fragment_set]
        )
    node.attach_fragments(fragment_set)
    return fragment_set


# -- Stage 2: transform --------------------------------------------------------

def classify_shift_type(
    pillar: Pillar,
    seed_text: str,
    node_context: str,
    backend: Backend,
) -> ShiftType:
    """Pick one of the four shift relations for a seed fragment."""

    def parse(text: str) -> ShiftType:
        cleaned = re.sub(r"[^a-z_-]", "", text.strip().lower().split()[-1] if text.strip() else "")
        try:
            return normalize_shift(cleaned)
        except WhvError:
            raise UnclassifiableShift(f"output {text!r} is not a shift type") from None

    bindings = {"pillar": pillar.value, "seed_text": seed_text, "node_context": node_context}
    try:
        return generate_structured(backend, "shift_classifier", bindings, parse=parse)
    except SchemaRetryExhausted as exc:
        raise UnclassifiableShift(exc.detail) from None


@dataclass(frozen=True)
class TransformEdge:
    from_fragment: int
    to_fragment: int
    shift: ShiftType
    level: int

    def to_record(self) -> dict:
        return {
            "from": self.from_fragment,
            "to": self.to_fragment,
            "shift": self.shift.value,
            "level": self.level,
        }


@dataclass
class SlotRecord:
    level: int
    pillar: Pillar
    seed_fragment: Optional[int]
    shift: Optional[ShiftType]
    anchor: Optional[int]
    anchor_similarity: Optional[float]
    prototypes: list[str]
    new_fragment: Optional[int]
    fallback: bool

    def to_record(self) -> dict:
        return {
            "level": self.level,
            "pillar": self.pillar.value,
            "seed_fragment": self.seed_fragment,
            "shift": self.shift.value if self.shift else None,
            "anchor": self.anchor,
            "anchor_similarity": self.anchor_similarity,
            "prototypes": list(self.prototypes),
            "new_fragment": self.new_fragment,
            "fallback": self.fallback,
        }


@dataclass
class TransformRun:
    node_id: str
    slots: list[SlotRecord] = field(default_factory=list)
    status: str = "success"

    def to_record(self) -> dict:
        return {
            "node_id": self.node_id,
            "status": self.status,
            "slots": [s.to_record() for s in self.slots],
        }


def _clean_rewrite(text: str) -> str:
    for line in text.strip().splitlines():
        line = line.strip().strip('"').strip("'").strip()
        if line:
            return line[:500]
    return ""


def transform_node(
    node: IdeaNode,
    resources: PipelineResources,
    k: int = DEFAULT_TOPK,
    next_id: Optional[Callable[[], int]] = None,
) -> tuple[FragmentSet, TransformRun, list[TransformEdge]]:
    """Rewrite all 12 fragments under prototype-graph guidance.

    Per slot: classify the shift, anchor the seed in its pillar graph,
    retrieve top-k prototype texts, and rewrite.  An empty rewrite (or an
    unclassifiable shift) degrades to keeping the seed text for that slot;
    fewer than 12 produced fragments fails the whole run and leaves the node
    unchanged.
    """
    if node.fragments is None:
        raise NotAnalyzed(f"node {node.id} has no fragment decomposition")
    # Read the raw slot map so a corrupted set (missing slot) degrades into a
    # counted failure below instead of a KeyError during iteration.
    slot_map = dict(node.fragments.slots)
    if next_id is None:
        ids = [f.id for f in slot_map.values() if f.id is not None]
        counter = itertools.count(max(ids, default=0) + 1)
        next_id = lambda: next(counter)
    refreshed: Optional[FragmentSet] = None
    if len(slot_map) == 12 and any(f.id is None for f in slot_map.values()):
        refreshed = validate_fragment_set(
            [f.with_id(next_id()) for f in slot_map.values()]
        )
        slot_map = dict(refreshed.slots)

    context = _node_context(node)
    run = TransformRun(node_id=node.id)
    new_fragments: list[Fragment] = []
    edges: list[TransformEdge] = []

    for level, pillar in SLOT_ORDER:
        seed = slot_map.get((level, pillar))
        if seed is None:
            run.slots.append(SlotRecord(
                level=level, pillar=pillar, seed_fragment=None, shift=None,
                anchor=None, anchor_similarity=None, prototypes=[],
                new_fragment=None, fallback=True,
            ))
            continue

        shift: Optional[ShiftType] = None
        anchor_id: Optional[int] = None
        anchor_sim: Optional[float] = None
        prototypes: list[str] = []
        fallback = False
        try:
            shift = classify_shift_type(pillar, seed.content, context, resources.backend)
        except UnclassifiableShift:
            fallback = True

        if shift is not None:
            graph = resources.graphs.get(pillar)
            if graph is not None and graph.node_count:
                hit = find_anchor(seed.content, graph, embedder=resources.embedder)
                if hit is not None:
                    anchor_id, anchor_sim = hit
                    prototypes = resources.prototype_texts(pillar, anchor_id, shift, k)
            rewritten = _clean_rewrite(generate(resources.backend, request_for(
                "rewriter",
                {
                    "pillar": pillar.value,
                    "level": level,
                    "node_context": context,
                    "seed_text": seed.content,
                    "topk_prototypes": prototypes,
                    "shift_type": shift.value,
                },
            )))
            if not rewritten:
                rewritten = seed.content
                fallback = True
        else:
            rewritten = seed.content

        new_frag = Fragment(
            pillar=pillar, level=level,
            title=derive_title(rewritten), content=rewritten,
            id=next_id(),
        )
        new_fragments.append(new_frag)
        if shift is not None:
            edges.append(TransformEdge(
                from_fragment=seed.id, to_fragment=new_frag.id,
                shift=shift, level=level,
            ))
        run.slots.append(SlotRecord(
            level=level, pillar=pillar, seed_fragment=seed.id, shift=shift,
            anchor=anchor_id, anchor_similarity=anchor_sim,
            prototypes=prototypes, new_fragment=new_frag.id, fallback=fallback,
        ))

    if len(new_fragments) < 12:
        run.status = "failure"
        raise TransformFailure(
            f"only {len(new_fragments)} of 12 slots produced a rewrite"
        )

    new_set = validate_fragment_set(new_fragments)
    if refreshed is not None:
        node.attach_fragments(refreshed)  # give edge sources attached identities
    node.attach_fragments(new_set)
    return new_set, run, edges


def transform_fragment(
    fragment: Fragment,
    operator: AbstractionOperator,
    backend: Backend,
    next_id: Optional[Callable[[], int]] = None,
) -> Fragment:
    """Rewrite one fragment under its pillar's abstraction operator.

    Pillar and level never change; the operator's semantics drive the rewrite
    in place of a classified shift.
    """
    if operator.pillar is not fragment.pillar:
        raise OperatorPillarMismatch(
            f"{operator.value} applies to {operator.pillar.value} fragments, "
            f"got {fragment.pillar.value}"
        )
    rewritten = _clean_rewrite(generate(backend, request_for(
        "rewriter",
        {
            "pillar": fragment.pillar.value,
            "level": fragment.level,
            "node_context": f"Fragment: {fragment.title}",
            "seed_text": fragment.content,
            "topk_prototypes": [],
            "shift_type": f"{operator.value}: {operator.semantics}",
        },
    )))
    if not rewritten:
        rewritten = fragment.content
    return Fragment(
        pillar=fragment.pillar, level=fragment.level,
        title=derive_title(rewritten), content=rewritten,
        id=next_id() if next_id else None,
    )


# -- Stage 3: merge ------------------------------------------------------------

def detect_merge_mode(fragments: Sequence[Fragment]) -> Optional[TargetedMode]:
    """Exact pattern match on the multiset of (pillar, level) pairs.

    Brainstorm is tested before ExperimentalInnovation so the exact
    (how 75, value 100) pair resolves to the more specific mode.
    """
    pairs = sorted((f.pillar.value, f.level) for f in fragments)
    if pairs == [("how", 75), ("value", 100)]:
        return TargetedMode.BRAINSTORM
    if pairs in ([("how", 75), ("value", 75)], [("how", 75), ("value", 100)]):
        return TargetedMode.EXPERIMENTAL_INNOVATION
    if pairs == [("how", 100), ("value", 100)]:
        return TargetedMode.FUTURE_VISION
    if pairs == [("how", 50), ("how", 50)]:
        return TargetedMode.PRODUCT_CONCEPT
    return None


_PILLAR_ESSENCE = {
    Pillar.WHAT: "what the thing is: the artifact, object, or form being proposed",
    Pillar.HOW: "how it works: the mechanism, method, or process that makes it function",
    Pillar.VALUE: "why it matters: the value, benefit, or changed state it brings about",
}


def dominant_pillar(text: str, embedder: EmbeddingProvider) -> Pillar:
    """Nearest pillar-definition embedding; deterministic tie toward order."""
    vec = embedder.embed(text).vector
    best, best_sim = PILLAR_ORDER[0], -2.0
    for pillar in PILLAR_ORDER:
        sim = cosine(vec, embedder.embed(_PILLAR_ESSENCE[pillar]).vector)
        if sim > best_sim:
            best, best_sim = pillar, sim
    return best


def infer_operator(pillars: Sequence[Pillar]) -> MergeOperator:
    distinct = set(pillars)
    if distinct == {Pillar.WHAT, Pillar.HOW}:
        return MergeOperator.WH
    if distinct == {Pillar.VALUE, Pillar.WHAT}:
        return MergeOperator.VW
    if distinct == {Pillar.HOW, Pillar.VALUE}:
        return MergeOperator.HV
    return MergeOperator.WHV


def _parse_single_sentence(text: str) -> str:
    cleaned = text.strip()
    if not cleaned:
        raise MergeOutputInvalid("merge output is empty")
    if "\n" in cleaned:
        raise MergeOutputInvalid("merge output spans multiple lines")
    if cleaned[0] in "\"'" or cleaned[-1] in "\"'":
        raise MergeOutputInvalid("merge output is quoted")
    return cleaned


def _merge_title(backend: Backend, member_titles: Sequence[str]) -> str:
    text = generate(backend, request_for(
        "cluster_label", {"member_titles": list(member_titles)}
    ))
    title = text.strip().splitlines()[0].strip() if text.strip() else ""
    return derive_title(title or " ".join(member_titles))


MergeItems = Union[Sequence[IdeaNode], Sequence[tuple[Fragment, str]]]


@dataclass
class MergeResult:
    title: str
    content: str
    parent_ids: list[str]
    operator: Optional[MergeOperator]
    mode: Optional[TargetedMode]


def merge(
    items: MergeItems,
    backend: Backend,
    operator: Optional[MergeOperator] = None,
    embedder: Optional[EmbeddingProvider] = None,
) -> MergeResult:
    """Combine 2-4 nodes (via an operator) or fragments (via a targeted mode).

    Fragments are passed as (fragment, owner node id) pairs.  The output is a
    single unquoted sentence; one corrective retry, then MergeOutputInvalid.
    """
    if not 2 <= len(items) <= 4:
        raise InvalidMergeItems(f"merge takes 2-4 items, got {len(items)}")
    is_node = [isinstance(item, IdeaNode) for item in items]
    if all(is_node):
        return _merge_nodes(list(items), backend, operator, embedder or HashingEmbedder())
    if any(is_node):
        raise InvalidMergeItems("cannot mix whole nodes and fragments in one merge")
    return _merge_fragments(list(items), backend, operator)


def _merge_nodes(
    nodes: list[IdeaNode],
    backend: Backend,
    operator: Optional[MergeOperator],
    embedder: EmbeddingProvider,
) -> MergeResult:
    if operator is None:
        pillars = [dominant_pillar(f"{n.title} {n.content}", embedder) for n in nodes]
        operator = infer_operator(pillars)
    insights = [f"{n.title}: {n.content}" for n in nodes]
    try:
        content = generate_structured(
            backend, "merge_nodes",
            {"operator": operator.value, "insights": insights},
            parse=_parse_single_sentence,
        )
    except SchemaRetryExhausted as exc:
        raise MergeOutputInvalid(exc.detail) from None
    return MergeResult(
        title=_merge_title(backend, [n.title for n in nodes]),
        content=content,
        parent_ids=[n.id for n in nodes],
        operator=operator,
        mode=None,
    )


def _merge_fragments(
    items: list[tuple[Fragment, str]],
    backend: Backend,
    operator: Optional[MergeOperator],
) -> MergeResult:
    fragments = [frag for frag, _owner in items]
    mode = detect_merge_mode(fragments)
    if mode is not None:
        mode_text = mode.value
        used_operator = None
    else:
        used_operator = operator or MergeOperator.WHV
        mode_text = f"Default ({used_operator.value})"
    lines = [
        f"{f.pillar.value} {level_label(f.level)} ({f.level}): {f.content}"
        for f in fragments
    ]
    try:
        content = generate_structured(
            backend, "merge_fragments",
            {"mode": mode_text, "fragments": lines},
            parse=_parse_single_sentence,
        )
    except SchemaRetryExhausted as exc:
        raise MergeOutputInvalid(exc.detail) from None
    parent_ids: list[str] = []
    for _frag, owner in items:
        if owner not in parent_ids:
            parent_ids.append(owner)
    return MergeResult(
        title=_merge_title(backend, [f.title for f in fragments]),
        content=content,
        parent_ids=parent_ids,
        operator=used_operator,
        mode=mode,
    )


def make_merged_node(
    result: MergeResult,
    node_id: str,
    created_at: int,
) -> IdeaNode:
    return IdeaNode(
        id=node_id,
        title=result.title,
        content=result.content,
        created_at=created_at,
        parent_links=[ParentLink(pid, LinkKind.MERGE) for pid in result.parent_ids],
    )


# -- Steering ------------------------------------------------------------------

def steer_weights(distances: Sequence[float], tau: float = DEFAULT_STEER_TAU) -> np.ndarray:
    """Proximity softmax: w_i = exp(-d_i / tau) / sum_j exp(-d_j / tau)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise TooFewThemes("steering needs at least one theme distance")
    logits = -d / tau
    logits -= logits.max()  # stable against extreme tau
    w = np.exp(logits)
    return w / w.sum()


@dataclass
class SteerResult:
    title: str
    content: str
    primary_theme: str
    weights: list[tuple[str, float]]  # (theme title, weight), nearest first


def steer(
    node: IdeaNode,
    dropped_position: tuple[float, float],
    themes: Sequence[tuple[str, str, tuple[float, float]]],  # (id, title, anchor)
    backend: Backend,
    k: int = DEFAULT_STEER_K,
    tau: float = DEFAULT_STEER_TAU,
) -> SteerResult:
    """Rewrite a node toward the K nearest theme anchors of its drop point."""
    if not themes:
        raise TooFewThemes("steering requires at least one theme")
    px, py = dropped_position
    ranked = sorted(
        (
            (math.dist((px, py), anchor), theme_id, title)
            for theme_id, title, anchor in themes
        ),
        key=lambda row: (row[0], row[1]),
    )[:max(1, k)]
    weights = steer_weights([d for d, _i, _t in ranked], tau=tau)
    weighted = [
        f"{title} w={w:.2f}" for (_d, _i, title), w in zip(ranked, weights)
    ]
    primary = ranked[int(np.argmax(weights))][2]
    out = generate_structured(
        backend, "steering",
        {
            "primary_theme": primary,
            "weighted_themes": weighted,
            "original_node": _node_context(node),
        },
        parse=lambda text: parse_json_object(text, required_keys=("title", "content")),
    )
    return SteerResult(
        title=str(out["title"]).strip() or node.title,
        content=str(out["content"]).strip() or node.content,
        primary_theme=primary,
        weights=[(title, float(w)) for (_d, _i, title), w in zip(ranked, weights)],
    )
