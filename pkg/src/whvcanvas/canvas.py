"""Canvas state: nodes on a zoomable surface with themes, filters, and an
append-only interaction log.

Two layout modes exist.  Default mode keeps per-node positions (seeded
deterministically, adjustable).  Cluster mode projects every node into the
convex hull of theme anchors arranged on a regular k-gon, weighting each
anchor by a sharpened softmax over node-to-centroid similarity.

All mutation goes through Canvas methods so each change appends exactly one
event; callers serialize access per canvas.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .core import (
    EmptyField,
    Fragment,
    IdeaNode,
    LinkKind,
    ParentLink,
    Pillar,
    UnknownNode,
    check_parent_links,
    fragments_from_records,
    normalize_level,
    normalize_pillar,
    validate_fragment_set,
)
from .embedding import EmbeddingProvider, HashingEmbedder, auto_k, cosine, kmeans, label_cluster
from .errors import WhvError
from . import pipeline
from .pipeline import (
    MergeOperator,
    PipelineResources,
    SteerResult,
    TooFewThemes,
    TransformRun,
)

SNAPSHOT_VERSION = 1
MIN_ZOOM, MAX_ZOOM = 1, 6
MIN_CLUSTER_KEYS = 3
SOFTMAX_SHARPNESS = 4.0
S_MIN, S_MAX, INTEREST_CAP = 1.0, 2.5, 32
PREVIEW_CHARS = 80
_GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


class UnknownFragment(WhvError):
    code = "unknown_fragment"


class UnknownTheme(WhvError):
    code = "unknown_theme"


class DuplicateTheme(WhvError):
    code = "duplicate_theme"


class TooFewKeys(WhvError):
    code = "too_few_keys"


class InvalidZoom(WhvError):
    code = "invalid_zoom"


class WrongMode(WhvError):
    code = "wrong_mode"


class VersionMismatch(WhvError):
    code = "version_mismatch"


class CorruptSnapshot(WhvError):
    code = "corrupt_snapshot"


class Mode(str, enum.Enum):
    DEFAULT = "default"
    CLUSTER = "cluster"


class EventKind(str, enum.Enum):
    CREATE = "create"
    ANALYZE = "analyze"
    TRANSFORM = "transform"
    DRAGOUT = "dragout"
    MERGE = "merge"
    STEER = "steer"
    CLICK = "click"
    THEME_ADD = "theme_add"
    MODE_SWITCH = "mode_switch"
    ZOOM = "zoom"
    FILTER = "filter"


INTEREST_KINDS = frozenset({
    EventKind.ANALYZE, EventKind.TRANSFORM, EventKind.DRAGOUT,
    EventKind.MERGE, EventKind.STEER, EventKind.CLICK,
})

_ZOOM_STEPS = (
    ("position", "size"),
    ("title",),
    ("content_preview",),
    ("fragment_titles",),
    ("fragment_contents",),
    ("provenance",),
)


def zoom_granularity(zoom: int) -> frozenset[str]:
    """Cumulative field set per zoom step; each step strictly adds detail."""
    if not isinstance(zoom, int) or isinstance(zoom, bool) or not MIN_ZOOM <= zoom <= MAX_ZOOM:
        raise InvalidZoom(f"zoom must be an integer in [{MIN_ZOOM}, {MAX_ZOOM}], got {zoom!r}")
    fields: set[str] = set()
    for step in _ZOOM_STEPS[:zoom]:
        fields.update(step)
    return frozenset(fields)


@dataclass(frozen=True)
class InteractionEvent:
    seq: int
    at: float
    kind: EventKind
    subjects: tuple[str, ...]
    payload: dict

    def to_record(self) -> dict:
        return {
            "seq": self.seq,
            "at": self.at,
            "kind": self.kind.value,
            "subjects": list(self.subjects),
            "payload": self.payload,
        }

    @staticmethod
    def from_record(record: dict) -> "InteractionEvent":
        return InteractionEvent(
            seq=int(record["seq"]),
            at=float(record["at"]),
            kind=EventKind(record["kind"]),
            subjects=tuple(record["subjects"]),
            payload=dict(record["payload"]),
        )


@dataclass(frozen=True)
class ThemeKey:
    id: str
    title: str
    centroid: np.ndarray
    origin: str  # "manual" | "auto"

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "origin": self.origin,
            "centroid": [float(x) for x in self.centroid],
        }


def anchor_positions(theme_ids: Sequence[str]) -> dict[str, tuple[float, float]]:
    """Regular k-gon on the unit circle, ordered by theme id, first anchor at
    twelve o'clock, proceeding clockwise."""
    ordered = sorted(theme_ids)
    k = len(ordered)
    out = {}
    for i, theme_id in enumerate(ordered):
        angle = math.pi / 2 - 2 * math.pi * i / k
        out[theme_id] = (math.cos(angle), math.sin(angle))
    return out


def interest_size(count: int) -> float:
    scaled = S_MIN + (S_MAX - S_MIN) * math.log2(1 + max(0, count)) / math.log2(1 + INTEREST_CAP)
    return min(S_MAX, max(S_MIN, scaled))


@dataclass
class LayoutView:
    mode: Mode
    positions: dict[str, tuple[float, float]]
    sizes: dict[str, float]
    anchors: dict[str, tuple[float, float]] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "mode": self.mode.value,
            "positions": {k: [v[0], v[1]] for k, v in self.positions.items()},
            "sizes": dict(self.sizes),
            "anchors": {k: [v[0], v[1]] for k, v in self.anchors.items()},
        }


class Canvas:
    def __init__(self, canvas_id: str = "c1",
                 embedder: Optional[EmbeddingProvider] = None,
                 clock: Callable[[], float] = time.time):
        self.id = canvas_id
        self.embedder = embedder or HashingEmbedder()
        self.clock = clock
        self.nodes: dict[str, IdeaNode] = {}
        self.themes: dict[str, ThemeKey] = {}
        self.mode = Mode.DEFAULT
        self.zoom = MIN_ZOOM
        self.positions: dict[str, tuple[float, float]] = {}
        self.level_filter: set[int] = set()
        self.pillar_filter: set[Pillar] = set()
        self.events: list[InteractionEvent] = []
        self.runs: list[dict] = []
        self.transform_edges: list[dict] = []
        self._node_counter = 0
        self._fragment_counter = 0
        self._theme_counter = 0
        self._seq = 0

    # -- id allocation and event logging ------------------------------------

    def _next_node_id(self) -> str:
        self._node_counter += 1
        return f"n{self._node_counter}"

    def _next_theme_id(self) -> str:
        self._theme_counter += 1
        return f"t{self._theme_counter}"

    def _next_fragment_id(self) -> int:
        self._fragment_counter += 1
        return self._fragment_counter

    def _log(self, kind: EventKind, subjects: Sequence[str], **payload) -> InteractionEvent:
        self._seq += 1
        event = InteractionEvent(
            seq=self._seq, at=float(self.clock()), kind=kind,
            subjects=tuple(subjects), payload=payload,
        )
        self.events.append(event)
        return event

    def _get_node(self, node_id: str) -> IdeaNode:
        if node_id not in self.nodes:
            raise UnknownNode(node_id)
        return self.nodes[node_id]

    def find_fragment(self, fragment_id: int) -> tuple[IdeaNode, Fragment]:
        for node in self.nodes.values():
            if node.fragments is None:
                continue
            for frag in node.fragments:
                if frag.id == fragment_id:
                    return node, frag
        raise UnknownFragment(str(fragment_id))

    # -- node lifecycle -------------------------------------------------------

    def _spawn_position(self, index: int) -> tuple[float, float]:
        # Sunflower spiral keeps fresh nodes spread out deterministically.
        radius = 0.12 * math.sqrt(index)
        angle = index * _GOLDEN_ANGLE
        return (radius * math.cos(angle), radius * math.sin(angle))

    def _add_node(self, title: str, content: str,
                  parent_links: Sequence[ParentLink] = (),
                  position: Optional[tuple[float, float]] = None) -> IdeaNode:
        title = title.strip()
        content = content.strip()
        if not title:
            raise EmptyField("title")
        if not content:
            raise EmptyField("content")
        node = IdeaNode(
            id=self._next_node_id(), title=title, content=content,
            created_at=self._seq + 1,  # logical clock: the creating event's seq
            parent_links=list(parent_links),
        )
        check_parent_links(node, self.nodes)
        self.nodes[node.id] = node
        self.positions[node.id] = position or self._spawn_position(self._node_counter)
        return node

    def create_node(self, title: str, content: str) -> IdeaNode:
        node = self._add_node(title, content)
        self._log(EventKind.CREATE, [node.id], title=node.title)
        return node

    def click(self, node_id: str) -> InteractionEvent:
        self._get_node(node_id)
        return self._log(EventKind.CLICK, [node_id])

    # -- pipeline operations ----------------------------------------------------

    def analyze_node(self, node_id: str, backend) -> IdeaNode:
        node = self._get_node(node_id)
        pipeline.analyze(node, backend, next_id=self._next_fragment_id)
        self._log(EventKind.ANALYZE, [node_id],
                  fragments=[f.id for f in node.fragments])
        return node

    def transform_node(self, node_id: str, resources: PipelineResources,
                       k: int = pipeline.DEFAULT_TOPK) -> TransformRun:
        node = self._get_node(node_id)
        _, run, edges = pipeline.transform_node(
            node, resources, k=k, next_id=self._next_fragment_id,
        )
        run_record = run.to_record()
        edge_records = [e.to_record() for e in edges]
        self.runs.append(run_record)
        for record in edge_records:
            self.transform_edges.append({"node": node_id, **record})
        self._log(EventKind.TRANSFORM, [node_id],
                  run=run_record, edges=edge_records, k=k)
        return run

    def transform_fragment(self, fragment_id: int, operator, backend) -> Fragment:
        node, frag = self.find_fragment(fragment_id)
        rewritten = pipeline.transform_fragment(
            frag, operator, backend, next_id=self._next_fragment_id,
        )
        slots = {f.slot: f for f in node.fragments}
        slots[rewritten.slot] = rewritten
        node.attach_fragments(validate_fragment_set(list(slots.values())))
        self._log(EventKind.TRANSFORM, [node.id],
                  fragment=fragment_id, rewritten=rewritten.id,
                  operator=operator.value)
        return rewritten

    def drag_out(self, fragment_id: int) -> IdeaNode:
        source, frag = self.find_fragment(fragment_id)
        sx, sy = self.positions[source.id]
        child = self._add_node(
            frag.title, frag.content,
            parent_links=[ParentLink(source.id, LinkKind.DRAGOUT)],
            position=(sx + 0.15, sy + 0.15),
        )
        self._log(EventKind.DRAGOUT, [source.id, child.id], fragment=fragment_id)
        return child

    def merge(self, item_ids: Sequence[Union[str, int]], backend,
              operator: Optional[MergeOperator] = None) -> IdeaNode:
        if not item_ids:
            raise pipeline.InvalidMergeItems("merge needs items")
        if all(isinstance(i, str) for i in item_ids):
            items = [self._get_node(i) for i in item_ids]
        elif any(isinstance(i, str) for i in item_ids):
            raise pipeline.InvalidMergeItems(
                "merge items must be all node ids or all fragment ids")
        else:
            items = []
            for fid in item_ids:
                node, frag = self.find_fragment(int(fid))
                items.append((frag, node.id))
        result = pipeline.merge(items, backend, operator=operator,
                                embedder=self.embedder)
        parent_positions = [self.positions[pid] for pid in result.parent_ids]
        centroid = (
            sum(p[0] for p in parent_positions) / len(parent_positions),
            sum(p[1] for p in parent_positions) / len(parent_positions),
        )
        node = self._add_node(
            result.title, result.content,
            parent_links=[ParentLink(pid, LinkKind.MERGE) for pid in result.parent_ids],
            position=centroid,
        )
        self._log(EventKind.MERGE, [*result.parent_ids, node.id],
                  operator=result.operator.value if result.operator else None,
                  mode=result.mode.value if result.mode else None,
                  items=[str(i) for i in item_ids])
        return node

    def steer(self, node_id: str, position: tuple[float, float], backend,
              k: int = pipeline.DEFAULT_STEER_K,
              tau: float = pipeline.DEFAULT_STEER_TAU) -> IdeaNode:
        node = self._get_node(node_id)
        if self.mode is not Mode.CLUSTER:
            raise WrongMode("steering requires cluster mode")
        if not self.themes:
            raise TooFewThemes("steering requires at least one theme")
        anchors = anchor_positions(list(self.themes))
        theme_rows = [
            (theme_id, self.themes[theme_id].title, anchors[theme_id])
            for theme_id in sorted(self.themes)
        ]
        result: SteerResult = pipeline.steer(
            node, position, theme_rows, backend, k=k, tau=tau,
        )
        successor = self._add_node(
            result.title, result.content,
            parent_links=[ParentLink(node.id, LinkKind.STEER)],
            position=position,
        )
        self._log(EventKind.STEER, [node.id, successor.id],
                  primary=result.primary_theme,
                  weights=[[t, w] for t, w in result.weights],
                  at_position=[position[0], position[1]], k=k, tau=tau)
        return successor

    # -- themes and modes --------------------------------------------------------

    def add_theme(self, title: str, origin: str = "manual",
                  centroid: Optional[np.ndarray] = None) -> ThemeKey:
        title = title.strip()
        if not title:
            raise EmptyField("title")
        if any(t.title.lower() == title.lower() for t in self.themes.values()):
            raise DuplicateTheme(title)
        theme = ThemeKey(
            id=self._next_theme_id(), title=title,
            centroid=centroid if centroid is not None
            else self.embedder.embed(title).vector,
            origin=origin,
        )
        self.themes[theme.id] = theme
        self._log(EventKind.THEME_ADD, [theme.id], title=title, origin=origin)
        return theme

    def auto_themes(self, backend, k: Optional[int] = None) -> list[ThemeKey]:
        """Cluster node embeddings and add one labelled theme per cluster."""
        if not self.nodes:
            raise UnknownNode("canvas has no nodes to cluster")
        node_ids = sorted(self.nodes)
        vectors = np.stack([
            self.embedder.embed(f"{self.nodes[i].title} {self.nodes[i].content}").vector
            for i in node_ids
        ])
        k = k or min(auto_k(len(node_ids)), len(node_ids))
        clustering = kmeans(vectors, k=k, seed=0)
        created = []
        existing = {t.title.lower() for t in self.themes.values()}
        for cluster_index in range(k):
            members = [node_ids[i] for i in clustering.members(cluster_index)]
            if not members:
                continue
            label = label_cluster(backend, [self.nodes[m].title for m in members])
            base, n = label, 2
            while label.lower() in existing:
                label = f"{base} {n}"  # auto labels may collide; keep ids stable
                n += 1
            existing.add(label.lower())
            created.append(self.add_theme(
                label, origin="auto",
                centroid=clustering.centroids[cluster_index],
            ))
        return created

    def set_mode(self, mode: Union[Mode, str]) -> Mode:
        mode = Mode(mode)
        if mode is Mode.CLUSTER and len(self.themes) < MIN_CLUSTER_KEYS:
            raise TooFewKeys(
                f"cluster mode needs at least {MIN_CLUSTER_KEYS} themes, "
                f"have {len(self.themes)}")
        self.mode = mode
        self._log(EventKind.MODE_SWITCH, [], mode=mode.value)
        return mode

    def set_zoom(self, zoom: int) -> int:
        zoom_granularity(zoom)  # validates the range
        self.zoom = zoom
        self._log(EventKind.ZOOM, [], zoom=zoom)
        return zoom

    def set_filters(self, levels: Optional[Sequence] = None,
                    pillars: Optional[Sequence] = None) -> None:
        if levels is not None:
            self.level_filter = {normalize_level(l) for l in levels}
        if pillars is not None:
            self.pillar_filter = {normalize_pillar(p) for p in pillars}
        self._log(EventKind.FILTER, [],
                  levels=sorted(self.level_filter),
                  pillars=sorted(p.value for p in self.pillar_filter))

    # -- views ----------------------------------------------------------------

    def fragment_visible(self, frag: Fragment) -> bool:
        if self.level_filter and frag.level not in self.level_filter:
            return False
        if self.pillar_filter and frag.pillar not in self.pillar_filter:
            return False
        return True

    def node_visible(self, node: IdeaNode) -> bool:
        if node.fragments is None:
            return True
        return any(self.fragment_visible(f) for f in node.fragments)

    def visible_nodes(self) -> list[IdeaNode]:
        return [n for n in self.nodes.values() if self.node_visible(n)]

    def interest_count(self, node_id: str) -> int:
        return sum(
            1 for e in self.events
            if e.kind in INTEREST_KINDS and node_id in e.subjects
        )

    def node_size(self, node_id: str) -> float:
        self._get_node(node_id)
        return interest_size(self.interest_count(node_id))

    def layout(self) -> LayoutView:
        visible = self.visible_nodes()
        sizes = {n.id: interest_size(self.interest_count(n.id)) for n in visible}
        if self.mode is Mode.CLUSTER:
            anchors = anchor_positions(list(self.themes))
            positions = cluster_positions(
                visible, self.themes, anchors, self.embedder,
            )
            return LayoutView(mode=self.mode, positions=positions,
                              sizes=sizes, anchors=anchors)
        return LayoutView(
            mode=self.mode,
            positions={n.id: self.positions[n.id] for n in visible},
            sizes=sizes,
        )

    def node_view(self, node_id: str, zoom: Optional[int] = None) -> dict:
        node = self._get_node(node_id)
        fields = zoom_granularity(zoom if zoom is not None else self.zoom)
        view: dict = {"id": node.id}
        if "position" in fields:
            view["position"] = list(self.positions[node.id])
        if "size" in fields:
            view["size"] = interest_size(self.interest_count(node.id))
        if "title" in fields:
            view["title"] = node.title
        if "content_preview" in fields:
            view["content_preview"] = node.content[:PREVIEW_CHARS]
        if "fragment_titles" in fields and node.fragments is not None:
            view["fragment_titles"] = [
                {"id": f.id, "level": f.level, "pillar": f.pillar.value, "title": f.title}
                for f in node.fragments if self.fragment_visible(f)
            ]
        if "fragment_contents" in fields and node.fragments is not None:
            view["fragment_contents"] = [
                {"id": f.id, "content": f.content}
                for f in node.fragments if self.fragment_visible(f)
            ]
        if "provenance" in fields:
            view["provenance"] = {
                "parents": [l.to_record() for l in node.parent_links],
                "transform_edges": [
                    e for e in self.transform_edges if e["node"] == node.id
                ],
            }
        return view

    def related_nodes(self, node_id: str, k: int = 3,
                      corpus: Optional[Sequence[tuple[str, str]]] = None) -> dict:
        node = self._get_node(node_id)
        query = self.embedder.embed(f"{node.title} {node.content}").vector
        scored = []
        for other_id in sorted(self.nodes):
            if other_id == node_id:
                continue
            other = self.nodes[other_id]
            vec = self.embedder.embed(f"{other.title} {other.content}").vector
            scored.append((other_id, cosine(query, vec)))
        scored.sort(key=lambda row: (-row[1], row[0]))
        similar = scored[:k]
        dissimilar = sorted(scored, key=lambda row: (row[1], row[0]))[:k]
        cases = []
        for case_id, text in corpus or []:
            cases.append((case_id, cosine(query, self.embedder.embed(text).vector)))
        cases.sort(key=lambda row: (-row[1], row[0]))
        return {
            "similar": [{"id": i, "similarity": s} for i, s in similar],
            "dissimilar": [{"id": i, "similarity": s} for i, s in dissimilar],
            "cases": [{"id": i, "similarity": s} for i, s in cases[:k]],
        }


def cluster_positions(
    nodes: Sequence[IdeaNode],
    themes: dict[str, ThemeKey],
    anchors: dict[str, tuple[float, float]],
    embedder: EmbeddingProvider,
    sharpness: float = SOFTMAX_SHARPNESS,
) -> dict[str, tuple[float, float]]:
    """Place each node at the softmax-weighted mix of theme anchors.

    Weights are softmax(sharpness * cosine(node, centroid)) over themes in
    key-id order, so positions are convex combinations of the anchors and a
    permutation of the key set changes nothing.  Colliding positions get a
    small deterministic radial offset: contraction toward the center keeps
    interior points interior, and exact-center collisions fan out along a
    node-id-hashed direction well inside the k-gon's inradius.
    """
    if len(themes) < MIN_CLUSTER_KEYS:
        raise TooFewKeys(f"cluster layout needs {MIN_CLUSTER_KEYS} themes")
    ordered = sorted(themes)
    anchor_matrix = np.array([anchors[t] for t in ordered])
    positions: dict[str, tuple[float, float]] = {}
    for node in nodes:
        vec = embedder.embed(f"{node.title} {node.content}").vector
        sims = np.array([
            cosine(vec, themes[t].centroid) for t in ordered
        ])
        logits = sharpness * sims
        logits -= logits.max()
        weights = np.exp(logits)
        weights /= weights.sum()
        position = weights @ anchor_matrix
        positions[node.id] = (float(position[0]), float(position[1]))

    taken: dict[tuple[float, float], list[str]] = {}
    for node_id, pos in positions.items():
        key = (round(pos[0], 6), round(pos[1], 6))
        taken.setdefault(key, []).append(node_id)
    for key, ids in taken.items():
        if len(ids) < 2:
            continue
        for rank, node_id in enumerate(sorted(ids)[1:], start=1):
            x, y = positions[node_id]
            if math.hypot(x, y) > 1e-12:
                # Clamped at 0 so extreme pile-ups degrade to the center
                # instead of overshooting through it and out of the hull.
                scale = max(0.0, 1.0 - 0.004 * rank)
                positions[node_id] = (x * scale, y * scale)
            else:
                digest = hashlib.sha256(node_id.encode()).digest()
                angle = 2 * math.pi * digest[0] / 256.0
                # Any regular k-gon's inradius is at least cos(pi/3) = 0.5.
                radius = min(0.45, 0.004 * rank)
                positions[node_id] = (radius * math.cos(angle),
                                      radius * math.sin(angle))
    return positions


# -- snapshots ---------------------------------------------------------------


def canvas_to_record(canvas: Canvas) -> dict:
    def node_record(node: IdeaNode) -> dict:
        record = node.to_record()
        record["history"] = [
            [dict(f.to_record(), id=f.id) for f in fs]
            for fs in node.fragment_history
        ]
        return record

    return {
        "format_version": SNAPSHOT_VERSION,
        "id": canvas.id,
        "mode": canvas.mode.value,
        "zoom": canvas.zoom,
        "nodes": [node_record(canvas.nodes[i]) for i in sorted(canvas.nodes)],
        "themes": [canvas.themes[i].to_record() for i in sorted(canvas.themes)],
        "positions": {i: list(canvas.positions[i]) for i in sorted(canvas.positions)},
        "filters": {
            "levels": sorted(canvas.level_filter),
            "pillars": sorted(p.value for p in canvas.pillar_filter),
        },
        "runs": canvas.runs,
        "transform_edges": canvas.transform_edges,
        "counters": {
            "node": canvas._node_counter,
            "fragment": canvas._fragment_counter,
            "theme": canvas._theme_counter,
            "seq": canvas._seq,
        },
    }


def save_snapshot(canvas: Canvas, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    snapshot_path = directory / "canvas.json"
    snapshot_path.write_text(
        json.dumps(canvas_to_record(canvas), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    events_path = directory / "events.jsonl"
    with events_path.open("w", encoding="utf-8") as handle:
        for event in canvas.events:
            handle.write(json.dumps(event.to_record(), sort_keys=True) + "\n")
    return snapshot_path


def _fragments_with_ids(records: Sequence[dict]):
    fragments = fragments_from_records(records)
    return validate_fragment_set([
        f.with_id(r.get("id")) for f, r in zip(fragments, records)
    ])


def canvas_from_record(record: dict, events: Sequence[dict] = (),
                       embedder: Optional[EmbeddingProvider] = None,
                       clock: Callable[[], float] = time.time) -> Canvas:
    if not isinstance(record, dict) or "format_version" not in record:
        raise CorruptSnapshot("snapshot lacks a format_version")
    if record["format_version"] != SNAPSHOT_VERSION:
        raise VersionMismatch(
            f"snapshot format {record['format_version']}, "
            f"expected {SNAPSHOT_VERSION}")
    try:
        canvas = Canvas(canvas_id=record["id"], embedder=embedder, clock=clock)
        canvas.mode = Mode(record["mode"])
        canvas.zoom = int(record["zoom"])
        for node_record in record["nodes"]:
            node = IdeaNode(
                id=node_record["id"],
                title=node_record["title"],
                content=node_record["content"],
                created_at=node_record["created_at"],
                parent_links=[
                    ParentLink(l["parent_id"], LinkKind(l["kind"]))
                    for l in node_record["parent_links"]
                ],
            )
            for historical in node_record.get("history", []):
                node.fragment_history.append(_fragments_with_ids(historical))
            if node_record.get("fragments") is not None:
                node.fragments = _fragments_with_ids(node_record["fragments"])
            canvas.nodes[node.id] = node
        for theme_record in record["themes"]:
            canvas.themes[theme_record["id"]] = ThemeKey(
                id=theme_record["id"],
                title=theme_record["title"],
                centroid=np.asarray(theme_record["centroid"], dtype=np.float64),
                origin=theme_record["origin"],
            )
        canvas.positions = {
            i: (float(p[0]), float(p[1]))
            for i, p in record["positions"].items()
        }
        canvas.level_filter = {normalize_level(l) for l in record["filters"]["levels"]}
        canvas.pillar_filter = {normalize_pillar(p) for p in record["filters"]["pillars"]}
        canvas.runs = list(record.get("runs", []))
        canvas.transform_edges = list(record.get("transform_edges", []))
        counters = record["counters"]
        canvas._node_counter = int(counters["node"])
        canvas._fragment_counter = int(counters["fragment"])
        canvas._theme_counter = int(counters["theme"])
        canvas._seq = int(counters["seq"])
    except (KeyError, TypeError, ValueError, WhvError) as exc:
        raise CorruptSnapshot(f"snapshot structure invalid: {exc}") from None
    try:
        for event_record in events:
            canvas.events.append(InteractionEvent.from_record(event_record))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptSnapshot(f"event log invalid: {exc}") from None
    return canvas


def load_snapshot(directory: Union[str, Path],
                  embedder: Optional[EmbeddingProvider] = None,
                  clock: Callable[[], float] = time.time) -> Canvas:
    directory = Path(directory)
    snapshot_path = directory / "canvas.json"
    events_path = directory / "events.jsonl"
    try:
        record = json.loads(snapshot_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CorruptSnapshot(f"missing snapshot file {snapshot_path}") from None
    except json.JSONDecodeError as exc:
        raise CorruptSnapshot(f"snapshot is not valid JSON: {exc}") from None
    events: list[dict] = []
    if events_path.exists():
        try:
            events = [json.loads(line)
                      for line in events_path.read_text(encoding="utf-8").splitlines()
                      if line.strip()]
        except json.JSONDecodeError as exc:
            raise CorruptSnapshot(f"event log invalid: {exc}") from None
    return canvas_from_record(record, events, embedder=embedder, clock=clock)


def provenance_from_events(events: Sequence[InteractionEvent]) -> dict[str, list[tuple[str, str]]]:
    """Parent edges recoverable purely from the event log.

    dragout, merge, and steer events each name the created node last in
    ``subjects`` with its sources before it; together with create events this
    reconstructs the full lineage for replay checks.
    """
    lineage: dict[str, list[tuple[str, str]]] = {}
    for event in events:
        if event.kind is EventKind.CREATE:
            lineage.setdefault(event.subjects[0], [])
        elif event.kind in (EventKind.DRAGOUT, EventKind.MERGE, EventKind.STEER):
            child = event.subjects[-1]
            kind = {
                EventKind.DRAGOUT: LinkKind.DRAGOUT.value,
                EventKind.MERGE: LinkKind.MERGE.value,
                EventKind.STEER: LinkKind.STEER.value,
            }[event.kind]
            lineage[child] = [(parent, kind) for parent in event.subjects[:-1]]
    return lineage
