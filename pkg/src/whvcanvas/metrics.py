"""Structural analytics over the exploration graph and interaction log.

The exploration graph is rebuilt from node parent links; the log contributes
per-node interaction counts and the re-engagement timeline.  Everything here
is read-only and deterministic, so it can run concurrently with live canvas
edits against a snapshot.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import networkx as nx

from .canvas import INTEREST_KINDS, EventKind, InteractionEvent
from .core import IdeaNode
from .embedding import EmbeddingProvider, HashingEmbedder, cosine
from .errors import WhvError

COVERAGE_THRESHOLD = 0.35

# Event kinds whose subjects are canvas nodes (theme/mode/zoom/filter events
# reference non-node entities and carry no node subjects).
NODE_EVENT_KINDS = frozenset({
    EventKind.CREATE, EventKind.ANALYZE, EventKind.TRANSFORM,
    EventKind.DRAGOUT, EventKind.MERGE, EventKind.STEER, EventKind.CLICK,
})


class DanglingReference(WhvError):
    code = "dangling_reference"


class EmptyPrompt(WhvError):
    code = "empty_prompt"


@dataclass(frozen=True)
class ExplorationGraph:
    node_ids: tuple[str, ...]
    parents: Mapping[str, tuple[str, ...]]
    children: Mapping[str, tuple[str, ...]]
    created_at: Mapping[str, int]
    interactions: Mapping[str, int]

    @property
    def roots(self) -> tuple[str, ...]:
        return tuple(n for n in self.node_ids if not self.parents[n])

    @property
    def leaves(self) -> tuple[str, ...]:
        return tuple(n for n in self.node_ids if not self.children[n])

    def edge_count(self) -> int:
        return sum(len(c) for c in self.children.values())


def build_exploration_graph(
    log: Sequence[InteractionEvent],
    nodes: Mapping[str, IdeaNode],
) -> ExplorationGraph:
    """One directed edge per parent link; log subjects must resolve."""
    node_ids = tuple(sorted(nodes))
    known = set(node_ids)
    parents: dict[str, list[str]] = {n: [] for n in node_ids}
    children: dict[str, list[str]] = {n: [] for n in node_ids}
    for node_id in node_ids:
        for link in nodes[node_id].parent_links:
            if link.parent_id not in known:
                raise DanglingReference(
                    f"node {node_id} links to missing parent {link.parent_id}")
            parents[node_id].append(link.parent_id)
            children[link.parent_id].append(node_id)
    interactions = {n: 0 for n in node_ids}
    for event in log:
        if event.kind not in NODE_EVENT_KINDS:
            continue
        for subject in event.subjects:
            if subject not in known:
                raise DanglingReference(
                    f"event {event.seq} references missing node {subject}")
            if event.kind in INTEREST_KINDS:
                interactions[subject] += 1
    return ExplorationGraph(
        node_ids=node_ids,
        parents={n: tuple(p) for n, p in parents.items()},
        children={n: tuple(c) for n, c in children.items()},
        created_at={n: nodes[n].created_at for n in node_ids},
        interactions=interactions,
    )


def _topological_order(g: ExplorationGraph) -> list[str]:
    indegree = {n: len(g.parents[n]) for n in g.node_ids}
    frontier = [n for n in g.node_ids if indegree[n] == 0]
    order: list[str] = []
    while frontier:
        node = frontier.pop()
        order.append(node)
        for child in g.children[node]:
            indegree[child] -= 1
            if indegree[child] == 0:
                frontier.append(child)
    if len(order) != len(g.node_ids):
        raise DanglingReference("parent links contain a cycle")
    return order


def longest_path_depths(g: ExplorationGraph) -> dict[str, int]:
    """Longest-path distance (in edges) from any root, per node."""
    depths = {n: 0 for n in g.node_ids}
    for node in _topological_order(g):
        for parent in g.parents[node]:
            depths[node] = max(depths[node], depths[parent] + 1)
    return depths


def avg_root_to_leaf_depth(g: ExplorationGraph) -> float:
    leaves = g.leaves
    if not leaves:
        return 0.0
    depths = longest_path_depths(g)
    return sum(depths[l] for l in leaves) / len(leaves)


def reengagement_rate(g: ExplorationGraph, log: Sequence[InteractionEvent]) -> float:
    """Share of events that return to an already-extended node.

    A node joins the skeleton once it has a child; an event qualifies when it
    targets such a node strictly after the node's first child existed.
    """
    if not log:
        return 0.0
    first_child: dict[str, int] = {}
    for node_id in g.node_ids:
        kids = g.children[node_id]
        if kids:
            first_child[node_id] = min(g.created_at[k] for k in kids)
    qualifying = 0
    for event in log:
        if event.kind not in NODE_EVENT_KINDS:
            continue
        if any(
            subject in first_child and event.seq > first_child[subject]
            for subject in event.subjects
        ):
            qualifying += 1
    return qualifying / len(log)


def avg_out_degree(g: ExplorationGraph) -> float:
    if not g.node_ids:
        return 0.0
    return g.edge_count() / len(g.node_ids)


def max_layer_width(g: ExplorationGraph) -> int:
    if not g.node_ids:
        return 0
    depths = longest_path_depths(g)
    widths: dict[int, int] = {}
    for depth in depths.values():
        widths[depth] = widths.get(depth, 0) + 1
    return max(widths.values())


def _undirected(g: ExplorationGraph) -> nx.Graph:
    graph = nx.Graph()
    graph.add_nodes_from(g.node_ids)
    for node in g.node_ids:
        for child in g.children[node]:
            graph.add_edge(node, child)
    return graph


def num_components(g: ExplorationGraph) -> int:
    if not g.node_ids:
        return 0
    return nx.number_connected_components(_undirected(g))


def lcc_ratio(g: ExplorationGraph) -> float:
    if not g.node_ids:
        return 0.0
    components = nx.connected_components(_undirected(g))
    return max(len(c) for c in components) / len(g.node_ids)


def avg_betweenness(g: ExplorationGraph) -> float:
    """Mean normalized betweenness centrality on the undirected view."""
    if not g.node_ids:
        return 0.0
    centrality = nx.betweenness_centrality(_undirected(g), normalized=True)
    return sum(centrality.values()) / len(centrality)


# -- prompt alignment -----------------------------------------------------------


def split_clauses(prompt: str) -> list[str]:
    if not prompt or not prompt.strip():
        raise EmptyPrompt("prompt text is empty")
    clauses = [c.strip() for c in re.split(r"[.!?;\n]+", prompt)]
    return [c for c in clauses if c]


def _node_text(node: IdeaNode) -> str:
    return f"{node.title} {node.content}"


def coverage(
    nodes: Mapping[str, IdeaNode],
    prompt: str,
    threshold: float = COVERAGE_THRESHOLD,
    embedder: Optional[EmbeddingProvider] = None,
) -> float:
    """Fraction of prompt clauses matched by at least one node at >= threshold."""
    clauses = split_clauses(prompt)
    if not nodes:
        return 0.0
    embedder = embedder or HashingEmbedder()
    node_vectors = [embedder.embed(_node_text(n)).vector for n in nodes.values()]
    covered = 0
    for clause in clauses:
        clause_vector = embedder.embed(clause).vector
        best = max(cosine(clause_vector, v) for v in node_vectors)
        if best >= threshold:
            covered += 1
    return covered / len(clauses)


def coherence_to_prompt(
    nodes: Mapping[str, IdeaNode],
    prompt: str,
    embedder: Optional[EmbeddingProvider] = None,
) -> float:
    """Mean cosine between each node and the whole prompt."""
    if not prompt or not prompt.strip():
        raise EmptyPrompt("prompt text is empty")
    if not nodes:
        return 0.0
    embedder = embedder or HashingEmbedder()
    prompt_vector = embedder.embed(prompt).vector
    sims = [
        cosine(embedder.embed(_node_text(n)).vector, prompt_vector)
        for n in nodes.values()
    ]
    return sum(sims) / len(sims)


# -- timeline ---------------------------------------------------------------------


@dataclass(frozen=True)
class NormalizedLog:
    events: tuple[InteractionEvent, ...]
    single_event: bool


def normalize_timestamps(log: Sequence[InteractionEvent]) -> NormalizedLog:
    """Rescale wall timestamps onto [0, 1], preserving order.

    A single-event log cannot be scaled; it maps to 0 and is flagged.  A log
    whose events share one timestamp also maps to all zeros, unflagged.
    """
    if not log:
        return NormalizedLog(events=(), single_event=False)
    if len(log) == 1:
        return NormalizedLog(
            events=(replace(log[0], at=0.0),), single_event=True)
    t_min = min(e.at for e in log)
    t_max = max(e.at for e in log)
    span = t_max - t_min
    if span == 0:
        return NormalizedLog(
            events=tuple(replace(e, at=0.0) for e in log), single_event=False)
    return NormalizedLog(
        events=tuple(replace(e, at=(e.at - t_min) / span) for e in log),
        single_event=False,
    )


# -- report -----------------------------------------------------------------------


def metrics_report(
    nodes: Mapping[str, IdeaNode],
    log: Sequence[InteractionEvent],
    prompt: Optional[str] = None,
    threshold: float = COVERAGE_THRESHOLD,
    embedder: Optional[EmbeddingProvider] = None,
) -> dict:
    g = build_exploration_graph(log, nodes)
    report = {
        "Avg. root-to-leaf depth": avg_root_to_leaf_depth(g),
        "Reengagement rate": reengagement_rate(g, log),
        "Avg. out degree": avg_out_degree(g),
        "Max width": max_layer_width(g),
        "LCC ratio": lcc_ratio(g),
        "Num. components": num_components(g),
        "Avg. betweenness": avg_betweenness(g),
    }
    if prompt is not None:
        report["Coverage"] = coverage(nodes, prompt, threshold=threshold,
                                      embedder=embedder)
        report["Coherence-to-Prompt"] = coherence_to_prompt(
            nodes, prompt, embedder=embedder)
    return report
