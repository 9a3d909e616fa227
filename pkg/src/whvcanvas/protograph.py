"""Per-pillar prototype graphs of fragment transformations.

Built offline from a small curated seed file, optionally expanded by an LLM,
then deduplicated and frozen.  Nodes are unique fragment texts with
precomputed embeddings; edges carry a shift type and an abstraction level.
"""

from __future__ import annotations

import enum
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import Pillar, normalize_level, normalize_pillar
from .embedding import EmbeddingProvider, HashingEmbedder
from .errors import WhvError
from .llm.gateway import Backend, BackendUnavailable, generate, request_for
from .llm.parsing import MalformedJson, NotAnArray, parse_json_array

log = logging.getLogger(__name__)

ANCHOR_THRESHOLD = 0.30
NEAR_DUP_THRESHOLD = 0.95
EXPANSION_BATCH = 50
EXPANSION_FAILURE_LIMIT = 3


class ShiftType(str, enum.Enum):
    ENABLE = "enable"
    IMPLY = "imply"
    SUPPORT = "support"
    DERIVED_FROM = "derived-from"

    def __str__(self) -> str:
        return self.value


RELATIONS = tuple(ShiftType)
RELATION_INDEX = {shift: i for i, shift in enumerate(RELATIONS)}


class SchemaError(WhvError):
    code = "schema_error"


class ExpansionStalled(WhvError):
    code = "expansion_stalled"


class EmptyCorpus(WhvError):
    code = "empty_corpus"


class EmptyGraph(WhvError):
    code = "empty_graph"


class PillarMismatch(WhvError):
    code = "pillar_mismatch"


class GraphCorrupt(WhvError):
    code = "graph_corrupt"


@dataclass(frozen=True)
class TransformationSample:
    pillar: Pillar
    level: int
    source_text: str
    shift: ShiftType
    target_text: str
    origin: str = "seed"  # "seed" | "expanded"

    def triple(self) -> tuple[str, str, str]:
        """Normalized identity used for exact-duplicate detection."""
        return (
            " ".join(self.source_text.lower().split()),
            self.shift.value,
            " ".join(self.target_text.lower().split()),
        )

    def to_record(self) -> dict:
        return {
            "pillar": self.pillar.value,
            "level": self.level,
            "source": self.source_text,
            "shift": self.shift.value,
            "target": self.target_text,
            "origin": self.origin,
        }


def normalize_shift(value) -> ShiftType:
    if isinstance(value, ShiftType):
        return value
    if not isinstance(value, str):
        raise SchemaError(f"shift must be a string, got {type(value).__name__}")
    cleaned = value.strip().lower().replace("_", "-")
    try:
        return ShiftType(cleaned)
    except ValueError:
        raise SchemaError(f"unknown shift type {value!r}") from None


def validate_sample(raw: Mapping, origin: str = "seed") -> TransformationSample:
    try:
        pillar = normalize_pillar(raw.get("pillar"))
        level = normalize_level(raw.get("level"))
    except WhvError as exc:
        raise SchemaError(exc.detail) from None
    shift = normalize_shift(raw.get("shift"))
    source = raw.get("source")
    target = raw.get("target")
    for name, text in (("source", source), ("target", target)):
        if not isinstance(text, str) or not text.strip():
            raise SchemaError(f"{name} must be non-empty text")
    return TransformationSample(
        pillar=pillar,
        level=level,
        source_text=source.strip(),
        shift=shift,
        target_text=target.strip(),
        origin=origin,
    )


def parse_seed_line(line: str) -> TransformationSample:
    """One tab-separated sample: pillar, level, source, shift, target."""
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 5:
        raise SchemaError(f"expected 5 tab-separated fields, got {len(parts)}")
    pillar, level, source, shift, target = parts
    return validate_sample(
        {"pillar": pillar, "level": level, "source": source, "shift": shift, "target": target},
        origin="seed",
    )


def load_seeds(path: str) -> list[TransformationSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                samples.append(parse_seed_line(line))
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc.detail}") from None
    return samples


def ingest_seeds(
    records: Iterable[Union[TransformationSample, Mapping]],
) -> dict[Pillar, list[TransformationSample]]:
    """Group samples per pillar, dropping repeated (source, shift, target) triples."""
    by_pillar: dict[Pillar, list[TransformationSample]] = {}
    seen: set[tuple[Pillar, tuple[str, str, str]]] = set()
    for raw in records:
        sample = raw if isinstance(raw, TransformationSample) else validate_sample(raw)
        key = (sample.pillar, sample.triple())
        if key in seen:
            continue
        seen.add(key)
        by_pillar.setdefault(sample.pillar, []).append(sample)
    return by_pillar


def _seed_example_lines(seeds: Sequence[TransformationSample]) -> list[str]:
    return [
        f"{s.source_text} | {s.shift.value} | {s.target_text} (level {s.level})"
        for s in seeds
    ]


def expand_corpus(
    pillar: Pillar,
    seeds: Sequence[TransformationSample],
    target_count: int,
    backend: Backend,
    batch_size: int = EXPANSION_BATCH,
) -> list[Union[TransformationSample, dict]]:
    """Grow the pillar corpus with generated samples until target_count rows.

    Rows that parse but fail sample validation are kept as raw dicts so the
    downstream filter can count them; a batch whose output is not a JSON array
    (or whose backend call fails) counts toward a consecutive-failure limit.
    """
    if not seeds:
        raise EmptyCorpus(f"no seeds ingested for pillar {pillar.value}")
    gathered: list[Union[TransformationSample, dict]] = []
    failures = 0
    while len(gathered) < target_count:
        want = min(batch_size, target_count - len(gathered))
        bindings = {
            "pillar": pillar.value,
            "seed_examples": _seed_example_lines(seeds),
            "batch_size": want,
        }
        try:
            text = generate(backend, request_for("corpus_expander", bindings))
            rows = parse_json_array(text)
        except (BackendUnavailable, NotAnArray, MalformedJson) as exc:
            failures += 1
            log.warning("expansion batch failed (%d consecutive): %s", failures, exc)
            if failures >= EXPANSION_FAILURE_LIMIT:
                raise ExpansionStalled(
                    f"{failures} consecutive failed batches for pillar {pillar.value}"
                ) from None
            continue
        failures = 0
        for row in rows[:want]:
            if not isinstance(row, Mapping):
                gathered.append({"malformed": row})
                continue
            try:
                gathered.append(validate_sample(row, origin="expanded"))
            except SchemaError:
                gathered.append(dict(row))
    return gathered


@dataclass
class FilterReport:
    kept: int = 0
    schema_invalid: int = 0
    self_loop: int = 0
    exact_dup: int = 0
    near_dup: int = 0

    def to_record(self) -> dict:
        return {
            "kept": self.kept,
            "schema_invalid": self.schema_invalid,
            "self_loop": self.self_loop,
            "exact_dup": self.exact_dup,
            "near_dup": self.near_dup,
        }


def dedup_filter(
    samples: Sequence[Union[TransformationSample, Mapping]],
    embedder: Optional[EmbeddingProvider] = None,
) -> tuple[list[TransformationSample], FilterReport]:
    """Drop invalid and duplicated samples; never raises on bad rows.

    Per-row check order: schema validity, self-loop, exact duplicate after
    whitespace/case normalization, then near-duplicate by embedding similarity
    of "source target" against every already-kept row.
    """
    embedder = embedder or HashingEmbedder()
    report = FilterReport()
    kept: list[TransformationSample] = []
    kept_vectors: list[np.ndarray] = []
    kept_matrix: Optional[np.ndarray] = None
    seen_triples: set[tuple[str, str, str]] = set()

    for raw in samples:
        if isinstance(raw, TransformationSample):
            sample = raw
        else:
            try:
                sample = validate_sample(raw, origin=str(raw.get("origin", "expanded")))
            except (SchemaError, AttributeError):
                report.schema_invalid += 1
                continue
        if sample.triple()[0] == sample.triple()[2]:
            report.self_loop += 1
            continue
        if sample.triple() in seen_triples:
            report.exact_dup += 1
            continue
        vec = embedder.embed(f"{sample.source_text} {sample.target_text}").vector
        norm = np.linalg.norm(vec)
        unit = vec / norm if norm > 0 else vec
        if kept_vectors:
            if kept_matrix is None or kept_matrix.shape[0] != len(kept_vectors):
                kept_matrix = np.stack(kept_vectors)
            sims = kept_matrix @ unit
            if float(sims.max()) > NEAR_DUP_THRESHOLD:
                report.near_dup += 1
                continue
        seen_triples.add(sample.triple())
        kept.append(sample)
        kept_vectors.append(unit)
        kept_matrix = None  # invalidated; rebuilt lazily
    report.kept = len(kept)
    return kept, report


@dataclass(frozen=True)
class PrototypeGraph:
    pillar: Pillar
    texts: tuple[str, ...]
    embeddings: np.ndarray  # (n, d), one row per node
    edges: tuple[tuple[int, ShiftType, int, int], ...]  # (src, shift, dst, level)

    @property
    def node_count(self) -> int:
        return len(self.texts)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    def text_of(self, node_id: int) -> str:
        return self.texts[node_id]


def check_graph(graph: PrototypeGraph) -> None:
    """Structural invariants, asserted after build and on load."""
    n = graph.node_count
    if len(set(graph.texts)) != n:
        raise GraphCorrupt("node texts are not unique")
    if graph.embeddings.shape[0] != n:
        raise GraphCorrupt("embedding count differs from node count")
    for src, shift, dst, level in graph.edges:
        if not (0 <= src < n and 0 <= dst < n):
            raise GraphCorrupt(f"edge ({src}, {dst}) references a missing node")
        if src == dst:
            raise GraphCorrupt(f"self-loop edge on node {src}")
        if not isinstance(shift, ShiftType):
            raise GraphCorrupt(f"edge relation {shift!r} is not a ShiftType")
        normalize_level(level)


def build_graph(
    samples: Sequence[TransformationSample],
    pillar: Pillar,
    embedder: Optional[EmbeddingProvider] = None,
) -> PrototypeGraph:
    """Freeze filtered samples into a graph; one node per unique text."""
    if not samples:
        raise EmptyCorpus(f"no samples for pillar {pillar.value}")
    for sample in samples:
        if sample.pillar is not pillar:
            raise PillarMismatch(
                f"sample pillar {sample.pillar.value} fed to {pillar.value} builder"
            )
    embedder = embedder or HashingEmbedder()
    ids: dict[str, int] = {}
    texts: list[str] = []
    for sample in samples:
        for text in (sample.source_text, sample.target_text):
            if text not in ids:
                ids[text] = len(texts)
                texts.append(text)
    vectors = np.stack([embedder.embed(t).vector for t in texts])
    edges = tuple(
        (ids[s.source_text], s.shift, ids[s.target_text], s.level) for s in samples
    )
    graph = PrototypeGraph(
        pillar=pillar, texts=tuple(texts), embeddings=vectors, edges=edges
    )
    check_graph(graph)
    return graph


def find_anchor(
    text: str,
    graph: PrototypeGraph,
    embedder: Optional[EmbeddingProvider] = None,
    threshold: float = ANCHOR_THRESHOLD,
) -> Optional[tuple[int, float]]:
    """Most-similar graph node by cosine, or None below the validity threshold."""
    if graph.node_count == 0:
        raise EmptyGraph("anchor lookup on an empty graph")
    embedder = embedder or HashingEmbedder()
    query = embedder.embed(text).vector
    qn = np.linalg.norm(query)
    if qn == 0:
        return None
    norms = np.linalg.norm(graph.embeddings, axis=1)
    safe = np.where(norms == 0, 1.0, norms)
    sims = (graph.embeddings @ query) / (safe * qn)
    sims = np.where(norms == 0, 0.0, sims)
    best = int(sims.argmax())
    score = float(sims[best])
    if score < threshold:
        return None
    return best, score


# -- persistence --------------------------------------------------------------

NODES_FILE = "nodes.jsonl"
EDGES_FILE = "edges.jsonl"
EMBED_FILE = "embeddings.npy"
MANIFEST_FILE = "manifest.json"


def save_graph(graph: PrototypeGraph, directory: str,
               report: Optional[FilterReport] = None) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, NODES_FILE), "w", encoding="utf-8") as fh:
        for i, text in enumerate(graph.texts):
            fh.write(json.dumps({"id": i, "text": text}, ensure_ascii=False) + "\n")
    np.save(os.path.join(directory, EMBED_FILE), graph.embeddings)
    with open(os.path.join(directory, EDGES_FILE), "w", encoding="utf-8") as fh:
        for src, shift, dst, level in graph.edges:
            fh.write(json.dumps(
                {"src": src, "shift": shift.value, "dst": dst, "level": level}
            ) + "\n")
    manifest = {
        "pillar": graph.pillar.value,
        "node_count": graph.node_count,
        "edge_count": graph.edge_count,
        "dim": graph.dim,
    }
    if report is not None:
        manifest["filter_report"] = report.to_record()
    with open(os.path.join(directory, MANIFEST_FILE), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_graph(directory: str) -> PrototypeGraph:
    with open(os.path.join(directory, MANIFEST_FILE), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    pillar = normalize_pillar(manifest["pillar"])
    texts: list[str] = []
    with open(os.path.join(directory, NODES_FILE), "r", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            if row["id"] != len(texts):
                raise GraphCorrupt("node ids are not dense and ordered")
            texts.append(row["text"])
    embeddings = np.load(os.path.join(directory, EMBED_FILE))
    edges = []
    with open(os.path.join(directory, EDGES_FILE), "r", encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            edges.append((row["src"], normalize_shift(row["shift"]), row["dst"], row["level"]))
    graph = PrototypeGraph(
        pillar=pillar, texts=tuple(texts), embeddings=embeddings, edges=tuple(edges)
    )
    check_graph(graph)
    if graph.node_count != manifest["node_count"] or graph.edge_count != manifest["edge_count"]:
        raise GraphCorrupt("manifest counts disagree with stored graph")
    return graph
