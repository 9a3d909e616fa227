"""Relational link prediction over a prototype graph.

Two-layer relational graph convolution encoder with a bilinear (DistMult)
decoder, trained by binary cross-entropy against uniformly corrupted targets.
Everything is float64 numpy with hand-written reverse-mode gradients and a
fixed summation order, so training is bit-reproducible for a given seed and
can be checked against central finite differences.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .embedding import DimensionMismatch
from .errors import WhvError
from .protograph import RELATIONS, RELATION_INDEX, PrototypeGraph, ShiftType

DEFAULT_DIMS = (1024, 128, 128)
N_RELATIONS = len(RELATIONS)


class IndexOutOfRange(WhvError):
    code = "index_out_of_range"


class Divergence(WhvError):
    code = "divergence"


@dataclass
class LinkModel:
    dims: tuple[int, int, int]
    w_self: list[np.ndarray]   # [ (in, hid), (hid, out) ]
    w_rel: list[np.ndarray]    # [ (R, in, hid), (R, hid, out) ]
    rel: np.ndarray            # (R, out)

    def tensors(self) -> dict[str, np.ndarray]:
        """Named live views of every parameter, in a fixed order."""
        out: dict[str, np.ndarray] = {}
        for layer in (0, 1):
            out[f"w_self_{layer}"] = self.w_self[layer]
            for r in range(N_RELATIONS):
                out[f"w_rel_{layer}_{r}"] = self.w_rel[layer][r]
        out["rel"] = self.rel
        return out

    def copy(self) -> "LinkModel":
        return LinkModel(
            dims=self.dims,
            w_self=[w.copy() for w in self.w_self],
            w_rel=[w.copy() for w in self.w_rel],
            rel=self.rel.copy(),
        )


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_model(
    graph: PrototypeGraph,
    dims: tuple[int, int, int] = DEFAULT_DIMS,
    seed: int = 0,
    zero: bool = False,
) -> LinkModel:
    """Seeded uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)).

    ``zero=True`` is a test hook that zeroes every tensor so all logits are 0.
    """
    d_in, d_hid, d_out = dims
    if graph.dim != d_in:
        raise DimensionMismatch(
            f"graph embeddings have dim {graph.dim}, model expects {d_in}"
        )
    rng = np.random.default_rng(seed)
    if zero:
        w_self = [np.zeros((d_in, d_hid)), np.zeros((d_hid, d_out))]
        w_rel = [np.zeros((N_RELATIONS, d_in, d_hid)), np.zeros((N_RELATIONS, d_hid, d_out))]
        rel = np.zeros((N_RELATIONS, d_out))
    else:
        w_self = [_glorot(rng, (d_in, d_hid)), _glorot(rng, (d_hid, d_out))]
        w_rel = [
            np.stack([_glorot(rng, (d_in, d_hid)) for _ in range(N_RELATIONS)]),
            np.stack([_glorot(rng, (d_hid, d_out)) for _ in range(N_RELATIONS)]),
        ]
        rel = np.stack([_glorot(rng, (1, d_out))[0] for _ in range(N_RELATIONS)])
    return LinkModel(dims=(d_in, d_hid, d_out), w_self=w_self, w_rel=w_rel, rel=rel)


@dataclass(frozen=True)
class GraphTensors:
    """Edge indices regrouped per relation, with in-degree normalization.

    Message passing reads incoming edges: node i aggregates the mean of its
    relation-r in-neighbors (duplicate (src, dst) pairs collapse to one).
    """

    n: int
    src: tuple[np.ndarray, ...]      # per relation, source node of each message
    dst: tuple[np.ndarray, ...]      # per relation, receiving node
    weight: tuple[np.ndarray, ...]   # per relation, 1 / in-degree of dst
    true_targets: dict[tuple[int, int], np.ndarray]  # (src, rel) -> sorted targets


def graph_tensors(graph: PrototypeGraph) -> GraphTensors:
    n = graph.node_count
    src, dst, weight = [], [], []
    true_targets: dict[tuple[int, int], set[int]] = {}
    for r_idx in range(N_RELATIONS):
        pairs = sorted({
            (s, t) for s, shift, t, _level in graph.edges
            if RELATION_INDEX[shift] == r_idx
        })
        s_arr = np.array([p[0] for p in pairs], dtype=np.int64)
        t_arr = np.array([p[1] for p in pairs], dtype=np.int64)
        indegree = np.bincount(t_arr, minlength=n).astype(np.float64)
        w_arr = 1.0 / indegree[t_arr] if len(t_arr) else np.zeros(0)
        src.append(s_arr)
        dst.append(t_arr)
        weight.append(w_arr)
        for s, t in pairs:
            true_targets.setdefault((s, r_idx), set()).add(t)
    frozen = {
        key: np.array(sorted(targets), dtype=np.int64)
        for key, targets in true_targets.items()
    }
    return GraphTensors(n=n, src=tuple(src), dst=tuple(dst), weight=tuple(weight),
                        true_targets=frozen)


def _aggregate(gt: GraphTensors, h: np.ndarray, r_idx: int) -> np.ndarray:
    """Mean of relation-r in-neighbor rows for every node: (A_r h)."""
    out = np.zeros_like(h)
    s, d, w = gt.src[r_idx], gt.dst[r_idx], gt.weight[r_idx]
    if len(s):
        np.add.at(out, d, h[s] * w[:, None])
    return out


def _aggregate_t(gt: GraphTensors, g: np.ndarray, r_idx: int) -> np.ndarray:
    """Transpose aggregation (A_r^T g), used by the backward pass."""
    out = np.zeros_like(g)
    s, d, w = gt.src[r_idx], gt.dst[r_idx], gt.weight[r_idx]
    if len(s):
        np.add.at(out, s, g[d] * w[:, None])
    return out


@dataclass
class ForwardCache:
    h0: np.ndarray
    agg0: list[np.ndarray]
    z0: np.ndarray
    h1: np.ndarray
    agg1: list[np.ndarray]
    h2: np.ndarray


def _forward(model: LinkModel, gt: GraphTensors, features: np.ndarray) -> ForwardCache:
    h0 = features
    agg0 = [_aggregate(gt, h0, r) for r in range(N_RELATIONS)]
    z0 = h0 @ model.w_self[0]
    for r in range(N_RELATIONS):
        z0 += agg0[r] @ model.w_rel[0][r]
    h1 = np.maximum(z0, 0.0)
    agg1 = [_aggregate(gt, h1, r) for r in range(N_RELATIONS)]
    h2 = h1 @ model.w_self[1]
    for r in range(N_RELATIONS):
        h2 += agg1[r] @ model.w_rel[1][r]
    return ForwardCache(h0=h0, agg0=agg0, z0=z0, h1=h1, agg1=agg1, h2=h2)


def forward(model: LinkModel, graph_or_tensors, features: Optional[np.ndarray] = None) -> np.ndarray:
    """Node representations H (n, d_out); ReLU after layer 0, identity after layer 1."""
    gt = graph_or_tensors if isinstance(graph_or_tensors, GraphTensors) else graph_tensors(graph_or_tensors)
    if features is None:
        if isinstance(graph_or_tensors, PrototypeGraph):
            features = graph_or_tensors.embeddings
        else:
            raise ValueError("features required when passing GraphTensors")
    if features.shape != (gt.n, model.dims[0]):
        raise DimensionMismatch(
            f"features shape {features.shape}, expected ({gt.n}, {model.dims[0]})"
        )
    return _forward(model, gt, features).h2


def score(model: LinkModel, h: np.ndarray, s: int, shift: ShiftType, t: int) -> float:
    """Bilinear edge score: sum_k H[s,k] * R_r[k] * H[t,k]."""
    n = h.shape[0]
    if not (0 <= s < n and 0 <= t < n):
        raise IndexOutOfRange(f"node index out of range: s={s}, t={t}, n={n}")
    r_idx = RELATION_INDEX[shift]
    return float(np.sum(h[s] * model.rel[r_idx] * h[t]))


def _score_batch(model: LinkModel, h: np.ndarray, s_idx: np.ndarray,
                 r_idx: np.ndarray, t_idx: np.ndarray) -> np.ndarray:
    return np.einsum("ek,ek,ek->e", h[s_idx], model.rel[r_idx], h[t_idx])


def _bce_with_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    # max(z,0) - y*z + log1p(exp(-|z|)) is stable for large |z|.
    return np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))


def sample_negatives(
    gt: GraphTensors,
    s_idx: np.ndarray,
    r_idx: np.ndarray,
    rng: np.random.Generator,
    negatives_per_positive: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corrupt each positive's target uniformly, excluding all true targets of (s, r)."""
    neg_s, neg_r, neg_t = [], [], []
    all_nodes = np.arange(gt.n, dtype=np.int64)
    for s, r in zip(s_idx, r_idx):
        known = gt.true_targets.get((int(s), int(r)), np.empty(0, dtype=np.int64))
        pool = np.setdiff1d(all_nodes, known, assume_unique=True)
        if len(pool) == 0:
            continue
        picks = pool[rng.integers(0, len(pool), size=negatives_per_positive)]
        for t in picks:
            neg_s.append(int(s))
            neg_r.append(int(r))
            neg_t.append(int(t))
    return (np.array(neg_s, dtype=np.int64), np.array(neg_r, dtype=np.int64),
            np.array(neg_t, dtype=np.int64))


@dataclass
class Gradients:
    w_self: list[np.ndarray]
    w_rel: list[np.ndarray]
    rel: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in (0, 1):
            out[f"w_self_{layer}"] = self.w_self[layer]
            for r in range(N_RELATIONS):
                out[f"w_rel_{layer}_{r}"] = self.w_rel[layer][r]
        out["rel"] = self.rel
        return out


def loss_and_grads(
    model: LinkModel,
    gt: GraphTensors,
    features: np.ndarray,
    batch: Sequence[tuple[int, int, int]],
    seed: int,
    negatives_per_positive: int = 1,
    compute_grads: bool = True,
) -> tuple[float, Optional[Gradients]]:
    """Mean BCE over the batch positives plus sampled negatives, with gradients.

    The negative draw depends only on (graph, batch, seed), never on the
    parameters, so finite-difference checks see a fixed objective.
    """
    cache = _forward(model, gt, features)
    h = cache.h2

    pos = np.array(batch, dtype=np.int64).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    neg_s, neg_r, neg_t = sample_negatives(gt, pos[:, 0], pos[:, 1], rng,
                                           negatives_per_positive)
    s_idx = np.concatenate([pos[:, 0], neg_s])
    r_idx = np.concatenate([pos[:, 1], neg_r])
    t_idx = np.concatenate([pos[:, 2], neg_t])
    y = np.concatenate([np.ones(len(pos)), np.zeros(len(neg_s))])

    z = _score_batch(model, h, s_idx, r_idx, t_idx)
    losses = _bce_with_logits(z, y)
    loss = float(losses.mean())
    if not compute_grads:
        return loss, None

    e_count = len(z)
    g_z = (1.0 / (1.0 + np.exp(-z)) - y) / e_count  # dL/dz per edge

    # Decoder gradients.
    d_rel = np.zeros_like(model.rel)
    np.add.at(d_rel, r_idx, g_z[:, None] * h[s_idx] * h[t_idx])
    d_h = np.zeros_like(h)
    np.add.at(d_h, s_idx, g_z[:, None] * model.rel[r_idx] * h[t_idx])
    np.add.at(d_h, t_idx, g_z[:, None] * model.rel[r_idx] * h[s_idx])

    # Layer 1 (identity activation): h2 = h1 W_self1 + sum_r (A_r h1) W_rel1r.
    g1 = d_h
    d_wself1 = cache.h1.T @ g1
    d_wrel1 = np.zeros_like(model.w_rel[1])
    d_h1 = g1 @ model.w_self[1].T
    for r in range(N_RELATIONS):
        d_wrel1[r] = cache.agg1[r].T @ g1
        d_h1 += _aggregate_t(gt, g1 @ model.w_rel[1][r].T, r)

    # Layer 0 (ReLU): h1 = relu(h0 W_self0 + sum_r (A_r h0) W_rel0r).
    g0 = d_h1 * (cache.z0 > 0.0)
    d_wself0 = cache.h0.T @ g0
    d_wrel0 = np.zeros_like(model.w_rel[0])
    for r in range(N_RELATIONS):
        d_wrel0[r] = cache.agg0[r].T @ g0

    grads = Gradients(
        w_self=[d_wself0, d_wself1],
        w_rel=[d_wrel0, d_wrel1],
        rel=d_rel,
    )
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    learning_rate: float = 1e-3
    negatives_per_positive: int = 1
    seed: int = 0
    eval_fraction: float = 0.10
    hits_at: tuple[int, ...] = (1, 3, 10)

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate <= 0 or self.negatives_per_positive < 1:
            raise ValueError("epochs must be >= 0 and rates/counts positive")
        if not (0.0 <= self.eval_fraction < 1.0):
            raise ValueError("eval_fraction must be in [0, 1)")


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    mrr: float = 0.0
    hits: dict[int, float] = field(default_factory=dict)
    random_mrr: float = 0.0
    wall_time: float = 0.0
    train_edges: int = 0
    eval_edges: int = 0

    def to_record(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "mrr": self.mrr,
            "hits": {str(k): v for k, v in self.hits.items()},
            "random_mrr": self.random_mrr,
            "wall_time": self.wall_time,
            "train_edges": self.train_edges,
            "eval_edges": self.eval_edges,
        }


class _Adam:
    def __init__(self, tensors: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.t = 0

    def step(self, tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for key, param in tensors.items():
            g = grads[key]
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            m_hat = self.m[key] / b1t
            v_hat = self.v[key] / b2t
            param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _edge_triples(graph: PrototypeGraph) -> np.ndarray:
    return np.array(
        [(s, RELATION_INDEX[shift], t) for s, shift, t, _ in graph.edges],
        dtype=np.int64,
    )


def _split_triples(graph: PrototypeGraph, seed: int,
                   eval_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    triples = _edge_triples(graph)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(triples))
    n_eval = int(len(triples) * eval_fraction)
    return triples[perm[n_eval:]], triples[perm[:n_eval]]


def train(
    graph: PrototypeGraph,
    config: TrainConfig = TrainConfig(),
    features: Optional[np.ndarray] = None,
    dims: tuple[int, int, int] = DEFAULT_DIMS,
) -> tuple[LinkModel, TrainReport]:
    """Full-batch adaptive-moment training with a held-out edge split."""
    if graph.edge_count == 0:
        raise Divergence("cannot train on a graph with no edges")
    features = graph.embeddings if features is None else features
    gt = graph_tensors(graph)
    model = init_model(graph, dims=dims, seed=config.seed)

    train_triples, eval_triples = _split_triples(
        graph, config.seed, config.eval_fraction)
    if len(train_triples) == 0:
        train_triples = _edge_triples(graph)
        eval_triples = train_triples[:0]

    report = TrainReport(train_edges=len(train_triples), eval_edges=len(eval_triples))
    started = time.monotonic()
    opt = _Adam(model.tensors(), lr=config.learning_rate)
    batch = [tuple(row) for row in train_triples]
    for epoch in range(config.epochs):
        loss, grads = loss_and_grads(
            model, gt, features, batch,
            seed=config.seed * 1_000_003 + epoch,
            negatives_per_positive=config.negatives_per_positive,
        )
        if not np.isfinite(loss):
            raise Divergence(f"non-finite loss at epoch {epoch}")
        report.epoch_losses.append(loss)
        opt.step(model.tensors(), grads.tensors())

    if len(eval_triples):
        h = _forward(model, gt, features).h2
        mrr, hits, random_mrr = _evaluate(model, gt, h, eval_triples, config.hits_at)
        report.mrr = mrr
        report.hits = hits
        report.random_mrr = random_mrr
    report.wall_time = time.monotonic() - started
    return model, report


def evaluate(model: LinkModel, graph: PrototypeGraph,
             seed: int = 0, eval_fraction: float = 0.10,
             hits_at: tuple[int, ...] = (1, 3, 10),
             features: Optional[np.ndarray] = None) -> dict:
    """Ranking metrics on the held-out split train() would form for this seed.

    With eval_fraction 0 every edge is ranked instead.
    """
    features = graph.embeddings if features is None else features
    gt = graph_tensors(graph)
    _, eval_triples = _split_triples(graph, seed, eval_fraction)
    if len(eval_triples) == 0:
        eval_triples = _edge_triples(graph)
    h = _forward(model, gt, features).h2
    mrr, hits, random_mrr = _evaluate(model, gt, h, eval_triples, hits_at)
    return {
        "mrr": mrr,
        "hits": {str(k): v for k, v in hits.items()},
        "random_mrr": random_mrr,
        "eval_edges": int(len(eval_triples)),
    }


def _evaluate(model: LinkModel, gt: GraphTensors, h: np.ndarray,
              eval_triples: np.ndarray,
              hits_at: tuple[int, ...]) -> tuple[float, dict[int, float], float]:
    """Filtered ranking of each held-out target among non-edge candidates."""
    rr, hit_counts = [], {k: 0 for k in hits_at}
    harmonic = np.cumsum(1.0 / np.arange(1, gt.n + 1))
    random_rr = []
    for s, r, t in eval_triples:
        scores = np.einsum("k,nk->n", h[s] * model.rel[r], h)
        known = gt.true_targets.get((int(s), int(r)), np.empty(0, dtype=np.int64))
        mask = np.zeros(gt.n, dtype=bool)
        mask[known] = True
        mask[t] = False  # the edge being ranked stays in the pool
        candidate_scores = scores[~mask]
        target_score = scores[t]
        rank = 1 + int(np.sum(candidate_scores > target_score))
        rr.append(1.0 / rank)
        for k in hits_at:
            if rank <= k:
                hit_counts[k] += 1
        c = len(candidate_scores)
        random_rr.append(harmonic[c - 1] / c)
    n = len(eval_triples)
    return (
        float(np.mean(rr)),
        {k: hit_counts[k] / n for k in hits_at},
        float(np.mean(random_rr)),
    )


def predict_topk(
    model: LinkModel,
    graph: PrototypeGraph,
    anchor: int,
    shift: ShiftType,
    k: int,
    level_filter: Optional[int] = None,
    h: Optional[np.ndarray] = None,
) -> list[tuple[int, float]]:
    """Top-k candidate targets for (anchor, shift), best first.

    Ties break toward the lower node id; the anchor itself never appears.
    The optional level filter keeps only nodes that occur as the target of an
    edge with that abstraction level.
    """
    n = graph.node_count
    if not (0 <= anchor < n):
        raise IndexOutOfRange(f"anchor {anchor} out of range (n={n})")
    if k <= 0:
        return []
    if h is None:
        h = forward(model, graph)
    r_idx = RELATION_INDEX[shift]
    candidates = [i for i in range(n) if i != anchor]
    if level_filter is not None:
        allowed = {t for _s, _shift, t, level in graph.edges if level == level_filter}
        candidates = [i for i in candidates if i in allowed]
    scored = [
        (i, float(np.sum(h[anchor] * model.rel[r_idx] * h[i])))
        for i in candidates
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[:k]


# -- persistence --------------------------------------------------------------

MODEL_FILE = "model.npz"
MODEL_MANIFEST = "model.json"
MODEL_FORMAT_VERSION = 1


def save_model(model: LinkModel, directory: str,
               config: Optional[TrainConfig] = None,
               data_hash: str = "") -> None:
    os.makedirs(directory, exist_ok=True)
    arrays = {
        "w_self_0": model.w_self[0],
        "w_self_1": model.w_self[1],
        "w_rel_0": model.w_rel[0],
        "w_rel_1": model.w_rel[1],
        "rel": model.rel,
    }
    np.savez(os.path.join(directory, MODEL_FILE), **arrays)
    manifest = {
        "format_version": MODEL_FORMAT_VERSION,
        "dims": list(model.dims),
        "relations": [s.value for s in RELATIONS],
        "data_hash": data_hash,
    }
    if config is not None:
        manifest["config"] = {
            "epochs": config.epochs,
            "learning_rate": config.learning_rate,
            "negatives_per_positive": config.negatives_per_positive,
            "seed": config.seed,
            "eval_fraction": config.eval_fraction,
        }
    with open(os.path.join(directory, MODEL_MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)


def load_model(directory: str) -> LinkModel:
    with open(os.path.join(directory, MODEL_MANIFEST), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != MODEL_FORMAT_VERSION:
        raise WhvError(f"unsupported model format {manifest.get('format_version')}")
    if manifest.get("relations") != [s.value for s in RELATIONS]:
        raise WhvError("model relation order does not match this build")
    data = np.load(os.path.join(directory, MODEL_FILE))
    return LinkModel(
        dims=tuple(manifest["dims"]),
        w_self=[data["w_self_0"], data["w_self_1"]],
        w_rel=[data["w_rel_0"], data["w_rel_1"]],
        rel=data["rel"],
    )
