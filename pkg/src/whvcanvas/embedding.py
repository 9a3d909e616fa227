"""Text embeddings: provider contract, offline fallback, cosine, k-means.

The fallback embedder hashes word n-grams into a fixed number of signed
buckets and normalizes, so the whole system can run offline with stable
vectors.  Remote and fallback modes are chosen explicitly by configuration;
a remote failure surfaces as an error rather than silently switching modes.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol, Sequence, Union

import numpy as np

from .errors import WhvError

DEFAULT_DIM = 1024


class EmptyText(WhvError):
    code = "empty_text"


class DimensionMismatch(WhvError):
    code = "dimension_mismatch"


class KTooLarge(WhvError):
    code = "k_too_large"


class ProviderUnavailable(WhvError):
    code = "provider_unavailable"


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray
    norm: float = 0.0

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        vec.flags.writeable = False
        object.__setattr__(self, "vector", vec)
        object.__setattr__(self, "norm", float(np.linalg.norm(vec)))

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


ArrayLike = Union[Embedding, np.ndarray, Sequence[float]]


def _as_vector(value: ArrayLike) -> np.ndarray:
    if isinstance(value, Embedding):
        return value.vector
    return np.asarray(value, dtype=np.float64)


def cosine(u: ArrayLike, v: ArrayLike) -> float:
    """Cosine similarity; defined as 0 when either vector has zero norm."""
    a, b = _as_vector(u), _as_vector(v)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dims {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EmbeddingProvider(Protocol):
    name: str
    deterministic: bool
    dim: int

    def embed(self, text: str) -> Embedding: ...

    def embed_many(self, texts: Sequence[str]) -> list[Embedding]: ...


class HashingEmbedder:
    """Deterministic local embedder: word uni+bigrams hashed to signed buckets."""

    name = "hashing"
    deterministic = True

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, Embedding] = {}
        self._lock = threading.Lock()

    def _grams(self, text: str) -> list[str]:
        tokens = _TOKEN_RE.findall(text.lower())
        grams = list(tokens)
        grams.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
        if not grams:
            # Symbol-only text still deserves a stable nonzero vector.
            grams = [text]
        return grams

    def _raw_vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in self._grams(text):
            digest = hashlib.sha256(f"{self.seed}:{gram}".encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        else:
            # All gram contributions cancelled; fall back to a basis direction.
            digest = hashlib.sha256(f"{self.seed}:{text}:rescue".encode("utf-8")).digest()
            vec[int.from_bytes(digest[:4], "big") % self.dim] = 1.0
        return vec

    def embed(self, text: str) -> Embedding:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        emb = Embedding(self._raw_vector(text))
        with self._lock:
            self._cache.setdefault(text, emb)
        return self._cache[text]

    def embed_many(self, texts: Sequence[str]) -> list[Embedding]:
        return [self.embed(t) for t in texts]

    # Optional on-disk cache: hash-keyed vector records in one npz file.
    def save_cache(self, path: str) -> None:
        with self._lock:
            arrays = {
                hashlib.sha256(text.encode("utf-8")).hexdigest(): emb.vector
                for text, emb in self._cache.items()
            }
        np.savez(path, **arrays)

    def warm_cache(self, path: str, texts: Iterable[str]) -> int:
        """Load cached vectors for any of ``texts`` present in the file."""
        data = np.load(path)
        hits = 0
        with self._lock:
            for text in texts:
                key = hashlib.sha256(text.encode("utf-8")).hexdigest()
                if key in data.files and text not in self._cache:
                    self._cache[text] = Embedding(data[key])
                    hits += 1
        return hits


class RemoteEmbedder:
    """Thin client for an embeddings endpoint; failures surface, never fall back."""

    name = "remote"
    deterministic = False

    def __init__(self, endpoint: str, api_key: str = "", model: str = "",
                 dim: int = DEFAULT_DIM, timeout: float = 30.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.model = model
        self.dim = dim
        self.timeout = timeout
        self._cache: dict[str, Embedding] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> Embedding:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> list[Embedding]:
        import requests

        for text in texts:
            if not text or not text.strip():
                raise EmptyText("cannot embed empty text")
        missing = [t for t in texts if t not in self._cache]
        if missing:
            headers = {"Content-Type": "application/json"}
            if self.api_key:
                headers["Authorization"] = f"Bearer {self.api_key}"
            try:
                resp = requests.post(
                    self.endpoint,
                    json={"input": missing, "model": self.model},
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                raise ProviderUnavailable(str(exc)) from exc
            if resp.status_code != 200:
                raise ProviderUnavailable(f"HTTP {resp.status_code}")
            try:
                rows = resp.json()["data"]
                vectors = [np.asarray(row["embedding"], dtype=np.float64) for row in rows]
            except (KeyError, TypeError, ValueError) as exc:
                raise ProviderUnavailable(f"bad embedding payload: {exc}") from exc
            if len(vectors) != len(missing):
                raise ProviderUnavailable("embedding count mismatch")
            with self._lock:
                for text, vec in zip(missing, vectors):
                    if vec.shape[0] != self.dim:
                        raise DimensionMismatch(
                            f"provider returned dim {vec.shape[0]}, expected {self.dim}"
                        )
                    self._cache.setdefault(text, Embedding(vec))
        return [self._cache[t] for t in texts]


def embedder_from_env(env: Optional[dict] = None) -> EmbeddingProvider:
    import os

    env = env if env is not None else dict(os.environ)
    kind = env.get("WHVCANVAS_EMBEDDER", "hashing").lower()
    dim = int(env.get("WHVCANVAS_EMBED_DIM", str(DEFAULT_DIM)))
    if kind == "hashing":
        return HashingEmbedder(dim=dim, seed=int(env.get("WHVCANVAS_EMBED_SEED", "0")))
    if kind == "remote":
        endpoint = env.get("WHVCANVAS_EMBED_ENDPOINT", "")
        if not endpoint:
            raise ProviderUnavailable("remote embedder selected but WHVCANVAS_EMBED_ENDPOINT unset")
        return RemoteEmbedder(
            endpoint=endpoint,
            api_key=env.get("WHVCANVAS_EMBED_API_KEY", ""),
            model=env.get("WHVCANVAS_EMBED_MODEL", ""),
            dim=dim,
            timeout=float(env.get("WHVCANVAS_EMBED_TIMEOUT", "30")),
        )
    raise ProviderUnavailable(f"unknown embedder kind {kind!r}")


@dataclass(frozen=True)
class Clustering:
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster)


def _stack(embeddings: Sequence[ArrayLike]) -> np.ndarray:
    rows = [_as_vector(e) for e in embeddings]
    dims = {r.shape for r in rows}
    if len(dims) > 1:
        raise DimensionMismatch(f"mixed dims {sorted(dims)}")
    return np.stack(rows)


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (n, k) squared Euclidean distances.
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans(embeddings: Sequence[ArrayLike], k: int, seed: int = 0,
           max_iters: int = 100) -> Clustering:
    """Seeded k-means (k-means++ init, Lloyd steps, farthest-point reseeding).

    Deterministic for a fixed seed.  Points are processed in a canonical
    (lexicographic) order so the partition is invariant to input order, then
    assignments are mapped back; stops when assignments reach a fixpoint.
    """
    original = _stack(embeddings)
    n = original.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} points")
    order = np.lexsort(original.T[::-1])
    points = original[order]

    rng = np.random.default_rng(seed)
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[int(rng.integers(n))]
    for c in range(1, k):
        d2 = _sq_dists(points, centers[:c]).min(axis=1)
        total = d2.sum()
        if total <= 0:
            centers[c] = points[int(rng.integers(n))]
        else:
            centers[c] = points[int(rng.choice(n, p=d2 / total))]

    assignments = np.full(n, -1, dtype=np.int64)
    prev_inertia = np.inf
    for _ in range(max_iters):
        d2 = _sq_dists(points, centers)
        new_assignments = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), new_assignments].sum())
        # Lloyd steps (and farthest-point reseeding) never increase inertia.
        assert inertia <= prev_inertia + 1e-9, (inertia, prev_inertia)
        prev_inertia = inertia
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for c in range(k):
            mask = assignments == c
            if mask.any():
                centers[c] = points[mask].mean(axis=0)
            else:
                # Re-seed a dead centroid at the globally farthest point.
                far = int(d2[np.arange(n), assignments].argmax())
                centers[c] = points[far]
                assignments[far] = c

    # Recompute against the final centroids so reported members/inertia agree.
    d2 = _sq_dists(points, centers)
    assignments = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assignments].sum())
    for c in range(k):
        mask = assignments == c
        if mask.any():
            centers[c] = points[mask].mean(axis=0)
    unsorted = np.empty(n, dtype=np.int64)
    unsorted[order] = assignments
    return Clustering(k=k, assignments=unsorted, centroids=centers, inertia=inertia)


def auto_k(n: int) -> int:
    """Default theme count for n nodes, clamped to keep layouts legible."""
    if n < 1:
        raise ValueError("need at least one point")
    return int(np.clip(round(np.sqrt(n / 2)), 3, 8))


def label_cluster(backend, member_texts: Sequence[str]) -> str:
    """Name a cluster of member titles with one short generated label."""
    from .llm.gateway import generate, request_for

    if not member_texts:
        raise EmptyText("cannot label an empty cluster")
    request = request_for("cluster_label", {"member_titles": list(member_texts)})
    text = generate(backend, request)
    return text.strip().splitlines()[0].strip()
