"""Few-shot exemplar selection strategies.

Cluster-then-cosine over code embeddings (one pick per cluster), Okapi
BM25 retrieval over identifier tokens, and seeded random selection. The
semantic and contrastive variants differ only in which embedding provider
is plugged in; the selection pipeline is identical.
"""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass
from math import log, sqrt
from pathlib import Path
from typing import MutableMapping, Sequence

import numpy as np

from .domain import CoTSample, KnowledgePool, SourceFunction
from .gateway import EmbeddingProvider, embed

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_MAX_ITER = 100

_SPLIT_RE = re.compile(r"[^0-9a-zA-Z]+")
_CAMEL_RE = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|\d+")


class EmptyPoolError(ValueError):
    """Selection from an empty knowledge pool is meaningless."""


class InsufficientSamplesError(ValueError):
    """Fewer vectors than clusters requested."""


class DimensionMismatchError(ValueError):
    """Vectors of differing dimensions cannot be clustered together."""


def tokenize_code(text: str) -> list[str]:
    """Lowercased identifier tokens: splits on symbols, camelCase, snake_case."""
    tokens: list[str] = []
    for chunk in _SPLIT_RE.split(text):
        if chunk:
            tokens.extend(part.lower() for part in _CAMEL_RE.findall(chunk))
    return tokens


@dataclass(eq=False)
class ClusterModel:
    """Converged k-means state plus the per-iteration objective trace."""

    k: int
    centroids: np.ndarray  # (k, dim)
    assignments: list[int]  # sample index -> cluster index
    iterations_run: int
    seed: int
    objective_history: list[float]

    def members(self, cluster: int) -> list[int]:
        return [i for i, c in enumerate(self.assignments) if c == cluster]


def kmeans(
    vectors: Sequence[Sequence[float]],
    k: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ClusterModel:
    """Seeded Lloyd's iterations from k-means++ initialization.

    Runs until assignments stabilize or ``max_iter``; an emptied cluster is
    re-seeded with the point currently farthest from its own centroid.
    """
    lengths = {len(v) for v in vectors}
    if len(lengths) > 1:
        raise DimensionMismatchError(f"mixed vector dimensions: {sorted(lengths)}")
    points = np.asarray(vectors, dtype=float)
    if points.ndim != 2:
        raise DimensionMismatchError("expected a sequence of flat vectors")
    n = len(points)
    if n < k:
        raise InsufficientSamplesError(f"need at least {k} vectors, got {n}")

    rng = np.random.default_rng(seed)
    centroids = _plus_plus_init(points, k, rng)
    assignments = np.full(n, -1, dtype=int)
    objective_history: list[float] = []
    iterations = 0

    for iterations in range(1, max_iter + 1):
        distances = _sq_distances(points, centroids)
        new_assignments = distances.argmin(axis=1)
        # Re-seed empty clusters with the globally worst-fit point.
        for cluster in range(k):
            if not (new_assignments == cluster).any():
                worst = int(
                    distances[np.arange(n), new_assignments].argmax()
                )
                centroids[cluster] = points[worst]
                distances = _sq_distances(points, centroids)
                new_assignments = distances.argmin(axis=1)
        objective_history.append(
            float(distances[np.arange(n), new_assignments].sum())
        )
        if (new_assignments == assignments).all():
            assignments = new_assignments
            break
        assignments = new_assignments
        for cluster in range(k):
            members = points[assignments == cluster]
            if len(members):
                centroids[cluster] = members.mean(axis=0)

    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments=[int(c) for c in assignments],
        iterations_run=iterations,
        seed=seed,
        objective_history=objective_history,
    )


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centroids = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(
            [((points - c) ** 2).sum(axis=1) for c in centroids], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centroids.append(points[rng.integers(n)])
            continue
        centroids.append(points[rng.choice(n, p=d2 / total)])
    return np.array(centroids, dtype=float)


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    va, vb = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        return 0.0
    return float(va @ vb) / denom


@dataclass(frozen=True)
class SelectionResult:
    """Chosen exemplars; ``degenerate`` flags a pool smaller than the shot count."""

    samples: tuple[CoTSample, ...]
    degenerate: bool = False

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


def _degenerate(pool: KnowledgePool) -> SelectionResult:
    return SelectionResult(samples=pool.samples, degenerate=True)


def select_cluster_cosine(
    pool: KnowledgePool,
    target: SourceFunction,
    provider: EmbeddingProvider,
    shots: int = 2,
    seed: int = 0,
    cache: MutableMapping[str, list[float]] | None = None,
) -> SelectionResult:
    """Cluster pool embeddings into ``shots`` clusters; take the most
    target-similar sample from each, ordered by cluster index.

    ``cache`` maps sample id to vector for this provider, letting repeated
    runs skip re-embedding the pool.
    """
    if not pool.samples:
        raise EmptyPoolError("cannot select from an empty pool")
    if len(pool.samples) < shots:
        return _degenerate(pool)

    vectors = _pool_embeddings(pool, provider, cache)
    target_vector = embed(provider, target.body)
    model = kmeans(vectors, k=shots, seed=seed)

    chosen: list[CoTSample] = []
    for cluster in range(model.k):
        best_index: int | None = None
        best_sim = -2.0
        for i in model.members(cluster):
            sim = cosine_similarity(vectors[i], target_vector)
            if sim > best_sim:  # ties keep the lower sample index
                best_index, best_sim = i, sim
        if best_index is not None:
            chosen.append(pool.samples[best_index])
    return SelectionResult(samples=tuple(chosen))


def _pool_embeddings(
    pool: KnowledgePool,
    provider: EmbeddingProvider,
    cache: MutableMapping[str, list[float]] | None,
) -> list[list[float]]:
    if cache is None:
        return provider.embed_batch([s.buggy.body for s in pool.samples])
    missing = [s for s in pool.samples if s.buggy.id not in cache]
    if missing:
        for sample, vector in zip(
            missing, provider.embed_batch([s.buggy.body for s in missing])
        ):
            cache[sample.buggy.id] = vector
    return [cache[s.buggy.id] for s in pool.samples]


@dataclass
class Bm25Index:
    """Okapi BM25 statistics over tokenized documents."""

    doc_tokens: list[Counter]
    doc_freq: Counter
    avg_doc_len: float
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    def __len__(self):
        return len(self.doc_tokens)


def build_bm25_index(
    documents: Sequence[str], k1: float = DEFAULT_K1, b: float = DEFAULT_B
) -> Bm25Index:
    doc_tokens = [Counter(tokenize_code(doc)) for doc in documents]
    doc_freq = Counter()
    for tokens in doc_tokens:
        doc_freq.update(tokens.keys())
    lengths = [sum(tokens.values()) for tokens in doc_tokens]
    avg = sum(lengths) / len(lengths) if lengths else 0.0
    return Bm25Index(doc_tokens=doc_tokens, doc_freq=doc_freq, avg_doc_len=avg, k1=k1, b=b)


def bm25_score(index: Bm25Index, query_tokens: Sequence[str], doc_index: int) -> float:
    """Okapi BM25 with +1-smoothed IDF, summed over distinct query tokens."""
    tokens = index.doc_tokens[doc_index]
    doc_len = sum(tokens.values())
    n_docs = len(index.doc_tokens)
    norm = index.k1 * (1 - index.b + index.b * doc_len / index.avg_doc_len)
    score = 0.0
    for token in set(query_tokens):
        tf = tokens.get(token, 0)
        if not tf:
            continue
        df = index.doc_freq[token]
        idf = log((n_docs - df + 0.5) / (df + 0.5) + 1)
        score += idf * (tf * (index.k1 + 1)) / (tf + norm)
    return score


def select_ir(
    pool: KnowledgePool, target: SourceFunction, shots: int = 2
) -> SelectionResult:
    """Top-``shots`` pool samples by BM25 score against the target's tokens."""
    if not pool.samples:
        raise EmptyPoolError("cannot select from an empty pool")
    if len(pool.samples) < shots:
        return _degenerate(pool)
    index = build_bm25_index([s.buggy.body for s in pool.samples])
    query = tokenize_code(target.body)
    ranked = sorted(
        range(len(pool.samples)),
        key=lambda i: (-bm25_score(index, query, i), i),
    )
    return SelectionResult(
        samples=tuple(pool.samples[i] for i in ranked[:shots])
    )


def select_random(pool: KnowledgePool, shots: int = 2, seed: int = 0) -> SelectionResult:
    """Seeded uniform sample without replacement; deterministic per seed."""
    if not pool.samples:
        raise EmptyPoolError("cannot select from an empty pool")
    if len(pool.samples) < shots:
        return _degenerate(pool)
    picks = random.Random(seed).sample(range(len(pool.samples)), shots)
    return SelectionResult(samples=tuple(pool.samples[i] for i in picks))


def load_embedding_cache(path: str | Path) -> dict[str, dict[str, list[float]]]:
    """Read an embedding cache file: embedder id -> {sample id -> vector}."""
    file = Path(path)
    if not file.exists():
        return {}
    return json.loads(file.read_text(encoding="utf-8"))


def save_embedding_cache(
    path: str | Path, cache: dict[str, dict[str, list[float]]]
) -> None:
    Path(path).write_text(json.dumps(cache), encoding="utf-8")
