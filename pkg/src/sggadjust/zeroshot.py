"""Word-vector similarity, zero-shot pair inference and pair-distribution optimization.

Two categories count as similar when the blended score

    S = alpha * cos(u, v) + (1 - alpha) * (1 - d / (1 + d)),   d = ||u - v||

reaches the threshold beta. An observed pair (m, n) then licenses (M, n)
for every M similar to m (first slot), and (n, m) licenses (n, M) (second
slot).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import Vocabulary, ZeroShotManifest, object_clusters
from .errors import ConfigurationError, CoverageError, DomainError, FormatError, ShapeError

RULE_FIRST_SLOT = "Rule1"
RULE_SECOND_SLOT = "Rule2"


@dataclass(frozen=True)
class EmbeddingStore:
    dim: int
    vectors: dict  # name -> float64 vector

    def __post_init__(self):
        for name, v in self.vectors.items():
            if np.shape(v) != (self.dim,):
                raise FormatError(f"vector for '{name}' has shape {np.shape(v)}, expected ({self.dim},)")

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.vectors[name]
        except KeyError:
            raise CoverageError([name]) from None

    def require(self, names: Iterable[str]) -> None:
        missing = [n for n in names if n not in self.vectors]
        if missing:
            raise CoverageError(missing)

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        self.require(names)
        return np.stack([self.vectors[n] for n in names]) if names else np.zeros((0, self.dim))


def load_word_vectors(path: str | Path, vocabulary: Vocabulary | None = None) -> EmbeddingStore:
    """Read ``token v1 ... vD`` lines; tokens outside the vocabulary are dropped."""
    wanted = None if vocabulary is None else set(vocabulary.object_names)
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, raw = parts[0], parts[1:]
            if dim is None:
                dim = len(raw)
                if dim == 0:
                    raise FormatError(f"{path}:{lineno}: token '{token}' has no vector")
            elif len(raw) != dim:
                raise FormatError(f"{path}:{lineno}: token '{token}' has {len(raw)} values, expected {dim}")
            if wanted is not None and token not in wanted:
                continue
            try:
                vectors[token] = np.array([float(x) for x in raw])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    store = EmbeddingStore(dim or 0, vectors)
    if vocabulary is not None:
        store.require(vocabulary.object_names)
    return store


def write_word_vectors(store: EmbeddingStore, path: str | Path, names: Sequence[str] | None = None) -> None:
    names = list(store.vectors) if names is None else list(names)
    with open(path, "w", encoding="utf-8") as fh:
        for name in names:
            fh.write(name + " " + " ".join(repr(float(x)) for x in store[name]) + "\n")


def synthetic_word_vectors(
    vocabulary: Vocabulary,
    n_clusters: int = 4,
    dim: int = 50,
    noise: float = 0.5,
    seed: int = 0,
) -> EmbeddingStore:
    """Unit cluster centres plus per-category noise of norm about ``noise``.

    Clusters follow the synthetic corpus generator, so similar vectors mark
    categories that share pair affinities.
    """
    if dim < 2 or noise < 0:
        raise ConfigurationError("need dim >= 2 and noise >= 0")
    rng = np.random.default_rng([seed, 3])
    clusters = object_clusters(vocabulary.n_objects, n_clusters)
    centres = rng.standard_normal((int(clusters.max()) + 1, dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    jitter = rng.standard_normal((vocabulary.n_objects, dim)) * (noise / math.sqrt(dim))
    vecs = centres[clusters] + jitter
    return EmbeddingStore(dim, {name: vecs[i] for i, name in enumerate(vocabulary.object_names)})


@dataclass(frozen=True)
class SimilarityParams:
    alpha: float = 0.7
    beta: float = 0.4

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.beta >= 0.0:
            # a negative threshold would admit negative transfer weights
            raise ConfigurationError(f"beta must be >= 0, got {self.beta}")


def similarity(v1, v2, alpha: float = 0.7) -> float:
    u = np.asarray(v1, dtype=np.float64)
    v = np.asarray(v2, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"vectors of shape {u.shape} and {v.shape} are not comparable")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DomainError("cosine is undefined for a zero vector")
    if np.array_equal(u, v):
        cos, d = 1.0, 0.0
    else:
        cos = float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
        d = float(np.linalg.norm(u - v))
    return alpha * cos + (1.0 - alpha) * (1.0 - d / (1.0 + d))


def similarity_matrix(store: EmbeddingStore, names: Sequence[str], alpha: float = 0.7) -> np.ndarray:
    n = len(names)
    vecs = store.matrix(names)
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            out[i, j] = out[j, i] = similarity(vecs[i], vecs[j], alpha)
    return out


@dataclass(frozen=True)
class InferredPair:
    subject_cat: int
    object_cat: int
    source_pair: tuple[int, int]
    rule: str
    similarity: float

    @property
    def pair(self) -> tuple[int, int]:
        return (self.subject_cat, self.object_cat)

    def to_json(self) -> dict:
        return {
            "pair": [self.subject_cat, self.object_cat],
            "source": list(self.source_pair),
            "rule": self.rule,
            "similarity": self.similarity,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "InferredPair":
        return cls(int(raw["pair"][0]), int(raw["pair"][1]), tuple(int(x) for x in raw["source"]),
                   str(raw["rule"]), float(raw["similarity"]))


def infer_zero_shot_pairs(
    train_pairs: Iterable[tuple[int, int]],
    store: EmbeddingStore,
    params: SimilarityParams,
    object_names: Sequence[str],
) -> list[InferredPair]:
    """Apply both substitution rules; unseen pairs only, best-scoring source kept.

    Output is sorted by (subject, object).
    """
    sim = similarity_matrix(store, object_names, params.alpha)
    observed = set(train_pairs)
    n_o = len(object_names)
    best: dict[tuple[int, int], InferredPair] = {}

    def offer(candidate: InferredPair) -> None:
        if candidate.pair in observed:
            return
        held = best.get(candidate.pair)
        if held is None or candidate.similarity > held.similarity:
            best[candidate.pair] = candidate

    for m, n in sorted(observed):
        for big in range(n_o):
            if big != m and sim[m, big] >= params.beta:
                offer(InferredPair(big, n, (m, n), RULE_FIRST_SLOT, float(sim[m, big])))
            if big != n and sim[n, big] >= params.beta:
                offer(InferredPair(m, big, (m, n), RULE_SECOND_SLOT, float(sim[n, big])))
    return [best[k] for k in sorted(best)]


def optimize_pair_distribution(P, inferred: Sequence[InferredPair]) -> np.ndarray:
    """Move similarity-weighted mass from each source pair onto its inferred pair, then renormalize."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ShapeError(f"pair distribution must be square, got {P.shape}")
    out = P.copy()
    n_o = P.shape[0]
    for ip in inferred:
        (m, n), (s, o) = ip.source_pair, ip.pair
        if not all(0 <= x < n_o for x in (m, n, s, o)):
            raise ShapeError(f"inferred pair {ip.pair} from {ip.source_pair} outside a {n_o}x{n_o} table")
        out[s, o] += ip.similarity * P[m, n]
    total = out.sum()
    return out / total if total > 0 else out


def zero_shot_pair_recall(inferred: Iterable[InferredPair], manifest: ZeroShotManifest) -> float:
    targets = manifest.zero_shot_pairs
    if not targets:
        return 1.0
    found = {ip.pair for ip in inferred}
    return len(found & targets) / len(targets)
