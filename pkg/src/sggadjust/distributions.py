"""Object, co-occurrence, pair and predicate distributions of a training corpus."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Dataset, Instance
from .errors import DomainError, ExtractionError, FormatError, IndexLookupError


@dataclass(frozen=True)
class CorpusCounts:
    object_counts: np.ndarray  # slot occurrences per category, (N_o,)
    pair_counts: np.ndarray  # ordered subject->object pairs, (N_o, N_o)
    predicate_counts: np.ndarray  # (N_r,)

    @property
    def n_instances(self) -> int:
        return int(self.predicate_counts.sum())


def count_corpus(train: Dataset) -> CorpusCounts:
    if train.n_instances == 0:
        raise ExtractionError("cannot extract distributions from an empty corpus")
    n_o, n_r = train.vocabulary.n_objects, train.vocabulary.n_predicates
    a = train.arrays
    pairs = np.zeros((n_o, n_o), dtype=np.int64)
    np.add.at(pairs, (a["subject"], a["object"]), 1)
    objects = np.bincount(a["subject"], minlength=n_o) + np.bincount(a["object"], minlength=n_o)
    predicates = np.bincount(a["predicate"], minlength=n_r)
    return CorpusCounts(objects.astype(np.int64), pairs, predicates.astype(np.int64))


def object_distribution(counts: CorpusCounts) -> np.ndarray:
    return counts.object_counts / counts.object_counts.sum()


def cooccurrence(counts: CorpusCounts) -> np.ndarray:
    """Symmetric co-occurrence ratios.

    Off-diagonal: (n_ij + n_ji) / (c_i + c_j). On the diagonal the two
    categories coincide, so the participations are counted once:
    2 n_ii / c_i. Zero denominators give 0.
    """
    n = counts.pair_counts.astype(np.float64)
    c = counts.object_counts.astype(np.float64)
    numer = n + n.T
    denom = c[:, None] + c[None, :]
    np.fill_diagonal(denom, c)
    out = np.zeros_like(numer)
    np.divide(numer, denom, out=out, where=denom > 0)
    return out


def pair_distribution(counts: CorpusCounts) -> np.ndarray:
    return counts.pair_counts / counts.pair_counts.sum()


def relationship_distribution(counts: CorpusCounts) -> np.ndarray:
    return counts.predicate_counts / counts.predicate_counts.sum()


def extract_object_distribution(train: Dataset) -> np.ndarray:
    return object_distribution(count_corpus(train))


def extract_cooccurrence(train: Dataset) -> np.ndarray:
    return cooccurrence(count_corpus(train))


def extract_pair_distribution(train: Dataset) -> np.ndarray:
    return pair_distribution(count_corpus(train))


def extract_relationship_distribution(train: Dataset) -> np.ndarray:
    return relationship_distribution(count_corpus(train))


@dataclass(frozen=True)
class DistributionSet:
    O: np.ndarray
    C: np.ndarray
    P: np.ndarray
    R: np.ndarray
    counts: CorpusCounts | None = None

    @property
    def n_objects(self) -> int:
        return self.O.shape[0]

    @property
    def n_predicates(self) -> int:
        return self.R.shape[0]

    def with_pair_distribution(self, P: np.ndarray) -> "DistributionSet":
        return DistributionSet(self.O, self.C, np.asarray(P, dtype=np.float64), self.R, self.counts)

    def to_json(self) -> dict:
        payload = {
            "O": self.O.tolist(), "C": self.C.tolist(), "P": self.P.tolist(), "R": self.R.tolist(),
        }
        if self.counts is not None:
            payload["raw_counts"] = {
                "objects": self.counts.object_counts.tolist(),
                "pairs": self.counts.pair_counts.tolist(),
                "predicates": self.counts.predicate_counts.tolist(),
            }
        return payload

    @classmethod
    def from_json(cls, payload: dict) -> "DistributionSet":
        try:
            arrays = {k: np.asarray(payload[k], dtype=np.float64) for k in "OCPR"}
        except (KeyError, ValueError) as exc:
            raise FormatError(f"malformed distribution file: {exc}") from exc
        n_o = arrays["O"].shape[0]
        if arrays["C"].shape != (n_o, n_o) or arrays["P"].shape != (n_o, n_o):
            raise FormatError("C and P must be N_o x N_o")
        counts = None
        if "raw_counts" in payload:
            rc = payload["raw_counts"]
            counts = CorpusCounts(
                np.asarray(rc["objects"], dtype=np.int64),
                np.asarray(rc["pairs"], dtype=np.int64),
                np.asarray(rc["predicates"], dtype=np.int64),
            )
        return cls(arrays["O"], arrays["C"], arrays["P"], arrays["R"], counts)


def extract_distributions(train: Dataset) -> DistributionSet:
    counts = count_corpus(train)
    return DistributionSet(
        object_distribution(counts),
        cooccurrence(counts),
        pair_distribution(counts),
        relationship_distribution(counts),
        counts,
    )


def save_distributions(dists: DistributionSet, path: str | Path, extra: dict | None = None) -> None:
    payload = dists.to_json()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_distributions(path: str | Path) -> DistributionSet:
    return DistributionSet.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class BatchSubDistributions:
    O_B: np.ndarray  # (|B|, 2): subject slot, object slot
    C_B: np.ndarray  # (|B|,)
    P_B: np.ndarray  # (|B|,)
    R_B: np.ndarray  # (N_r,)

    def __len__(self) -> int:
        return self.C_B.shape[0]


def batch_lookup(
    dists: DistributionSet, subjects: np.ndarray, objects: np.ndarray
) -> BatchSubDistributions:
    subjects = np.asarray(subjects, dtype=np.int64).reshape(-1)
    objects = np.asarray(objects, dtype=np.int64).reshape(-1)
    n_o = dists.n_objects
    for label, idx in (("subject", subjects), ("object", objects)):
        bad = (idx < 0) | (idx >= n_o)
        if bad.any():
            raise IndexLookupError(
                f"{label} index {int(idx[bad][0])} outside [0, {n_o}) at batch row {int(np.argmax(bad))}"
            )
    return BatchSubDistributions(
        np.stack([dists.O[subjects], dists.O[objects]], axis=1).reshape(-1, 2),
        dists.C[subjects, objects],
        dists.P[subjects, objects],
        dists.R.copy(),
    )


def batch_subdistributions(dists: DistributionSet, batch: Sequence[Instance]) -> BatchSubDistributions:
    subjects = np.array([i.subject_cat for i in batch], dtype=np.int64)
    objects = np.array([i.object_cat for i in batch], dtype=np.int64)
    return batch_lookup(dists, subjects, objects)


def prediction_entropy(probs) -> float:
    """Shannon entropy in nats, with 0 ln 0 taken as 0."""
    p = np.asarray(probs, dtype=np.float64)
    if (p < 0).any():
        raise DomainError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise DomainError(f"probabilities sum to {p.sum()}, not 1")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())
