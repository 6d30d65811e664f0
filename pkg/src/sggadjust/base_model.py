"""Frozen biased relationship classifier that the adjustment module corrects.

Features are one-hot(subject) + one-hot(object) + seeded Gaussian noise; the
classifier is multinomial logistic regression fitted by full-batch gradient
descent. External backbone logits can replace it through the JSON-lines
logits file.
"""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import Dataset, Instance
from .errors import FormatError, IndexLookupError, TrainingError


@dataclass(frozen=True)
class FrozenBaseModel:
    weight: np.ndarray  # (2 * N_o + d_noise, N_r)
    bias: np.ndarray  # (N_r,)
    n_objects: int
    d_noise: int = 4
    feature_seed: int = 0
    noise_sigma: float = 1.0

    def __post_init__(self):
        for name in ("weight", "bias"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.weight.shape[0] != 2 * self.n_objects + self.d_noise:
            raise FormatError("weight rows must equal 2 * n_objects + d_noise")
        if self.weight.shape[1] != self.bias.shape[0]:
            raise FormatError("weight columns must equal bias length")

    @property
    def n_predicates(self) -> int:
        return self.bias.shape[0]

    def to_json(self) -> dict:
        return {
            "kind": "frozen_base_model",
            "n_objects": self.n_objects,
            "d_noise": self.d_noise,
            "feature_seed": self.feature_seed,
            "noise_sigma": self.noise_sigma,
            "weight": self.weight.tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "FrozenBaseModel":
        if payload.get("kind") != "frozen_base_model":
            raise FormatError("not a base-model checkpoint")
        return cls(
            np.asarray(payload["weight"], dtype=np.float64),
            np.asarray(payload["bias"], dtype=np.float64),
            int(payload["n_objects"]),
            int(payload["d_noise"]),
            int(payload["feature_seed"]),
            float(payload["noise_sigma"]),
        )


def save_base_model(model: FrozenBaseModel, path: str | Path, extra: dict | None = None) -> None:
    payload = model.to_json()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def load_base_model(path: str | Path) -> FrozenBaseModel:
    return FrozenBaseModel.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def instance_noise(feature_seed: int, key: tuple[str, int], d_noise: int, sigma: float = 1.0) -> np.ndarray:
    """Noise features of one instance; a pure function of the seed and the instance key."""
    if d_noise == 0:
        return np.zeros(0)
    scene_id, position = key
    seq = np.random.SeedSequence([feature_seed, zlib.crc32(scene_id.encode("utf-8")), position])
    return sigma * np.random.default_rng(seq).standard_normal(d_noise)


def features(
    instances: Sequence[Instance], n_objects: int, d_noise: int, feature_seed: int, sigma: float = 1.0
) -> np.ndarray:
    x = np.zeros((len(instances), 2 * n_objects + d_noise))
    for row, inst in enumerate(instances):
        if not (0 <= inst.subject_cat < n_objects and 0 <= inst.object_cat < n_objects):
            raise IndexLookupError(f"instance {inst.key}: category index outside [0, {n_objects})")
        x[row, inst.subject_cat] = 1.0
        x[row, n_objects + inst.object_cat] = 1.0
        x[row, 2 * n_objects:] = instance_noise(feature_seed, inst.key, d_noise, sigma)
    return x


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def train_base(
    train: Dataset,
    epochs: int = 200,
    lr: float = 0.1,
    seed: int = 0,
    d_noise: int = 4,
    noise_sigma: float = 1.0,
) -> FrozenBaseModel:
    """Fit the stand-in classifier by full-batch gradient descent on cross-entropy."""
    instances = list(train)
    if not instances:
        raise TrainingError("cannot train the base model on an empty corpus")
    n_o, n_r = train.vocabulary.n_objects, train.vocabulary.n_predicates
    x = features(instances, n_o, d_noise, seed, noise_sigma)
    y = np.array([i.predicate_cat for i in instances])
    onehot = np.eye(n_r)[y]
    w = np.zeros((x.shape[1], n_r))
    b = np.zeros(n_r)
    n = len(instances)
    for _ in range(epochs):
        probs = np.exp(_log_softmax(x @ w + b))
        delta = (probs - onehot) / n
        w -= lr * (x.T @ delta)
        b -= lr * delta.sum(axis=0)
    return FrozenBaseModel(w, b, n_o, d_noise, seed, noise_sigma)


@dataclass(frozen=True)
class LogitsRecord:
    scene_id: str
    position: int
    logits: tuple[float, ...]

    @property
    def key(self) -> tuple[str, int]:
        return (self.scene_id, self.position)


def logits_matrix(model: FrozenBaseModel, instances: Sequence[Instance]) -> np.ndarray:
    x = features(instances, model.n_objects, model.d_noise, model.feature_seed, model.noise_sigma)
    return x @ model.weight + model.bias


def base_logits(model: FrozenBaseModel, instances: Sequence[Instance]) -> list[LogitsRecord]:
    z = logits_matrix(model, instances)
    return [
        LogitsRecord(inst.scene_id, inst.position, tuple(float(v) for v in row))
        for inst, row in zip(instances, z)
    ]


def export_logits(records: Iterable[LogitsRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"scene": r.scene_id, "pos": r.position, "logits": list(r.logits)}) + "\n")


def import_logits(path: str | Path, n_predicates: int | None = None) -> list[LogitsRecord]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                key = (raw["scene"], raw["pos"])
                logits = raw["logits"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed record ({exc})") from exc
            if not isinstance(key[0], str) or not isinstance(key[1], int) or isinstance(key[1], bool):
                raise FormatError(f"{path}:{lineno}: record key must be (string scene, integer pos)")
            if key in seen:
                raise FormatError(f"{path}:{lineno}: duplicate record for scene {key[0]!r} pos {key[1]}")
            seen.add(key)
            if not isinstance(logits, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in logits
            ):
                raise FormatError(f"{path}:{lineno}: logits must be a list of numbers")
            if n_predicates is not None and len(logits) != n_predicates:
                raise FormatError(
                    f"{path}:{lineno}: record {key} has {len(logits)} logits, expected {n_predicates}"
                )
            values = tuple(float(v) for v in logits)
            if not all(np.isfinite(values)):
                raise FormatError(f"{path}:{lineno}: record {key} has non-finite logits")
            records.append(LogitsRecord(key[0], key[1], values))
    return records


def records_to_matrix(records: Sequence[LogitsRecord], instances: Sequence[Instance]) -> np.ndarray:
    """Align logits records to ``instances`` by key; every instance must be covered."""
    table = {r.key: r.logits for r in records}
    missing = [i.key for i in instances if i.key not in table]
    if missing:
        raise FormatError(f"no logits for {len(missing)} instances, first {missing[0]}")
    return np.array([table[i.key] for i in instances], dtype=np.float64)
