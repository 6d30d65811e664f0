"""Annotation data model, JSON I/O, synthetic long-tail corpora and splits."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigurationError, SplitError, ValidationError

Triplet = tuple[int, int, int]  # (subject_cat, predicate_cat, object_cat)
Pair = tuple[int, int]  # (subject_cat, object_cat)


@dataclass(frozen=True)
class Vocabulary:
    object_names: tuple[str, ...]
    predicate_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "object_names", tuple(self.object_names))
        object.__setattr__(self, "predicate_names", tuple(self.predicate_names))
        if len(self.object_names) < 2:
            raise ValidationError("vocabulary needs at least 2 object categories")
        if len(self.predicate_names) < 1:
            raise ValidationError("vocabulary needs at least 1 predicate")
        for label, names in (("object", self.object_names), ("predicate", self.predicate_names)):
            if len(set(names)) != len(names):
                raise ValidationError(f"duplicate {label} names in vocabulary")

    @property
    def n_objects(self) -> int:
        return len(self.object_names)

    @property
    def n_predicates(self) -> int:
        return len(self.predicate_names)


@dataclass(frozen=True)
class Instance:
    subject_cat: int
    object_cat: int
    predicate_cat: int
    scene_id: str
    position: int = 0

    @property
    def triplet(self) -> Triplet:
        return (self.subject_cat, self.predicate_cat, self.object_cat)

    @property
    def pair(self) -> Pair:
        return (self.subject_cat, self.object_cat)

    @property
    def key(self) -> tuple[str, int]:
        return (self.scene_id, self.position)


@dataclass(frozen=True)
class Scene:
    scene_id: str
    instances: tuple[Instance, ...]

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if not self.instances:
            raise ValidationError(f"scene '{self.scene_id}' has no instances")
        for pos, inst in enumerate(self.instances):
            if inst.scene_id != self.scene_id or inst.position != pos:
                raise ValidationError(
                    f"scene '{self.scene_id}' instance {pos} carries key {inst.key}"
                )

    @classmethod
    def from_triplets(cls, scene_id: str, triplets: Iterable[Triplet]) -> "Scene":
        return cls(
            scene_id,
            tuple(
                Instance(int(s), int(o), int(p), scene_id, pos)
                for pos, (s, p, o) in enumerate(triplets)
            ),
        )


@dataclass(frozen=True)
class Dataset:
    vocabulary: Vocabulary
    scenes: tuple[Scene, ...]

    def __post_init__(self):
        object.__setattr__(self, "scenes", tuple(self.scenes))
        seen = set()
        n_o, n_r = self.vocabulary.n_objects, self.vocabulary.n_predicates
        for scene in self.scenes:
            if scene.scene_id in seen:
                raise ValidationError(f"duplicate scene id '{scene.scene_id}'")
            seen.add(scene.scene_id)
            for inst in scene.instances:
                where = f"scene '{scene.scene_id}' instance {inst.position}"
                for label, value, bound in (
                    ("subject", inst.subject_cat, n_o),
                    ("object", inst.object_cat, n_o),
                    ("predicate", inst.predicate_cat, n_r),
                ):
                    if not 0 <= value < bound:
                        raise ValidationError(
                            f"{where}: {label} index {value} outside [0, {bound})"
                        )

    def __iter__(self) -> Iterator[Instance]:
        for scene in self.scenes:
            yield from scene.instances

    def __len__(self) -> int:
        return sum(len(s.instances) for s in self.scenes)

    @property
    def n_instances(self) -> int:
        return len(self)

    @cached_property
    def arrays(self) -> dict[str, np.ndarray]:
        """Column view: subject, object, predicate, scene index, position."""
        rows = [
            (i.subject_cat, i.object_cat, i.predicate_cat, si, i.position)
            for si, scene in enumerate(self.scenes)
            for i in scene.instances
        ]
        cols = np.array(rows, dtype=np.int64).reshape(-1, 5)
        return {
            "subject": cols[:, 0], "object": cols[:, 1], "predicate": cols[:, 2],
            "scene": cols[:, 3], "position": cols[:, 4],
        }

    def triplet_types(self) -> set[Triplet]:
        return {inst.triplet for inst in self}

    def pair_types(self) -> set[Pair]:
        return {inst.pair for inst in self}

    def subset(self, scene_ids: Iterable[str]) -> "Dataset":
        wanted = set(scene_ids)
        return Dataset(self.vocabulary, tuple(s for s in self.scenes if s.scene_id in wanted))

    def to_json(self) -> dict:
        return {
            "objects": list(self.vocabulary.object_names),
            "predicates": list(self.vocabulary.predicate_names),
            "scenes": [
                {"id": s.scene_id, "triplets": [list(i.triplet) for i in s.instances]}
                for s in self.scenes
            ],
        }


def dataset_from_json(payload: dict) -> Dataset:
    if not isinstance(payload, dict):
        raise ValidationError("dataset file must hold a JSON object")
    for key in ("objects", "predicates", "scenes"):
        if key not in payload:
            raise ValidationError(f"dataset file lacks '{key}'")
    objects, predicates = payload["objects"], payload["predicates"]
    for key, names in (("objects", objects), ("predicates", predicates)):
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise ValidationError(f"'{key}' must be a list of strings")
    vocab = Vocabulary(tuple(objects), tuple(predicates))
    if not isinstance(payload["scenes"], list):
        raise ValidationError("'scenes' must be a list")
    scenes = []
    for n, raw in enumerate(payload["scenes"]):
        if not isinstance(raw, dict) or "id" not in raw or "triplets" not in raw:
            raise ValidationError(f"scene #{n} must have 'id' and 'triplets'")
        sid = raw["id"]
        if not isinstance(sid, str):
            raise ValidationError(f"scene #{n} id must be a string")
        triplets = raw["triplets"]
        if not isinstance(triplets, list):
            raise ValidationError(f"scene '{sid}' triplets must be a list")
        for pos, t in enumerate(triplets):
            ok = (
                isinstance(t, list) and len(t) == 3
                and all(isinstance(v, int) and not isinstance(v, bool) for v in t)
            )
            if not ok:
                raise ValidationError(
                    f"scene '{sid}' instance {pos}: triplet must be 3 integers, got {t!r}"
                )
        scenes.append(Scene.from_triplets(sid, [tuple(t) for t in triplets]))
    return Dataset(vocab, tuple(scenes))


def load_dataset(path: str | Path) -> Dataset:
    with open(path, encoding="utf-8") as fh:  # missing file -> OSError
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return dataset_from_json(payload)


def save_dataset(dataset: Dataset, path: str | Path, extra: dict | None = None) -> None:
    payload = dataset.to_json()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


# -- synthetic corpora ---------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the long-tail generator.

    ``pair_preference`` is the weight of each pair's favourite predicate in
    its predicate distribution (the rest follows the global Zipf law), and
    ``zero_shot_fraction`` is the share of category pairs demoted to rare
    pairs so that random splits leave some of them test-only.
    """

    n_objects: int = 20
    n_predicates: int = 10
    n_scenes: int = 500
    object_zipf_s: float = 1.0
    predicate_zipf_s: float = 1.2
    affinity_clusters: int = 4
    zero_shot_fraction: float = 0.1
    seed: int = 0
    pair_preference: float = 0.5
    cross_cluster_rate: float = 0.1
    max_objects_per_scene: int = 8
    rare_pair_weight: float = 0.05

    def __post_init__(self):
        for name in ("n_objects", "n_predicates", "n_scenes", "affinity_clusters"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.n_objects < 2:
            raise ConfigurationError("n_objects must be at least 2")
        if self.object_zipf_s <= 0 or self.predicate_zipf_s <= 0:
            raise ConfigurationError("Zipf exponents must be > 0")
        if not 0.0 <= self.zero_shot_fraction < 0.5:
            raise ConfigurationError("zero_shot_fraction must lie in [0, 0.5)")
        if not 0.0 <= self.pair_preference <= 1.0:
            raise ConfigurationError("pair_preference must lie in [0, 1]")
        if not 0.0 <= self.cross_cluster_rate <= 1.0:
            raise ConfigurationError("cross_cluster_rate must lie in [0, 1]")
        if self.max_objects_per_scene < 2:
            raise ConfigurationError("max_objects_per_scene must be at least 2")
        if not 0.0 < self.rare_pair_weight <= 1.0:
            raise ConfigurationError("rare_pair_weight must lie in (0, 1]")

    @classmethod
    def from_dict(cls, raw: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown SynthConfig keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


def zipf_weights(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** s
    return w / w.sum()


def object_clusters(n_objects: int, n_clusters: int) -> np.ndarray:
    """Cluster id of every object category (round-robin, so each cluster mixes head and tail)."""
    return np.arange(n_objects) % min(n_clusters, n_objects)


@dataclass(frozen=True)
class SynthTables:
    """Latent tables behind a synthetic corpus, exposed for tests and vector generation."""

    clusters: np.ndarray
    object_weights: np.ndarray
    predicate_weights: np.ndarray
    favourite: np.ndarray  # (N_o, N_o) favourite predicate per ordered pair
    preference: np.ndarray  # (N_o, N_o, N_r) predicate distribution per ordered pair
    rare_pairs: frozenset = field(default_factory=frozenset)


def synth_tables(config: SynthConfig) -> SynthTables:
    rng = np.random.default_rng([config.seed, 1])
    n_o, n_r = config.n_objects, config.n_predicates
    clusters = object_clusters(n_o, config.affinity_clusters)
    n_c = int(clusters.max()) + 1
    obj_w = zipf_weights(n_o, config.object_zipf_s)
    pred_w = zipf_weights(n_r, config.predicate_zipf_s)
    # favourites are shared per cluster pair, then half the pairs get their own
    fav_w = zipf_weights(n_r, config.predicate_zipf_s / 2)
    cluster_fav = rng.choice(n_r, size=(n_c, n_c), p=fav_w)
    own_fav = rng.choice(n_r, size=(n_o, n_o), p=fav_w)
    use_own = rng.random((n_o, n_o)) < 0.5
    favourite = np.where(use_own, own_fav, cluster_fav[clusters[:, None], clusters[None, :]])
    lam = config.pair_preference
    preference = np.broadcast_to((1.0 - lam) * pred_w, (n_o, n_o, n_r)).copy()
    preference[np.arange(n_o)[:, None], np.arange(n_o)[None, :], favourite] += lam
    n_rare = int(round(config.zero_shot_fraction * n_o * n_o))
    flat = rng.choice(n_o * n_o, size=n_rare, replace=False) if n_rare else []
    rare = frozenset((int(f) // n_o, int(f) % n_o) for f in flat)
    return SynthTables(clusters, obj_w, pred_w, favourite, preference, rare)


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Sample a corpus of scenes with Zipf objects, Zipf predicates and clustered pairs.

    Each scene draws a cluster, then objects mostly from that cluster, then
    ordered object pairs, then one predicate per pair from the pair's
    preference row. Pure function of ``config``.
    """
    tables = synth_tables(config)
    rng = np.random.default_rng([config.seed, 2])
    n_o, n_r = config.n_objects, config.n_predicates
    clusters, obj_w = tables.clusters, tables.object_weights
    n_c = int(clusters.max()) + 1
    cluster_mass = np.array([obj_w[clusters == c].sum() for c in range(n_c)])
    within = [np.where(clusters == c, obj_w, 0.0) / cluster_mass[c] for c in range(n_c)]

    scenes = []
    width = len(str(max(config.n_scenes - 1, 0)))
    for s in range(config.n_scenes):
        c = rng.choice(n_c, p=cluster_mass)
        n_obj = int(rng.integers(3, config.max_objects_per_scene + 1))
        cross = rng.random(n_obj) < config.cross_cluster_rate
        objs = np.where(
            cross, rng.choice(n_o, size=n_obj, p=obj_w), rng.choice(n_o, size=n_obj, p=within[c])
        )
        slots = [(a, b) for a in range(n_obj) for b in range(n_obj) if a != b]
        weights = np.array([
            config.rare_pair_weight if (int(objs[a]), int(objs[b])) in tables.rare_pairs else 1.0
            for a, b in slots
        ])
        n_rel = int(rng.integers(1, min(2 * n_obj, len(slots)) + 1))
        chosen = rng.choice(len(slots), size=n_rel, replace=False, p=weights / weights.sum())
        triplets = []
        for idx in sorted(chosen):
            a, b = slots[idx]
            subj, obj = int(objs[a]), int(objs[b])
            pred = int(rng.choice(n_r, p=tables.preference[subj, obj]))
            triplets.append((subj, pred, obj))
        scenes.append(Scene.from_triplets(f"s{s:0{width}d}", triplets))

    vocab = Vocabulary(
        tuple(f"object_{i:02d}" for i in range(n_o)),
        tuple(f"predicate_{k:02d}" for k in range(n_r)),
    )
    return Dataset(vocab, tuple(scenes))


# -- splits ----------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroShotManifest:
    zero_shot_triplets: frozenset = frozenset()
    zero_shot_pairs: frozenset = frozenset()

    def to_json(self) -> dict:
        return {
            "zero_shot_triplets": [list(t) for t in sorted(self.zero_shot_triplets)],
            "zero_shot_pairs": [list(p) for p in sorted(self.zero_shot_pairs)],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ZeroShotManifest":
        return cls(
            frozenset(tuple(t) for t in payload["zero_shot_triplets"]),
            frozenset(tuple(p) for p in payload["zero_shot_pairs"]),
        )


def zero_shot_manifest(train: Dataset, test: Dataset) -> ZeroShotManifest:
    return ZeroShotManifest(
        frozenset(test.triplet_types() - train.triplet_types()),
        frozenset(test.pair_types() - train.pair_types()),
    )


def split_train_test(
    dataset: Dataset, test_fraction: float, seed: int
) -> tuple[Dataset, Dataset, ZeroShotManifest]:
    if not 0.0 < test_fraction < 1.0:
        raise SplitError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(dataset.scenes)
    if n < 2:
        raise SplitError("need at least 2 scenes to split")
    n_test = min(max(int(round(test_fraction * n)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    test_idx = set(order[:n_test].tolist())
    train = Dataset(dataset.vocabulary, tuple(s for i, s in enumerate(dataset.scenes) if i not in test_idx))
    test = Dataset(dataset.vocabulary, tuple(s for i, s in enumerate(dataset.scenes) if i in test_idx))
    return train, test, zero_shot_manifest(train, test)
