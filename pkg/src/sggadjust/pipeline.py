"""End-to-end experiment: data, split, distributions, base model, zero-shot pairs,
adjustment module, evaluation, plus the ablation sweeps and the artifact directory."""
from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .base_model import FrozenBaseModel, import_logits, logits_matrix, records_to_matrix, train_base
from .camodule import (
    CAModuleParams, TrainConfig, adjust_logits, adjustment_factors, train_camodule, vanilla_adjustment,
)
from .dataset import (
    Dataset, SynthConfig, ZeroShotManifest, generate_synthetic, load_dataset, split_train_test,
)
from .distributions import DistributionSet, batch_lookup, extract_distributions
from .errors import ArtifactError, ConfigurationError, SGGAdjustError, StageError
from .evaluation import DEFAULT_KS, MetricReport, build_report, rank_dataset, reports_to_json
from .zeroshot import (
    EmbeddingStore, InferredPair, SimilarityParams, infer_zero_shot_pairs, load_word_vectors,
    optimize_pair_distribution, synthetic_word_vectors, zero_shot_pair_recall,
)

ALPHA_GRID = (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
BETA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
DISTANCE_MODES = ("none", "d", "cos", "d+cos")
AXES = ("alpha", "beta", "distance_mode", "pair_opt")
# fixed alpha realizing each similarity variant; "d+cos" keeps the configured blend
_MODE_ALPHA = {"d": 0.0, "cos": 1.0}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(adjust_mode="softplus"))
    similarity: SimilarityParams = field(default_factory=SimilarityParams)
    test_fraction: float = 0.2
    base_epochs: int = 200
    base_lr: float = 0.1
    d_noise: int = 4
    noise_sigma: float = 1.0
    ks: tuple = DEFAULT_KS
    pair_opt: bool = True
    data_path: str | None = None
    logits_path: str | None = None
    vectors_path: str | None = None
    synthetic_vectors: bool = True
    vector_dim: int = 50
    vector_noise: float = 0.5
    alpha_grid: tuple = ALPHA_GRID
    beta_grid: tuple = BETA_GRID
    distance_modes: tuple = DISTANCE_MODES

    def __post_init__(self):
        if not self.ks or min(self.ks) < 1:
            raise ConfigurationError("ks must be a non-empty list of positive integers")
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        for name in ("alpha_grid", "beta_grid", "distance_modes"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        bad = set(self.distance_modes) - set(DISTANCE_MODES)
        if bad:
            raise ConfigurationError(f"unknown distance modes {sorted(bad)}")

    @property
    def has_vectors(self) -> bool:
        return self.vectors_path is not None or self.synthetic_vectors

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "to_dict"):
                value = value.to_dict()
            elif dataclasses.is_dataclass(value):
                value = dataclasses.asdict(value)
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        kw = dict(raw)
        try:
            if "synth" in kw:
                kw["synth"] = SynthConfig.from_dict(kw["synth"])
            if "train" in kw:
                kw["train"] = TrainConfig.from_dict(kw["train"])
            if "similarity" in kw:
                kw["similarity"] = SimilarityParams(**kw["similarity"])
            return cls(**kw)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return ExperimentConfig.from_dict(raw)


@contextlib.contextmanager
def stage(name: str):
    """Tag any failure inside with the stage that raised it."""
    try:
        yield
    except StageError:
        raise
    except (SGGAdjustError, OSError, ValueError, KeyError) as exc:
        raise StageError(name, exc) from exc


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    dataset: Dataset
    train: Dataset
    test: Dataset
    manifest: ZeroShotManifest
    dists: DistributionSet
    base: FrozenBaseModel | None
    store: EmbeddingStore | None
    inferred: list[InferredPair]
    cam_dists: DistributionSet
    cam: CAModuleParams
    loss_curve: list[float]
    reports: list[MetricReport]
    table: str

    def report(self, label: str) -> MetricReport:
        return next(r for r in self.reports if r.label == label)

    @property
    def zpr(self) -> float | None:
        return self.report("camodule").zpr


def _load_store(config: ExperimentConfig, dataset: Dataset) -> EmbeddingStore | None:
    if config.vectors_path is not None:
        return load_word_vectors(config.vectors_path, dataset.vocabulary)
    if config.synthetic_vectors:
        return synthetic_word_vectors(
            dataset.vocabulary, config.synth.affinity_clusters, config.vector_dim,
            config.vector_noise, config.seed,
        )
    return None


def _logits(config, base, instances, records) -> np.ndarray:
    if records is not None:
        return records_to_matrix(records, instances)
    return logits_matrix(base, instances)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run every stage in memory; failures surface as StageError naming the stage."""
    seed = config.seed
    with stage("gen-data"):
        if config.data_path is not None:
            dataset = load_dataset(config.data_path)
        else:
            dataset = generate_synthetic(dataclasses.replace(config.synth, seed=seed))
    with stage("split"):
        train, test, manifest = split_train_test(dataset, config.test_fraction, seed)
    with stage("extract-dist"):
        dists = extract_distributions(train)
    with stage("train-base"):
        records = None
        base = None
        if config.logits_path is not None:
            records = import_logits(config.logits_path, dataset.vocabulary.n_predicates)
        else:
            base = train_base(train, config.base_epochs, config.base_lr, seed, config.d_noise, config.noise_sigma)
        train_logits = _logits(config, base, list(train), records)
        test_logits = _logits(config, base, list(test), records)
    with stage("infer-pairs"):
        store = _load_store(config, dataset) if config.pair_opt else None
        inferred = []
        if store is not None:
            inferred = infer_zero_shot_pairs(
                train.pair_types(), store, config.similarity, dataset.vocabulary.object_names
            )
    with stage("optimize-P"):
        cam_dists = dists
        if inferred:
            cam_dists = dists.with_pair_distribution(optimize_pair_distribution(dists.P, inferred))
    with stage("train-cam"):
        train_cfg = dataclasses.replace(config.train, seed=seed)
        cam, curve = train_camodule(base, cam_dists, train, train_cfg, logits=train_logits)
    with stage("eval"):
        mode = train_cfg.adjust_mode
        a = test.arrays
        factors = adjustment_factors(cam, batch_lookup(cam_dists, a["subject"], a["object"]))
        vanilla = np.broadcast_to(vanilla_adjustment(dists.R), test_logits.shape)
        systems = [
            ("base", rank_dataset(test_logits, test)),
            ("vanilla", rank_dataset(adjust_logits(test_logits, vanilla, mode), test)),
            ("camodule", rank_dataset(adjust_logits(test_logits, factors, mode), test)),
        ]
        zpr = {"camodule": zero_shot_pair_recall(inferred, manifest)} if store is not None else None
        reports, table = build_report(systems, test, manifest, config.ks, zpr)
    return ExperimentResult(
        config, dataset, train, test, manifest, dists, base, store, inferred,
        cam_dists, cam, curve, reports, table,
    )


# -- artifact directory --------------------------------------------------------

def run_dir_name(config: ExperimentConfig) -> str:
    return f"{config.config_hash()}-seed{config.seed}"


class ArtifactWriter:
    """Append-only writer: an existing file may only be rewritten with identical bytes."""

    def __init__(self, root: Path, config: ExperimentConfig):
        self.root = Path(root)
        self.config_hash = config.config_hash()
        self.seed = config.seed
        self.entries: dict[str, dict] = {}
        self.root.mkdir(parents=True, exist_ok=True)

    def write_bytes(self, name: str, data: bytes) -> Path:
        path = self.root / name
        if path.exists() and path.read_bytes() != data:
            raise ArtifactError(f"refusing to overwrite {path} with different content")
        if not path.exists():
            path.write_bytes(data)
        self.entries[name] = {"sha256": hashlib.sha256(data).hexdigest(), "config_hash": self.config_hash}
        return path

    def write_json(self, name: str, payload: dict) -> Path:
        payload = dict(payload, config_hash=self.config_hash, seed=self.seed)
        return self.write_bytes(name, (json.dumps(payload, sort_keys=True) + "\n").encode("utf-8"))

    def write_manifest(self) -> Path:
        payload = {"config_hash": self.config_hash, "seed": self.seed, "artifacts": self.entries}
        data = (json.dumps(payload, sort_keys=True, indent=2) + "\n").encode("utf-8")
        return self.write_bytes("manifest.json", data)


def write_artifacts(result: ExperimentResult, root: Path) -> Path:
    cfg = result.config
    w = ArtifactWriter(root, cfg)
    w.write_json("config.json", {"config": cfg.to_dict()})
    w.write_json("dataset.json", result.dataset.to_json())
    w.write_json("split.json", {
        "train_scenes": [s.scene_id for s in result.train.scenes],
        "test_scenes": [s.scene_id for s in result.test.scenes],
        "manifest": result.manifest.to_json(),
    })
    w.write_json("distributions.json", result.dists.to_json())
    if result.base is not None:
        w.write_json("base.json", result.base.to_json())
    if result.store is not None:
        names = result.dataset.vocabulary.object_names
        text = "".join(n + " " + " ".join(repr(float(x)) for x in result.store[n]) + "\n" for n in names)
        w.write_bytes("vectors.txt", text.encode("utf-8"))
    w.write_json("inferred_pairs.json", {
        "alpha": cfg.similarity.alpha, "beta": cfg.similarity.beta,
        "pairs": [ip.to_json() for ip in result.inferred],
    })
    w.write_json("distributions_cam.json", result.cam_dists.to_json())
    w.write_json("camodule.json", dict(result.cam.to_json(), loss_curve=result.loss_curve))
    report = json.loads(reports_to_json(result.reports))
    w.write_json("report.json", report)
    w.write_bytes("report.txt", (result.table + "\n").encode("utf-8"))
    w.write_manifest()
    return w.root


def run_pipeline(config: ExperimentConfig, out_dir: str | Path) -> tuple[ExperimentResult, Path]:
    result = run_experiment(config)
    root = write_artifacts(result, Path(out_dir) / run_dir_name(config))
    return result, root


# -- ablations -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    value: object
    report: MetricReport
    zpr: float | None
    n_inferred: int


def sweep_points(config: ExperimentConfig, axis: str) -> list[tuple[object, ExperimentConfig]]:
    """Grid values for ``axis`` with the config each one runs under; validates before compute."""
    if axis not in AXES:
        raise ConfigurationError(f"unknown ablation axis '{axis}', expected one of {AXES}")
    if axis in ("alpha", "beta", "distance_mode") and not config.has_vectors:
        raise ConfigurationError(f"the {axis} sweep needs word vectors (vectors_path or synthetic_vectors)")
    sim = config.similarity
    if axis == "alpha":
        grid = config.alpha_grid
        points = [(a, dataclasses.replace(config, similarity=SimilarityParams(a, sim.beta), pair_opt=True))
                  for a in grid]
    elif axis == "beta":
        grid = config.beta_grid
        points = [(b, dataclasses.replace(config, similarity=SimilarityParams(sim.alpha, b), pair_opt=True))
                  for b in grid]
    elif axis == "distance_mode":
        grid = config.distance_modes
        points = []
        for mode in grid:
            if mode == "none":
                points.append((mode, dataclasses.replace(config, pair_opt=False)))
            else:
                alpha = _MODE_ALPHA.get(mode, sim.alpha)
                points.append((mode, dataclasses.replace(
                    config, similarity=SimilarityParams(alpha, sim.beta), pair_opt=True)))
    else:
        grid = (True, False)
        points = [(flag, dataclasses.replace(config, pair_opt=flag)) for flag in grid]
    if not points:
        raise ConfigurationError(f"the {axis} grid is empty")
    return points


def ablate(config: ExperimentConfig, axis: str) -> list[SweepRow]:
    rows = []
    for value, point in sweep_points(config, axis):
        result = run_experiment(point)
        rows.append(SweepRow(value, result.report("camodule"), result.zpr, len(result.inferred)))
    return rows


def _label(axis: str, value) -> str:
    if axis == "pair_opt":
        return "with P optimization" if value else "without P optimization"
    return str(value)


def format_sweep(axis: str, rows: Sequence[SweepRow]) -> str:
    ks = rows[0].report.ks
    head = [axis.ljust(24)] + [f"R@{k}".rjust(7) for k in ks] + [f"mR@{k}".rjust(7) for k in ks]
    head += [f"zR@{k}".rjust(7) for k in ks] + ["zpR".rjust(7), "pairs".rjust(6)]
    lines = ["  ".join(head)]
    for row in rows:
        r = row.report
        cells = [_label(axis, row.value).ljust(24)]
        cells += [f"{100 * r.recall[k]:.1f}".rjust(7) for k in ks]
        cells += [f"{100 * r.mean_recall[k]:.1f}".rjust(7) for k in ks]
        cells += [f"{100 * r.zero_shot_recall[k]:.1f}".rjust(7) for k in ks]
        cells += ["-".rjust(7) if row.zpr is None else f"{100 * row.zpr:.1f}".rjust(7)]
        cells += [str(row.n_inferred).rjust(6)]
        lines.append("  ".join(cells))
    return "\n".join(lines)


def sweep_to_json(axis: str, rows: Sequence[SweepRow]) -> dict:
    return {
        "axis": axis,
        "rows": [
            {"value": row.value, "label": _label(axis, row.value), "zpR": row.zpr,
             "n_inferred": row.n_inferred, "metrics": row.report.to_json()}
            for row in rows
        ],
    }
