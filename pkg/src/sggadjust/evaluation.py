"""Graph-constrained predicate ranking and the recall metric suite."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset import Dataset, Scene, ZeroShotManifest
from .errors import ComparisonError, DomainError, ShapeError

DEFAULT_KS = (20, 50, 100)

Predictions = Mapping[str, Sequence["RankedPrediction"]]


@dataclass(frozen=True)
class RankedPrediction:
    scene_id: str
    subject_cat: int
    object_cat: int
    position: int
    predicate_cat: int
    score: float

    @property
    def pair(self) -> tuple[int, int, int]:
        return (self.subject_cat, self.object_cat, self.position)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def rank_scene(logits, scene: Scene) -> list[RankedPrediction]:
    """One prediction per gold pair: its argmax predicate scored by softmax probability.

    Sorted by score descending; ties keep position order.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != len(scene.instances):
        raise ShapeError(
            f"scene '{scene.scene_id}' has {len(scene.instances)} pairs but logits shape {z.shape}"
        )
    probs = _softmax_rows(z)
    best = probs.argmax(axis=1)
    preds = [
        RankedPrediction(scene.scene_id, inst.subject_cat, inst.object_cat, inst.position,
                         int(best[row]), float(probs[row, best[row]]))
        for row, inst in enumerate(scene.instances)
    ]
    return sorted(preds, key=lambda p: (-p.score, p.position))


def rank_dataset(logits, gold: Dataset) -> dict[str, list[RankedPrediction]]:
    """Rank every scene; ``logits`` rows follow the dataset's instance order."""
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[0] != gold.n_instances:
        raise ShapeError(f"{z.shape[0]} logit rows for {gold.n_instances} instances")
    out = {}
    start = 0
    for scene in gold.scenes:
        stop = start + len(scene.instances)
        out[scene.scene_id] = rank_scene(z[start:stop], scene)
        start = stop
    return out


def _check_k(k: int) -> None:
    if k < 1:
        raise DomainError(f"K must be >= 1, got {k}")


def _scene_hits(preds: Sequence[RankedPrediction], scene: Scene, k: int) -> np.ndarray:
    """Boolean per gold instance (position order): recalled within the top K."""
    gold_pred = {inst.position: inst.predicate_cat for inst in scene.instances}
    hit_positions = {p.position for p in preds[:k] if gold_pred.get(p.position) == p.predicate_cat}
    return np.array([inst.position in hit_positions for inst in scene.instances], dtype=bool)


def _all_hits(predictions: Predictions, gold: Dataset, k: int) -> list[np.ndarray]:
    _check_k(k)
    out = []
    for scene in gold.scenes:
        if scene.scene_id not in predictions:
            raise ComparisonError(f"no predictions for scene '{scene.scene_id}'")
        out.append(_scene_hits(predictions[scene.scene_id], scene, k))
    return out


def recall_at_k(predictions: Predictions, gold: Dataset, k: int) -> float:
    hits = _all_hits(predictions, gold, k)
    if not hits:
        return 0.0
    return float(np.mean([h.mean() for h in hits]))


def per_predicate_recall(predictions: Predictions, gold: Dataset, k: int) -> np.ndarray:
    """Pooled recall per predicate; NaN where the predicate is absent from gold."""
    hits = _all_hits(predictions, gold, k)
    n_r = gold.vocabulary.n_predicates
    matched = np.zeros(n_r)
    total = np.zeros(n_r)
    for scene, h in zip(gold.scenes, hits):
        labels = np.array([inst.predicate_cat for inst in scene.instances])
        np.add.at(total, labels, 1.0)
        np.add.at(matched, labels, h.astype(np.float64))
    out = np.full(n_r, np.nan)
    np.divide(matched, total, out=out, where=total > 0)
    return out


def mean_recall_at_k(predictions: Predictions, gold: Dataset, k: int) -> float:
    per = per_predicate_recall(predictions, gold, k)
    present = per[~np.isnan(per)]
    return float(present.mean()) if present.size else 0.0


def zero_shot_recall_at_k(
    predictions: Predictions, gold: Dataset, manifest: ZeroShotManifest, k: int
) -> float:
    """Per-scene recall over zero-shot gold triplets only; 0 when there are none."""
    hits = _all_hits(predictions, gold, k)
    scores = []
    for scene, h in zip(gold.scenes, hits):
        mask = np.array([inst.triplet in manifest.zero_shot_triplets for inst in scene.instances])
        if mask.any():
            scores.append(h[mask].mean())
    return float(np.mean(scores)) if scores else 0.0


@dataclass(frozen=True)
class MetricReport:
    label: str
    ks: tuple[int, ...]
    recall: dict[int, float]
    mean_recall: dict[int, float]
    zero_shot_recall: dict[int, float]
    per_predicate: dict[int, tuple[float | None, ...]]
    zpr: float | None = None
    mixed_recall: dict[int, float] = field(init=False)

    def __post_init__(self):
        mixed = {k: (self.recall[k] + self.mean_recall[k]) / 2 for k in self.ks}
        object.__setattr__(self, "mixed_recall", mixed)

    @property
    def avg_mr_delta(self) -> float:
        """Mean mR over every reported K (20, 50, 100 by default)."""
        return float(np.mean([self.mean_recall[k] for k in self.ks]))

    @property
    def avg_mr_diamond(self) -> float:
        """Mean mR over the reported Ks except the smallest (50, 100 by default)."""
        ks = sorted(self.ks)[1:] or list(self.ks)
        return float(np.mean([self.mean_recall[k] for k in ks]))

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "ks": list(self.ks),
            "R": {str(k): self.recall[k] for k in self.ks},
            "mR": {str(k): self.mean_recall[k] for k in self.ks},
            "MR": {str(k): self.mixed_recall[k] for k in self.ks},
            "zR": {str(k): self.zero_shot_recall[k] for k in self.ks},
            "per_predicate": {str(k): list(self.per_predicate[k]) for k in self.ks},
            "avg_mR_delta": self.avg_mr_delta,
            "avg_mR_diamond": self.avg_mr_diamond,
            "zpR": self.zpr,
        }


def evaluate_system(
    label: str,
    predictions: Predictions,
    gold: Dataset,
    manifest: ZeroShotManifest,
    ks: Sequence[int] = DEFAULT_KS,
    zpr: float | None = None,
) -> MetricReport:
    ks = tuple(int(k) for k in ks)
    if not ks:
        raise DomainError("need at least one K")
    per = {k: per_predicate_recall(predictions, gold, k) for k in ks}
    return MetricReport(
        label=label,
        ks=ks,
        recall={k: recall_at_k(predictions, gold, k) for k in ks},
        mean_recall={k: mean_recall_at_k(predictions, gold, k) for k in ks},
        zero_shot_recall={k: zero_shot_recall_at_k(predictions, gold, manifest, k) for k in ks},
        per_predicate={k: tuple(None if np.isnan(v) else float(v) for v in per[k]) for k in ks},
        zpr=zpr,
    )


def _prediction_keys(predictions: Predictions) -> set:
    return {(sid, p.position) for sid, preds in predictions.items() for p in preds}


def build_report(
    systems: Sequence[tuple[str, Predictions]],
    gold: Dataset,
    manifest: ZeroShotManifest,
    ks: Sequence[int] = DEFAULT_KS,
    zpr: Mapping[str, float] | None = None,
) -> tuple[list[MetricReport], str]:
    """Score every system on the same split; returns the reports and a text table."""
    if not systems:
        raise ComparisonError("no systems to compare")
    gold_keys = {inst.key for inst in gold}
    for label, preds in systems:
        if _prediction_keys(preds) != gold_keys:
            raise ComparisonError(f"system '{label}' was not scored on the gold split")
    zpr = zpr or {}
    reports = [evaluate_system(label, preds, gold, manifest, ks, zpr.get(label)) for label, preds in systems]
    return reports, format_table(reports)


def _pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


def format_table(reports: Sequence[MetricReport]) -> str:
    ks = reports[0].ks
    cols = [f"{m}@{k}" for m in ("R", "mR", "MR", "zR") for k in ks] + ["AVG_mR_d", "AVG_mR_dm"]
    width = max([len("system")] + [len(r.label) for r in reports])
    lines = ["  ".join(["system".ljust(width)] + [c.rjust(7) for c in cols])]
    for r in reports:
        vals = [r.recall, r.mean_recall, r.mixed_recall, r.zero_shot_recall]
        cells = [_pct(v[k]) for v in vals for k in ks] + [_pct(r.avg_mr_delta), _pct(r.avg_mr_diamond)]
        lines.append("  ".join([r.label.ljust(width)] + [c.rjust(7) for c in cells]))
    return "\n".join(lines)


def reports_to_json(reports: Sequence[MetricReport]) -> str:
    return json.dumps({"systems": [r.to_json() for r in reports]}, sort_keys=True, indent=2) + "\n"
