"""Command-line entry point: ``sggadjust <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .base_model import import_logits, load_base_model, logits_matrix, records_to_matrix, save_base_model, train_base
from .camodule import (
    adjust_logits, adjustment_factors, load_camodule, materialize_adjustment_tensor, save_camodule,
    train_camodule, vanilla_adjustment,
)
from .dataset import Dataset, ZeroShotManifest, generate_synthetic, load_dataset, save_dataset, split_train_test
from .distributions import batch_lookup, extract_distributions, load_distributions, save_distributions
from .errors import (
    ArtifactMismatchError, ConfigurationError, SGGAdjustError, StageError, UsageError, ValidationError,
)
from .evaluation import build_report, rank_dataset, reports_to_json
from .zeroshot import (
    InferredPair, SimilarityParams, infer_zero_shot_pairs, load_word_vectors, optimize_pair_distribution,
    synthetic_word_vectors, write_word_vectors, zero_shot_pair_recall,
)

log = logging.getLogger("sggadjust")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- shared helpers ------------------------------------------------------------

def _config(args) -> pipeline.ExperimentConfig:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.ExperimentConfig()
    return cfg.with_seed(args.seed) if args.seed is not None else cfg


def _stamp(cfg: pipeline.ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed}


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def _out(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _load_split(data: Dataset, path) -> tuple[Dataset, Dataset, ZeroShotManifest, dict]:
    raw = _read_json(path)
    try:
        train = data.subset(raw["train_scenes"])
        test = data.subset(raw["test_scenes"])
        manifest = ZeroShotManifest.from_json(raw["manifest"])
    except KeyError as exc:
        raise ValidationError(f"{path}: split file lacks {exc}") from exc
    return train, test, manifest, raw


def _check_hashes(paths: dict) -> None:
    """All stamped artifacts must come from one configuration."""
    seen = {}
    for label, path in paths.items():
        if path is None or Path(path).suffix != ".json":
            continue
        h = _read_json(path).get("config_hash")
        if h is not None:
            seen[label] = h
    if len(set(seen.values())) > 1:
        detail = ", ".join(f"{k}={v}" for k, v in sorted(seen.items()))
        raise ArtifactMismatchError(f"artifacts come from different configurations: {detail}")


def _logits_for(args, instances, n_predicates) -> np.ndarray:
    if getattr(args, "logits", None):
        return records_to_matrix(import_logits(args.logits, n_predicates), instances)
    return logits_matrix(load_base_model(args.base), instances)


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args) -> None:
    cfg = _config(args)
    data = generate_synthetic(dataclasses.replace(cfg.synth, seed=cfg.seed))
    save_dataset(data, args.out, _stamp(cfg))
    _out(args, f"wrote {len(data.scenes)} scenes, {data.n_instances} instances to {args.out}")


def cmd_gen_vectors(args) -> None:
    cfg = _config(args)
    data = load_dataset(args.data)
    store = synthetic_word_vectors(data.vocabulary, cfg.synth.affinity_clusters, cfg.vector_dim,
                                   cfg.vector_noise, cfg.seed)
    write_word_vectors(store, args.out, data.vocabulary.object_names)
    _out(args, f"wrote {data.vocabulary.n_objects} vectors of dim {store.dim} to {args.out}")


def cmd_split(args) -> None:
    cfg = _config(args)
    data = load_dataset(args.data)
    fraction = cfg.test_fraction if args.test_fraction is None else args.test_fraction
    train, test, manifest = split_train_test(data, fraction, cfg.seed)
    _write_json(args.out, dict(_stamp(cfg), **{
        "train_scenes": [s.scene_id for s in train.scenes],
        "test_scenes": [s.scene_id for s in test.scenes],
        "manifest": manifest.to_json(),
    }))
    _out(args, f"train {train.n_instances} / test {test.n_instances} instances; "
               f"{len(manifest.zero_shot_triplets)} zero-shot triplets, "
               f"{len(manifest.zero_shot_pairs)} zero-shot pairs")


def cmd_extract_dist(args) -> None:
    cfg = _config(args)
    data = load_dataset(args.data)
    train, _, _, _ = _load_split(data, args.split)
    save_distributions(extract_distributions(train), args.out, _stamp(cfg))
    _out(args, f"wrote distributions to {args.out}")


def cmd_train_base(args) -> None:
    cfg = _config(args)
    data = load_dataset(args.data)
    train = _load_split(data, args.split)[0] if args.split else data
    model = train_base(train, cfg.base_epochs, cfg.base_lr, cfg.seed, cfg.d_noise, cfg.noise_sigma)
    save_base_model(model, args.out, _stamp(cfg))
    _out(args, f"wrote base model to {args.out}")


def cmd_train_cam(args) -> None:
    cfg = _config(args)
    _check_hashes({"split": args.split, "base": args.base, "dist": args.dist})
    data = load_dataset(args.data)
    train = _load_split(data, args.split)[0] if args.split else data
    dists = load_distributions(args.dist)
    train_cfg = dataclasses.replace(cfg.train, seed=cfg.seed)
    logits = _logits_for(args, list(train), data.vocabulary.n_predicates)
    params, curve = train_camodule(None, dists, train, train_cfg, logits=logits)
    save_camodule(params, args.out, dict(_stamp(cfg), loss_curve=curve, adjust_mode=train_cfg.adjust_mode))
    _out(args, "epoch losses: " + " ".join(f"{x:.4f}" for x in curve))


def cmd_export_adjust(args) -> None:
    params = load_camodule(args.cam)
    tensor = materialize_adjustment_tensor(params, load_distributions(args.dist))
    _write_json(args.out, {"shape": list(tensor.shape), "factors": tensor.tolist()})
    _out(args, f"wrote adjustment tensor {tensor.shape} to {args.out}")


def cmd_infer_pairs(args) -> None:
    cfg = _config(args)
    data = load_dataset(args.data)
    train, _, manifest, _ = _load_split(data, args.split)
    store = load_word_vectors(args.vectors, data.vocabulary)
    sim = SimilarityParams(
        cfg.similarity.alpha if args.alpha is None else args.alpha,
        cfg.similarity.beta if args.beta is None else args.beta,
    )
    inferred = infer_zero_shot_pairs(train.pair_types(), store, sim, data.vocabulary.object_names)
    zpr = zero_shot_pair_recall(inferred, manifest)
    _write_json(args.out, dict(_stamp(cfg), alpha=sim.alpha, beta=sim.beta, zpR=zpr,
                               pairs=[ip.to_json() for ip in inferred]))
    if args.dist and args.dist_out:
        dists = load_distributions(args.dist)
        save_distributions(dists.with_pair_distribution(optimize_pair_distribution(dists.P, inferred)),
                           args.dist_out, _stamp(cfg))
    _out(args, f"{len(inferred)} inferred pairs, zpR@ = {100 * zpr:.1f}")


def cmd_eval(args) -> None:
    _check_hashes({"split": args.split, "base": args.base, "cam": args.cam, "dist": args.dist})
    data = load_dataset(args.data)
    _, test, manifest, _ = _load_split(data, args.split)
    ks = [int(k) for k in args.k.split(",")]
    instances = list(test)
    z = _logits_for(args, instances, data.vocabulary.n_predicates)
    systems = [("base", rank_dataset(z, test))]
    mode = args.adjust_mode
    if args.cam:
        cam_payload = _read_json(args.cam)
        mode = mode or cam_payload.get("adjust_mode", "literal")
    mode = mode or "literal"
    if args.vanilla or args.cam:
        if not args.dist:
            raise ConfigurationError("--dist is required with --cam or --vanilla")
        dists = load_distributions(args.dist)
    if args.vanilla:
        factors = np.broadcast_to(vanilla_adjustment(dists.R), z.shape)
        systems.append(("vanilla", rank_dataset(adjust_logits(z, factors, mode), test)))
    if args.cam:
        params = load_camodule(args.cam)
        a = test.arrays
        factors = adjustment_factors(params, batch_lookup(dists, a["subject"], a["object"]))
        systems.append(("camodule", rank_dataset(adjust_logits(z, factors, mode), test)))
    zpr = None
    if args.pairs:
        inferred = [InferredPair.from_json(p) for p in _read_json(args.pairs)["pairs"]]
        zpr = {"camodule": zero_shot_pair_recall(inferred, manifest)}
    reports, table = build_report(systems, test, manifest, ks, zpr)
    if args.out:
        Path(args.out).write_text(reports_to_json(reports), encoding="utf-8")
    _out(args, table)


def cmd_ablate(args) -> None:
    cfg = _config(args)
    points = pipeline.sweep_points(cfg, args.axis)  # validate before any compute
    log.info("ablating %s over %d grid points", args.axis, len(points))
    rows = pipeline.ablate(cfg, args.axis)
    table = pipeline.format_sweep(args.axis, rows)
    if args.out:
        _write_json(args.out, dict(_stamp(cfg), **pipeline.sweep_to_json(args.axis, rows)))
    _out(args, table)


def cmd_report(args) -> None:
    from .evaluation import MetricReport, format_table
    raw = _read_json(args.report)
    try:
        reports = []
        for s in raw["systems"]:
            ks = tuple(s["ks"])
            reports.append(MetricReport(
                s["label"], ks,
                {k: s["R"][str(k)] for k in ks}, {k: s["mR"][str(k)] for k in ks},
                {k: s["zR"][str(k)] for k in ks}, {k: tuple(s["per_predicate"][str(k)]) for k in ks},
                s.get("zpR"),
            ))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{args.report}: not a metric report ({exc})") from exc
    print(format_table(reports))


def cmd_run(args) -> None:
    cfg = _config(args)
    result, root = pipeline.run_pipeline(cfg, args.out_dir)
    _out(args, result.table)
    _out(args, f"artifacts in {root}")


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # global flags may sit before or after the subcommand; SUPPRESS keeps a
    # subparser from overwriting a value given earlier with its own default
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment config JSON")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="root directory for pipeline runs")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="suppress tables and progress output")

    p = _Parser(prog="sggadjust", description="Causal logit adjustment for relationship classification.",
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        sp = sub.add_parser(name, help=help_text, parents=[common])
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate a synthetic long-tailed corpus")
    sp.add_argument("--out", required=True)

    sp = add("gen-vectors", cmd_gen_vectors, "write clustered synthetic word vectors for a corpus")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)

    sp = add("split", cmd_split, "scene-level train/test split with zero-shot manifest")
    sp.add_argument("--data", required=True)
    sp.add_argument("--test-fraction", type=float, default=None)
    sp.add_argument("--out", required=True)

    sp = add("extract-dist", cmd_extract_dist, "extract O, C, P, R from the training scenes")
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--out", required=True)

    sp = add("train-base", cmd_train_base, "train the frozen stand-in classifier")
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default=None)
    sp.add_argument("--out", required=True)

    sp = add("train-cam", cmd_train_cam, "train the adjustment module")
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default=None)
    sp.add_argument("--base", default=None)
    sp.add_argument("--logits", default=None, help="external logits JSONL instead of --base")
    sp.add_argument("--dist", required=True)
    sp.add_argument("--out", required=True)

    sp = add("export-adjust", cmd_export_adjust, "write the full (N_o, N_r, N_o) adjustment tensor")
    sp.add_argument("--cam", required=True)
    sp.add_argument("--dist", required=True)
    sp.add_argument("--out", required=True)

    sp = add("infer-pairs", cmd_infer_pairs, "infer zero-shot pairs from word-vector similarity")
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--vectors", required=True)
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--beta", type=float, default=None)
    sp.add_argument("--dist", default=None, help="distributions to optimize with the inferred pairs")
    sp.add_argument("--dist-out", default=None)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "score base / vanilla / adjusted systems on the test split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", required=True)
    sp.add_argument("--base", default=None)
    sp.add_argument("--logits", default=None)
    sp.add_argument("--cam", default=None)
    sp.add_argument("--dist", default=None)
    sp.add_argument("--vanilla", action="store_true")
    sp.add_argument("--pairs", default=None, help="inferred pairs file, for zpR@")
    sp.add_argument("--adjust-mode", choices=("literal", "softplus"), default=None)
    sp.add_argument("--k", default="20,50,100")
    sp.add_argument("--out", default=None)

    sp = add("ablate", cmd_ablate, "sweep one axis, one full train+eval per grid point")
    sp.add_argument("--axis", required=True, choices=pipeline.AXES)
    sp.add_argument("--out", default=None)

    sp = add("report", cmd_report, "print the text table of a report.json")
    sp.add_argument("--report", required=True)

    add("run", cmd_run, "run the whole pipeline into a fresh run directory")
    return p


_GLOBAL_DEFAULTS = {"seed": None, "config": None, "out_dir": "runs", "quiet": False}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (ConfigurationError, ValidationError, UsageError, FileNotFoundError)):
        return 1
    return 2


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        for name, default in _GLOBAL_DEFAULTS.items():
            if not hasattr(args, name):
                setattr(args, name, default)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(levelname)s %(message)s")
        if args.command in ("train-cam", "eval") and not (args.base or args.logits):
            raise UsageError(f"{args.command} needs --base or --logits")
        args.func(args)
        return 0
    except (SGGAdjustError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
