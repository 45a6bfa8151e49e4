"""Experiment orchestration and the `earbench` command-line interface.

Subcommands: ingest, augment, split, train, extract, evaluate, series, plot.
Every run writes its artifacts (report.json, cmc.csv, checkpoints/*.earn,
plot.svg, artifacts.json with content digests) under one output directory
and is fully reconstructible from the emitted config and seeds.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentConfig, augment_dataset
from .descriptors import (
    Gallery, hog_descriptor, lbp_descriptor, load_features, save_features,
)
from .errors import ConfigError, EmptySubject, NoSubjects
from .evalproto import (
    DatasetManifest, ManifestEntry, Split, evaluate_gallery, evaluate_model,
    save_cmc_csv, split_dataset,
)
from .imagecore import InterpMethod, load_image, resize, to_grayscale
from .nn import (
    PRESETS, Schedule, apply_freeze_policy, build_model, load_checkpoint, train,
)
from .plotting import plot_cmc

IMAGE_EXTENSIONS = (".png", ".bmp", ".jpg", ".jpeg")

DESCRIPTOR_DEFAULT_METRIC = {"lbp": "chi2", "hog": "euclidean"}
DESCRIPTOR_WORKING_SIZE = 100  # grayscale resize before extraction

ITERATION_GRID = (10000, 20000, 30000, 40000, 50000)


@dataclass
class RunConfig:
    dataset_root: str
    output_dir: str
    arch: str | None = None
    policy: str = "full_learning"
    pretrained_checkpoint: str | None = None
    descriptor: str | None = None
    metric: str | None = None
    factor: int = 0
    augment_seed: int = 7
    split_ratio: float = 0.6
    split_seed: int = 1
    train_seed: int = 3
    input_hw: int = 64
    iterations: int = 500
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    eval_every: int = 100

    def validate(self):
        has_arch = self.arch is not None
        has_desc = self.descriptor is not None
        if has_arch == has_desc:
            raise ConfigError("exactly one of arch or descriptor must be set")
        if has_arch and self.arch not in PRESETS:
            raise ConfigError(f"unknown arch {self.arch!r}")
        if has_desc and self.descriptor not in ("lbp", "hog"):
            raise ConfigError(f"unknown descriptor {self.descriptor!r}")
        if has_arch and self.policy != "full_learning" and not self.pretrained_checkpoint:
            raise ConfigError(f"policy {self.policy!r} needs --pretrained-checkpoint")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        return cls(**d)

    def digest(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def ingest(dataset_root) -> tuple:
    """Scan root/<subject>/<images>; returns (manifest, warning_count)."""
    subjects = sorted(
        d for d in os.listdir(dataset_root)
        if os.path.isdir(os.path.join(dataset_root, d))
    )
    if len(subjects) < 2:
        raise NoSubjects(f"{dataset_root} has {len(subjects)} subject directories, need >= 2")
    entries = []
    warnings = 0
    for subject in subjects:
        sdir = os.path.join(dataset_root, subject)
        decoded = 0
        for fname in sorted(os.listdir(sdir)):
            if not fname.lower().endswith(IMAGE_EXTENSIONS):
                continue
            path = os.path.join(sdir, fname)
            try:
                load_image(path)
            except Exception:
                warnings += 1
                continue
            entries.append(ManifestEntry(path=path, subject=subject))
            decoded += 1
        if decoded == 0:
            raise EmptySubject(f"subject directory {sdir} has no decodable images")
    return DatasetManifest(entries), warnings


def extract_feature(img, descriptor: str):
    gray = to_grayscale(img)
    gray = resize(gray, DESCRIPTOR_WORKING_SIZE, DESCRIPTOR_WORKING_SIZE,
                  InterpMethod.BILINEAR)
    if descriptor == "lbp":
        return lbp_descriptor(gray, grid=(4, 4))
    return hog_descriptor(gray, cell=10, block=2, bins=9)


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_artifact_manifest(out_dir, paths):
    listing = {os.path.relpath(p, out_dir): _sha256_file(p) for p in sorted(paths)}
    path = os.path.join(out_dir, "artifacts.json")
    with open(path, "w") as f:
        json.dump(listing, f, indent=1, sort_keys=True)
    return path


def run(config: RunConfig, shared_split: Split | None = None):
    """Execute split -> (augment) -> train/extract -> evaluate.

    Returns (report, extras) where extras holds per-checkpoint reports for
    CNN runs.  On failure, partial artifacts move under a quarantine suffix."""
    config.validate()
    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    try:
        return _run_inner(config, shared_split, out_dir)
    except Exception:
        quarantine = out_dir.rstrip("/") + ".quarantine"
        if os.path.exists(out_dir) and not os.path.exists(quarantine):
            os.rename(out_dir, quarantine)
        raise


def _run_inner(config: RunConfig, shared_split, out_dir):
    manifest, _ = ingest(config.dataset_root)
    manifest.save(os.path.join(out_dir, "manifest.json"))
    split = shared_split or split_dataset(manifest, config.split_ratio, config.split_seed)
    split.save(os.path.join(out_dir, "split.json"))
    digest = config.digest()
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(config.to_json(), f, indent=1, sort_keys=True)

    artifacts = [os.path.join(out_dir, n) for n in
                 ("manifest.json", "split.json", "config.json")]

    if config.descriptor is not None:
        report, extras = _run_descriptor(config, split, digest)
    else:
        report, extras = _run_cnn(config, split, digest, out_dir)
        artifacts.extend(p for _, p in extras.get("checkpoints", []))

    report_path = os.path.join(out_dir, "report.json")
    report.save(report_path)
    cmc_path = os.path.join(out_dir, "cmc.csv")
    save_cmc_csv(report.curve, cmc_path)
    artifacts.extend([report_path, cmc_path])
    _write_artifact_manifest(out_dir, artifacts)
    return report, extras


def _run_descriptor(config: RunConfig, split: Split, digest: str):
    metric = config.metric or DESCRIPTOR_DEFAULT_METRIC[config.descriptor]
    gallery_entries = []
    for e in split.train:
        fv = extract_feature(load_image(e.path), config.descriptor)
        gallery_entries.append((fv, e.subject))
    gallery = Gallery(gallery_entries)
    probe_features = [extract_feature(load_image(e.path), config.descriptor)
                      for e in split.test]
    probe_subjects = [e.subject for e in split.test]
    counts = {"train": len(split.train), "test": len(split.test),
              "subjects": len(split.subjects)}
    report = evaluate_gallery(gallery, probe_features, probe_subjects,
                              split.subjects, metric, digest, counts)
    return report, {}


def _run_cnn(config: RunConfig, split: Split, digest: str, out_dir: str):
    subjects = split.subjects
    train_entries = list(split.train)
    if config.factor > 0:
        aug_dir = os.path.join(out_dir, "augmented")
        train_manifest = DatasetManifest(train_entries)
        cfg = AugmentConfig(factor=config.factor, master_seed=config.augment_seed)
        train_entries = augment_dataset(train_manifest, cfg, aug_dir).entries

    spec = PRESETS[config.arch](len(subjects), input_hw=config.input_hw)
    if config.policy == "full_learning":
        model = build_model(spec, seed=config.train_seed)
    else:
        model = build_model(spec, seed=config.train_seed,
                            checkpoint=config.pretrained_checkpoint)
        model = apply_freeze_policy(model, config.policy,
                                    reinit_seed=config.train_seed)

    schedule = Schedule(
        iterations=config.iterations, batch_size=config.batch_size,
        lr=config.lr, momentum=config.momentum,
        weight_decay=config.weight_decay, eval_every=config.eval_every,
    )
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    model, log = train(model, train_entries, subjects, schedule,
                       seed=config.train_seed, checkpoint_dir=ckpt_dir)

    checkpoint_reports = []
    for it, path in log.checkpoints:
        m = load_checkpoint(path)
        m.train_digest = model.train_digest
        rep = evaluate_model(m, split, batch_size=config.batch_size,
                             config_digest=digest)
        rep.counts["iteration"] = it
        checkpoint_reports.append((it, rep))
    final_report = checkpoint_reports[-1][1]
    extras = {"checkpoints": log.checkpoints,
              "checkpoint_reports": checkpoint_reports, "log": log}
    return final_report, extras


SERIES_KINDS = ("augmentation_sweep", "strategy_sweep", "baseline_comparison")


def run_series(series: str, base: RunConfig, scale: float = 1.0):
    """Expand a series into runs over one shared split; returns table rows."""
    if series not in SERIES_KINDS:
        raise ConfigError(f"unknown series {series!r}")
    manifest, _ = ingest(base.dataset_root)
    split = split_dataset(manifest, base.split_ratio, base.split_seed)
    grid = [max(1, int(round(it * scale))) for it in ITERATION_GRID]
    rows = []

    def cnn_rows(run_id, cfg):
        _, extras = run(cfg, shared_split=split)
        for it, rep in extras["checkpoint_reports"]:
            rows.append({
                "run_id": run_id, "iterations": it,
                "setting": f"factor={cfg.factor},policy={cfg.policy}",
                "rank1": rep.rank1, "rank5": rep.rank5, "aucmc": rep.aucmc,
            })

    if series == "augmentation_sweep":
        for factor in (0, 10, 100):
            cfg = RunConfig(**{**base.to_json(),
                               "factor": factor,
                               "iterations": grid[-1],
                               "eval_every": grid[0],
                               "output_dir": os.path.join(base.output_dir,
                                                          f"factor{factor}")})
            cnn_rows(f"factor{factor}", cfg)
    elif series == "strategy_sweep":
        for arch in ("mini-alexnet", "mini-vgg", "mini-squeezenet"):
            for policy in ("full_learning", "selective"):
                actual = _selective_policy_for(arch) if policy == "selective" else policy
                cfg = RunConfig(**{**base.to_json(),
                                   "arch": arch, "policy": actual,
                                   "descriptor": None,
                                   "iterations": grid[-1],
                                   "eval_every": grid[0],
                                   "output_dir": os.path.join(
                                       base.output_dir, f"{arch}_{policy}")})
                cnn_rows(f"{arch}_{policy}", cfg)
    else:  # baseline_comparison
        for descriptor in ("lbp", "hog"):
            cfg = RunConfig(**{**base.to_json(),
                               "arch": None, "policy": "full_learning",
                               "descriptor": descriptor, "factor": 0,
                               "output_dir": os.path.join(base.output_dir,
                                                          f"desc_{descriptor}")})
            rep, _ = run(cfg, shared_split=split)
            rows.append({
                "run_id": f"desc_{descriptor}", "iterations": 0,
                "setting": f"descriptor={descriptor}",
                "rank1": rep.rank1, "rank5": rep.rank5, "aucmc": rep.aucmc,
            })
        cfg = RunConfig(**{**base.to_json(),
                           "iterations": grid[-1], "eval_every": grid[0],
                           "output_dir": os.path.join(base.output_dir, "cnn_best")})
        cnn_rows("cnn_best", cfg)

    rows.sort(key=lambda r: (r["run_id"], r["iterations"]))
    table_path = os.path.join(base.output_dir, "series.csv")
    with open(table_path, "w") as f:
        f.write("run_id,iterations,setting,rank1,rank5,aucmc\n")
        for r in rows:
            f.write(f"{r['run_id']},{r['iterations']},{r['setting']},"
                    f"{r['rank1']:.4f},{r['rank5']:.4f},{r['aucmc']:.4f}\n")
    return rows, table_path


def _selective_policy_for(arch: str) -> str:
    return "selective_all_but_head" if arch == "mini-squeezenet" else "selective_fc"


# --- argparse surface -------------------------------------------------------

def _add_run_args(p):
    p.add_argument("--dataset-root", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--arch", choices=sorted(PRESETS))
    p.add_argument("--policy", default=None)
    p.add_argument("--pretrained-checkpoint")
    p.add_argument("--descriptor", choices=["lbp", "hog"])
    p.add_argument("--metric", choices=["chi2", "cosine", "euclidean"])
    p.add_argument("--factor", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="augmentation master seed")
    p.add_argument("--split-ratio", type=float, default=None)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--train-seed", type=int, default=None)
    p.add_argument("--input-hw", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--eval-every", type=int, default=None)


def _config_from_args(args) -> RunConfig:
    base = {}
    if args.config:
        with open(args.config) as f:
            base = json.load(f)
    base["dataset_root"] = args.dataset_root
    base["output_dir"] = args.out_dir
    overrides = {
        "arch": args.arch, "policy": args.policy,
        "pretrained_checkpoint": args.pretrained_checkpoint,
        "descriptor": args.descriptor, "metric": args.metric,
        "factor": args.factor, "augment_seed": args.seed,
        "split_ratio": args.split_ratio, "split_seed": args.split_seed,
        "train_seed": args.train_seed, "input_hw": args.input_hw,
        "iterations": args.iterations, "batch_size": args.batch_size,
        "lr": args.lr, "eval_every": args.eval_every,
    }
    for k, v in overrides.items():
        if v is not None:
            base[k] = v
    return RunConfig.from_json(base)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="earbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan a dataset directory into a manifest")
    p.add_argument("--dataset-root", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("augment", help="write augmented variants of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--factor", type=int, required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--out", required=True, help="output manifest path")

    p = sub.add_parser("split", help="per-subject train/test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratio", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a CNN and evaluate checkpoints")
    _add_run_args(p)

    p = sub.add_parser("extract", help="extract descriptor features to files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--descriptor", choices=["lbp", "hog"], required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("evaluate", help="run one experiment end to end")
    _add_run_args(p)

    p = sub.add_parser("series", help="run one of the experiment series")
    p.add_argument("--kind", choices=SERIES_KINDS, required=True)
    p.add_argument("--scale", type=float, default=1.0,
                   help="scales the 10k..50k checkpoint grid")
    _add_run_args(p)

    p = sub.add_parser("plot", help="plot CMC curves from report files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "ingest":
        manifest, warnings = ingest(args.dataset_root)
        manifest.save(args.out)
        print(f"{len(manifest.entries)} entries, {len(manifest.subjects)} subjects, "
              f"{warnings} unreadable files skipped")
        return 0
    if args.command == "augment":
        manifest = DatasetManifest.load(args.manifest)
        cfg = AugmentConfig(factor=args.factor, master_seed=args.seed)
        out = augment_dataset(manifest, cfg, args.out_dir)
        out.save(args.out)
        print(f"{len(out.entries)} entries ({len(manifest.entries)} originals)")
        return 0
    if args.command == "split":
        manifest = DatasetManifest.load(args.manifest)
        split = split_dataset(manifest, args.ratio, args.seed)
        split.save(args.out)
        print(f"{len(split.train)} train / {len(split.test)} test")
        return 0
    if args.command in ("train", "evaluate"):
        config = _config_from_args(args)
        report, _ = run(config)
        print(f"rank1={report.rank1:.2f} rank5={report.rank5:.2f} "
              f"aucmc={report.aucmc:.2f}")
        return 0
    if args.command == "extract":
        manifest = DatasetManifest.load(args.manifest)
        os.makedirs(args.out_dir, exist_ok=True)
        for i, e in enumerate(manifest.entries):
            fv = extract_feature(load_image(e.path), args.descriptor)
            save_features(fv, os.path.join(args.out_dir, f"{i:06d}_{e.subject}.ebfv"))
        print(f"{len(manifest.entries)} feature files written")
        return 0
    if args.command == "series":
        config = _config_from_args(args)
        rows, table_path = run_series(args.kind, config, scale=args.scale)
        print(f"{len(rows)} rows -> {table_path}")
        return 0
    if args.command == "plot":
        plot_cmc(args.reports, args.out)
        print(args.out)
        return 0
    raise ConfigError(args.command)


if __name__ == "__main__":
    sys.exit(main())
