"""Batch orchestration front end.

Subcommands: ``seed``, ``generate``, ``preprocess``, ``evaluate``,
``volumes``.  Tunables come from a YAML config file (``--config`` or the
``TISSUESYNTH_CONFIG`` environment variable); command-line flags override
file values.  Exit codes: 0 success, 1 partial failure, 2 invalid config.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import sys
import time
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np
import yaml

from . import augment, generator, metrics, nifti, seeds
from .volume import LabelMap, VoxelGrid

DEFAULT_IMAGE_PATTERN = r"(?P<subject>.+)_T2w"
DEFAULT_LABEL_PATTERN = r"(?P<subject>.+)_dseg"

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        path = os.environ.get("TISSUESYNTH_CONFIG")
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    with open(p) as f:
        cfg = yaml.safe_load(f) or {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"config root must be a mapping, got {type(cfg).__name__}")
    return cfg


def _dataclass_from(cfg: dict, cls, section: str):
    block = cfg.get(section, {}) or {}
    names = {f.name for f in dc_fields(cls)}
    unknown = set(block) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return cls(**block)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid [{section}] config: {e}") from e


def _config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _stem(path: Path) -> str:
    name = path.name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


def _match_subjects(directory: Path, pattern: str) -> dict[str, Path]:
    rx = re.compile(pattern)
    out = {}
    for p in sorted(directory.glob("*.nii*")):
        m = rx.match(_stem(p))
        if m:
            out[m.group("subject")] = p
    return out


def _read_labels(path: Path) -> LabelMap:
    grid, _ = nifti.read_nifti(path)
    data = np.rint(grid.data).astype(np.int64)
    return LabelMap(grid=grid.with_data(data), label_set=frozenset(np.unique(data).tolist()))


def cmd_seed(args, cfg: dict) -> int:
    label_dir = Path(cfg.get("labels_dir") or args.labels or "")
    image_dir = cfg.get("images_dir") or args.images
    out_dir = Path(cfg.get("seeds_dir") or args.out)
    if not label_dir.is_dir():
        print(f"error: labels directory not found: {label_dir}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir.mkdir(parents=True, exist_ok=True)
    seed_cfg = seeds.SeedConfig(
        skull_ring_mm=float(cfg.get("skull_ring_mm", 5.0)),
        rng_seed=int(cfg.get("master_seed", args.seed or 0)),
    )
    label_paths = _match_subjects(label_dir, cfg.get("label_pattern", DEFAULT_LABEL_PATTERN))
    image_paths = (
        _match_subjects(Path(image_dir), cfg.get("image_pattern", DEFAULT_IMAGE_PATTERN))
        if image_dir
        else {}
    )
    digest = _config_digest(cfg)
    failures = 0
    summary = []
    for subject, lpath in label_paths.items():
        try:
            labels = _read_labels(lpath)
            image = None
            if subject in image_paths:
                image, _ = nifti.read_nifti(image_paths[subject])
            elif image_dir:
                print(f"warning: no image for {subject}, using K=1 seeds", file=sys.stderr)
            seed = seeds.build_seed_map(image, labels, seed_cfg, source_id=subject)
            nifti.write_nifti(seed.subclasses, out_dir / f"{subject}_seed.nii.gz")
            nifti.write_nifti(seed.fine_labels, out_dir / f"{subject}_fine.nii.gz")
            seeds.save_sidecar(seed, out_dir / f"{subject}_seed.json", digest)
            ks = {m: (p.n_components if p else 0) for m, p in seed.gmm_by_meta.items()}
            summary.append((subject, ks))
        except Exception as e:
            failures += 1
            print(f"error: seed build failed for {subject}: {e}", file=sys.stderr)
    for subject, ks in summary:
        print(f"{subject}: subclasses per meta-label {ks}")
    print(f"built {len(summary)} seed maps ({failures} failures)")
    return EXIT_PARTIAL if failures else EXIT_OK


def _load_seed_map(seed_dir: Path, subject: str) -> seeds.SeedMap:
    sub_grid, _ = nifti.read_nifti(seed_dir / f"{subject}_seed.nii.gz")
    fine_grid, _ = nifti.read_nifti(seed_dir / f"{subject}_fine.nii.gz")
    with open(seed_dir / f"{subject}_seed.json") as f:
        side = json.load(f)
    sub = np.rint(sub_grid.data).astype(np.int64)
    fine = np.rint(fine_grid.data).astype(np.int64)
    return seeds.SeedMap(
        subclasses=LabelMap(
            grid=sub_grid.with_data(sub), label_set=frozenset(np.unique(sub).tolist() + [0])
        ),
        subclass_to_meta={int(k): v for k, v in side["subclass_to_meta"].items()},
        fine_labels=LabelMap(
            grid=fine_grid.with_data(fine), label_set=frozenset(np.unique(fine).tolist() + [0])
        ),
        source_id=side["source_id"],
    )


def cmd_generate(args, cfg: dict) -> int:
    seed_dir = Path(cfg.get("seeds_dir") or args.seeds)
    out_dir = Path(cfg.get("synth_dir") or args.out)
    if not seed_dir.is_dir():
        print(f"error: seeds directory not found: {seed_dir}", file=sys.stderr)
        return EXIT_CONFIG
    gen_block = dict(cfg.get("generator", {}) or {})
    if args.samples_per_image is not None:
        gen_block["samples_per_image"] = args.samples_per_image
    if args.seed is not None:
        gen_block["master_seed"] = args.seed
    try:
        gen_cfg = _dataclass_from({"generator": gen_block}, generator.GenConfig, "generator")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    subjects = sorted(p.name[: -len("_seed.json")] for p in seed_dir.glob("*_seed.json"))
    if not subjects:
        print(f"error: no seed maps in {seed_dir}", file=sys.stderr)
        return EXIT_CONFIG
    seed_maps = [_load_seed_map(seed_dir, s) for s in subjects]
    start = time.monotonic()
    rows = generator.generate_batch(seed_maps, gen_cfg, out_dir, workers=args.workers)
    elapsed = max(time.monotonic() - start, 1e-9)
    print(f"generated {len(rows)} samples in {elapsed:.1f}s ({len(rows) / elapsed:.2f} volumes/sec)")
    incomplete = [r for r in rows if r["status"] != "complete"]
    return EXIT_PARTIAL if incomplete else EXIT_OK


def cmd_preprocess(args, cfg: dict) -> int:
    in_dir = Path(args.images)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    aug_cfg = _dataclass_from(cfg, augment.AugmentConfig, "augment")
    rng = np.random.default_rng(args.seed or 0)
    failures = 0
    for path in sorted(in_dir.glob("*.nii*")):
        try:
            grid, _ = nifti.read_nifti(path)
            out, _ = augment.preprocess(grid, None, aug_cfg, rng, train_mode=args.train)
            nifti.write_nifti(out, out_dir / path.name)
        except Exception as e:
            failures += 1
            print(f"error: preprocess failed for {path.name}: {e}", file=sys.stderr)
    return EXIT_PARTIAL if failures else EXIT_OK


def _evaluate_dir(pred_dir: Path, gt_dir: Path):
    preds = {_stem(p): p for p in sorted(pred_dir.glob("*.nii*"))}
    gts = {_stem(p): p for p in sorted(gt_dir.glob("*.nii*"))}
    matched = sorted(set(preds) & set(gts))
    skipped = sorted(set(preds) ^ set(gts))
    records = []
    for stem in matched:
        pred = _read_labels(preds[stem])
        gt = _read_labels(gts[stem])
        records.append(metrics.evaluate_pair(pred, gt, subject=stem))
    return records, skipped


def cmd_evaluate(args, cfg: dict) -> int:
    gt_dir = Path(args.gt)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = _config_digest(cfg)
    all_records = {}
    any_skipped = False
    for pred_dir in args.pred:
        pred_dir = Path(pred_dir)
        records, skipped = _evaluate_dir(pred_dir, gt_dir)
        if skipped:
            any_skipped = True
            for stem in skipped:
                print(f"skipped (unmatched stem): {stem}", file=sys.stderr)
        all_records[pred_dir.name] = records
        csv_path = out_dir / f"metrics_{pred_dir.name}.csv"
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["subject", "tissue", "dice", "hd95_mm", "volume_cm3"])
            for rec in records:
                for t in metrics.TISSUE_LABELS:
                    writer.writerow([
                        rec.subject,
                        metrics.TISSUE_NAMES[t],
                        f"{rec.dice[t]:.6f}",
                        f"{rec.hd95[t]:.6f}" if t in rec.hd95 else "",
                        f"{rec.volume_cm3[t]:.6f}",
                    ])
        agg = {
            "config_digest": digest,
            "n_subjects": len(records),
            "mean_mdsc": float(np.mean([r.mdsc for r in records])) if records else None,
            "per_tissue_dice": {
                metrics.TISSUE_NAMES[t]: float(np.mean([r.dice[t] for r in records]))
                for t in metrics.TISSUE_LABELS
            } if records else {},
        }
        with open(out_dir / f"aggregate_{pred_dir.name}.json", "w") as f:
            json.dump(agg, f, indent=2, sort_keys=True)

    if len(args.pred) > 1:
        names = [Path(p).name for p in args.pred]
        rows = []
        pvals = []
        for t in metrics.TISSUE_LABELS:
            for i in range(len(names)):
                for j in range(i + 1, len(names)):
                    a = [r.dice[t] for r in all_records[names[i]]]
                    b = [r.dice[t] for r in all_records[names[j]]]
                    p = metrics.wilcoxon_ranksum(a, b)
                    rows.append([metrics.TISSUE_NAMES[t], names[i], names[j], p])
                    pvals.append(p)
        decisions = metrics.bonferroni(pvals, alpha=0.05)
        with open(out_dir / "wilcoxon.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["tissue", "model_a", "model_b", "p_value", "significant"])
            for row, sig in zip(rows, decisions):
                writer.writerow(row + [int(sig)])
    return EXIT_PARTIAL if any_skipped else EXIT_OK


def cmd_volumes(args, cfg: dict) -> int:
    seg_dir = Path(args.segs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ga = {}
    with open(args.ga_table, newline="") as f:
        for row in csv.DictReader(f):
            ga[row["subject"]] = float(row["ga_weeks"])
    vols = {}
    excluded = []
    for path in sorted(seg_dir.glob("*.nii*")):
        stem = _stem(path)
        if stem not in ga:
            excluded.append(stem)
            continue
        seg = _read_labels(path)
        vols[stem] = metrics.tissue_volumes(seg)
    for stem in excluded:
        print(f"excluded (no GA): {stem}", file=sys.stderr)
    with open(out_dir / "volumes.csv", "w", newline="") as f:
        writer = csv.writer(f)
        tissues = sorted(next(iter(vols.values())).keys()) if vols else []
        writer.writerow(["subject", "ga_weeks"] + tissues)
        for stem in sorted(vols):
            writer.writerow([stem, ga[stem]] + [f"{vols[stem][t]:.6f}" for t in tissues])
    if len(vols) >= 4:
        gas = np.array([ga[s] for s in sorted(vols)])
        steps = np.arange(np.floor(gas.min()), np.ceil(gas.max()) + 0.25, 0.5)
        for tissue in ("total_brain", "CSF", "GM_total", "WM_total"):
            values = np.array([vols[s][tissue] for s in sorted(vols)])
            fit = metrics.polyfit_growth(gas, values, tissue=tissue)
            lo, hi = fit.confidence_band(steps)
            with open(out_dir / f"growth_{tissue}.csv", "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["ga_week", "fit", "ci_lo", "ci_hi"])
                for g, y, l, h in zip(steps, fit.predict(steps), lo, hi):
                    writer.writerow([g, f"{y:.6f}", f"{l:.6f}", f"{h:.6f}"])
    else:
        print("fit skipped: fewer than 4 subjects with GA", file=sys.stderr)
    return EXIT_PARTIAL if excluded else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tissuesynth")
    parser.add_argument("--config", default=None, help="YAML config file")
    parser.add_argument("--seed", type=int, default=None, help="master RNG seed")
    parser.add_argument("--workers", type=int, default=1)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("seed", help="build seed maps from label maps")
    p.add_argument("--labels", default=None)
    p.add_argument("--images", default=None)
    p.add_argument("--out", default="seeds")
    p.set_defaults(func=cmd_seed)

    p = sub.add_parser("generate", help="generate the synthetic corpus")
    p.add_argument("--seeds", default="seeds")
    p.add_argument("--out", default="synth")
    p.add_argument("--samples-per-image", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="apply the pre-processing chain")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("volumes", help="tissue volumes and growth curves vs GA")
    p.add_argument("--segs", required=True)
    p.add_argument("--ga-table", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_volumes)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args, cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
