"""Command line frontend.

    pointpaste pool build    --scans DIR --out POOL
    pointpaste augment       --scans DIR --pool POOL --out DIR [--ground DIR]
    pointpaste ground detect --scans DIR --out DIR
    pointpaste losses eval   --tensors DIR
    pointpaste rv render     --scan FILE --out FILE.pgm
    pointpaste benchmark     --scans DIR --pool POOL [--runs N]

Common flags (every command): --config PATH, --set key=value (repeatable),
--seed N, --workers N, --classes LIST. $POINTPASTE_CONFIG names a default
config file.

Exit codes: 0 ok, 1 completed with warnings, 2 config error, 3 I/O or file
format error, 4 validation error.

Scan directories hold <stem>.bin scans with optional <stem>.label pseudo
labels (points with no label file are treated as unlabeled). Augment writes
<stem>.bin / <stem>.label / <stem>.mask (the one-byte-per-point inserted
mask) plus augment_log.txt; every scan picks its own rng stream from
sha256(seed, stem), so worker count and rerun order cannot change outputs.

The losses eval tensor directory uses the container format of the losses
module with this fixed file set: source_probs_2d, source_probs_3d,
source_mimic_2d, source_mimic_3d, source_labels, the same five with a
target_ prefix, insert_probs_3d, insert_labels, image_probs_2d, image_masks
(all with a .tsr suffix). mimic_2d is the 2d branch's estimate of the 3d
branch's output and is pulled toward it, and vice versa.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import os
import statistics
import sys
import time

import numpy as np

from . import losses as L
from .cloud import (IGNORE_LABEL, FormatError, LabelArray, PointCloud,
                    load_labels, load_scan, render_range_image, save_labels,
                    save_scan, project_to_range_view)
from .config import ConfigError, ToolkitConfig, resolve_config
from .ground import detect_ground, ingest_ground, save_ground
from .insertion import insert_objects
from .pool import ObjectPool, extract_instances, pool_load, pool_save

EXIT_OK = 0
EXIT_WARNINGS = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_VALIDATION = 4


def scan_seed(global_seed: int, stem: str) -> int:
    """Stable per-scan rng seed; never python's salted hash()."""
    digest = hashlib.sha256(f"{global_seed}:{stem}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _list_scans(scan_dir):
    stems = sorted(f[:-4] for f in os.listdir(scan_dir) if f.endswith(".bin"))
    if not stems:
        raise FileNotFoundError(f"no .bin scans in {scan_dir}")
    return stems


def _load_pair(scan_dir, stem, num_classes):
    cloud = load_scan(os.path.join(scan_dir, stem + ".bin"))
    label_path = os.path.join(scan_dir, stem + ".label")
    if os.path.isfile(label_path):
        labels = load_labels(label_path, num_classes)
        if len(labels) != len(cloud):
            raise ValueError(f"{stem}: {len(cloud)} points, {len(labels)} labels")
    else:
        labels = LabelArray(np.full(len(cloud), IGNORE_LABEL, dtype=np.uint32),
                            num_classes)
    return cloud, labels


# ── commands ─────────────────────────────────────────────────────────────

def cmd_pool_build(args, cfg: ToolkitConfig) -> int:
    if not cfg.classes_of_interest:
        raise ConfigError("pool build needs classes_of_interest (--classes)")
    names = os.listdir(args.scans)
    bins = {f[:-4] for f in names if f.endswith(".bin")}
    labs = {f[:-6] for f in names if f.endswith(".label")}
    unpaired = sorted((bins | labs) - (bins & labs))
    warned = False
    for stem in unpaired:
        kind = "label" if stem in labs else "scan"
        print(f"warning: skipping unpaired {kind} file for {stem!r}", file=sys.stderr)
        warned = True

    instances = []
    for stem in sorted(bins & labs):
        cloud, labels = _load_pair(args.scans, stem, cfg.num_classes)
        instances.extend(extract_instances(cloud, labels, cfg.classes_of_interest,
                                           cfg.dbscan(), source_id=stem))
    pool = ObjectPool(instances=instances, per_class_cap=cfg.per_class_cap)
    pool_save(pool, args.out)
    counts = pool.class_counts()
    for class_id in sorted(counts):
        print(f"class {class_id}: {counts[class_id]} instances")
    print(f"pool written to {args.out} ({len(pool)} instances)")
    if not bins & labs:
        print("warning: no scan/label pairs found, pool is empty", file=sys.stderr)
        warned = True
    return EXIT_WARNINGS if warned else EXIT_OK


def _augment_one(scan_dir, stem, pool, cfg: ToolkitConfig, ground_dir, out_dir):
    cloud, labels = _load_pair(scan_dir, stem, cfg.num_classes)
    mask = None
    if ground_dir is not None:
        mask = ingest_ground(os.path.join(ground_dir, stem + ".ground"), cloud)
    aug = insert_objects(cloud, labels, pool, cfg.insertion(),
                         seed=scan_seed(cfg.seed, stem),
                         ground_mask=mask, detector_params=cfg.detector())
    save_scan(aug.points, os.path.join(out_dir, stem + ".bin"))
    save_labels(aug.labels, os.path.join(out_dir, stem + ".label"))
    aug.inserted_mask.astype(np.uint8).tofile(os.path.join(out_dir, stem + ".mask"))

    lines = []
    if aug.skipped or not aug.audit.get("instances"):
        lines.append(f"{stem}\t{aug.audit.get('status', 'skipped:unknown')}")
    else:
        for note in aug.audit["instances"]:
            lines.append("\t".join([
                stem, "inserted", note["instance_id"], str(note["class_id"]),
                "%d,%d,%d" % note["voxel_index"],
                "%.6f,%.6f,%.6f" % note["location_m"],
                "%.6f" % note["refined_min_z"],
                str(note["survived_points"]),
            ]))
    return lines


def cmd_augment(args, cfg: ToolkitConfig) -> int:
    pool = pool_load(args.pool, per_class_cap=cfg.per_class_cap)
    stems = _list_scans(args.scans)
    os.makedirs(args.out, exist_ok=True)

    results = {}
    if cfg.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            futures = {ex.submit(_augment_one, args.scans, stem, pool, cfg,
                                 args.ground, args.out): stem for stem in stems}
            for fut in concurrent.futures.as_completed(futures):
                results[futures[fut]] = fut.result()
    else:
        for stem in stems:
            results[stem] = _augment_one(args.scans, stem, pool, cfg,
                                         args.ground, args.out)

    # single collector, stable order regardless of worker scheduling
    with open(os.path.join(args.out, "augment_log.txt"), "w") as fh:
        for stem in stems:
            for line in results[stem]:
                fh.write(line + "\n")
    inserted = sum(1 for stem in stems
                   for line in results[stem] if "\tinserted\t" in line)
    print(f"augmented {len(stems)} scans, {inserted} insertions, "
          f"outputs in {args.out}")
    return EXIT_OK


def cmd_ground_detect(args, cfg: ToolkitConfig) -> int:
    stems = _list_scans(args.scans)
    os.makedirs(args.out, exist_ok=True)
    params = cfg.detector()
    for stem in stems:
        cloud = load_scan(os.path.join(args.scans, stem + ".bin"))
        mask = detect_ground(cloud, params)
        save_ground(mask, os.path.join(args.out, stem + ".ground"))
        print(f"{stem}: {int(mask.sum())}/{len(cloud)} ground points")
    return EXIT_OK


_TENSOR_FILES = [
    "source_probs_2d", "source_probs_3d", "source_mimic_2d", "source_mimic_3d",
    "source_labels", "target_probs_2d", "target_probs_3d", "target_mimic_2d",
    "target_mimic_3d", "target_labels", "insert_probs_3d", "insert_labels",
    "image_probs_2d", "image_masks",
]


def cmd_losses_eval(args, cfg: ToolkitConfig) -> int:
    t = {}
    for name in _TENSOR_FILES:
        path = os.path.join(args.tensors, name + ".tsr")
        if not os.path.isfile(path):
            raise FileNotFoundError(f"missing tensor file {path}")
        t[name] = L.read_tensor(path)

    def ce(probs, labels):
        return L.cross_entropy_loss(probs, labels)[0]

    def kl(main, aux):
        return L.cross_modal_kl_loss(main, aux)[0]

    src_ce = ce(t["source_probs_2d"], t["source_labels"]) + \
        ce(t["source_probs_3d"], t["source_labels"])
    src_xm = kl(t["source_probs_3d"], t["source_mimic_2d"]) + \
        kl(t["source_probs_2d"], t["source_mimic_3d"])
    tgt_ce = ce(t["target_probs_2d"], t["target_labels"]) + \
        ce(t["target_probs_3d"], t["target_labels"])
    tgt_xm = kl(t["target_probs_3d"], t["target_mimic_2d"]) + \
        kl(t["target_probs_2d"], t["target_mimic_3d"])
    ins_ce = ce(t["insert_probs_3d"], t["insert_labels"])
    masks = L.mask_filter(t["image_masks"], cfg.mask_area_cap)
    sc = L.mask_consistency_loss(t["image_probs_2d"], masks,
                                 literal_sign=cfg.literal_entropy_sign)[0]

    comp = L.LossComponents(source_ce=src_ce, source_xm=src_xm, target_ce=tgt_ce,
                            target_xm=tgt_xm, insert_ce=ins_ce, mask_consistency=sc)
    total = L.total_loss(comp, cfg.weights())
    for label, value in [("source_ce", src_ce), ("source_xm", src_xm),
                         ("target_ce", tgt_ce), ("target_xm", tgt_xm),
                         ("insert_ce", ins_ce), ("mask_consistency", sc),
                         ("total", total)]:
        print(f"{label} = {value:.12g}")
    return EXIT_OK


def cmd_rv_render(args, cfg: ToolkitConfig) -> int:
    cloud = load_scan(args.scan)
    _, image = project_to_range_view(cloud, cfg.range_view())
    gray = render_range_image(image)
    with open(args.out, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (gray.shape[1], gray.shape[0]))
        fh.write(gray.tobytes())
    print(f"wrote {args.out} ({gray.shape[1]}x{gray.shape[0]})")
    return EXIT_OK


def cmd_benchmark(args, cfg: ToolkitConfig) -> int:
    pool = pool_load(args.pool, per_class_cap=cfg.per_class_cap)
    stems = _list_scans(args.scans)
    runs = max(args.runs, 20)
    stages = ("voxelize", "overlap", "ground", "place", "style")
    per_stage = {s: [] for s in stages}
    totals = []
    for k in range(runs):
        stem = stems[k % len(stems)]
        cloud, labels = _load_pair(args.scans, stem, cfg.num_classes)
        t0 = time.perf_counter()
        aug = insert_objects(cloud, labels, pool, cfg.insertion(),
                             seed=scan_seed(cfg.seed, f"{stem}:{k}"),
                             detector_params=cfg.detector())
        totals.append(time.perf_counter() - t0)
        rec = aug.audit["stage_seconds"]
        for s in stages:
            per_stage[s].append(rec.get(s, 0.0))
    print(f"{runs} runs over {len(stems)} scans "
          f"({'cycled' if runs > len(stems) else 'one pass'})")
    for s in stages:
        print(f"{s:>9}: median {statistics.median(per_stage[s])*1e3:8.2f} ms   "
              f"mean {statistics.fmean(per_stage[s])*1e3:8.2f} ms")
    print(f"{'total':>9}: median {statistics.median(totals)*1e3:8.2f} ms   "
          f"mean {statistics.fmean(totals)*1e3:8.2f} ms")
    return EXIT_OK


# ── argument wiring ──────────────────────────────────────────────────────

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="config file path")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, default=None, help="global rng seed")
    common.add_argument("--workers", type=int, default=None, help="parallel scans")
    common.add_argument("--classes", default=None,
                        help="comma separated class ids of interest")

    parser = argparse.ArgumentParser(prog="pointpaste", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    pool = sub.add_parser("pool", help="object pool commands").add_subparsers(
        dest="subcommand", required=True)
    p = pool.add_parser("build", parents=[common], help="extract instances into a pool")
    p.add_argument("--scans", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pool_build)

    p = sub.add_parser("augment", parents=[common], help="insert pooled objects")
    p.add_argument("--scans", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ground", default=None,
                   help="directory of precomputed <stem>.ground files")
    p.set_defaults(func=cmd_augment)

    ground = sub.add_parser("ground", help="ground segmentation").add_subparsers(
        dest="subcommand", required=True)
    p = ground.add_parser("detect", parents=[common])
    p.add_argument("--scans", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ground_detect)

    lo = sub.add_parser("losses", help="loss reference evaluation").add_subparsers(
        dest="subcommand", required=True)
    p = lo.add_parser("eval", parents=[common])
    p.add_argument("--tensors", required=True)
    p.set_defaults(func=cmd_losses_eval)

    rv = sub.add_parser("rv", help="range view tools").add_subparsers(
        dest="subcommand", required=True)
    p = rv.add_parser("render", parents=[common])
    p.add_argument("--scan", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rv_render)

    p = sub.add_parser("benchmark", parents=[common], help="time pipeline stages")
    p.add_argument("--scans", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--runs", type=int, default=20)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args.config, args.set)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.workers is not None:
            cfg.workers = args.workers
        if args.classes is not None:
            cfg.set_key("classes_of_interest", args.classes)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
