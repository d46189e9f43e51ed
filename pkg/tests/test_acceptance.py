"""Acceptance run: one printed verdict line per criterion.

Every check re-derives its expectation through the brute-force references in
oracles.py; nothing below trusts a library shortcut. The 500-scene corpus is
built once and shared by the overlap, grounding and determinism checks.
"""

import dataclasses
import math
import os
import time

import numpy as np
import pytest

import oracles
from pointpaste.cli import main
from pointpaste.cloud import (IGNORE_LABEL, LabelArray, PointCloud,
                              RangeImageConfig, save_labels, save_scan)
from pointpaste.config import ToolkitConfig
from pointpaste.insertion import (PlacedObject, insert_objects, place_object,
                                  style_translate)
from pointpaste.losses import (LossComponents, LossWeights, MaskSet,
                               cross_entropy_loss, cross_modal_kl_loss,
                               mask_consistency_loss, total_loss)
from pointpaste.pool import DbscanParams, ObjectInstance, dbscan_cluster
from pointpaste.synthetic import (build_scene, make_benchmark_scene,
                                  make_person_pool)

N_SCENES = 500
VOXEL = 0.5


def verdict(ok, text):
    print(f"[{'PASS' if ok else 'FAIL'}] {text}")
    return ok


@pytest.fixture(scope="module")
def pool():
    return make_person_pool(7, 24)


@pytest.fixture(scope="module")
def scan_dir(tmp_path_factory):
    """The 500 synthetic scans written in the CLI wire format."""
    path = tmp_path_factory.mktemp("corpus")
    for i in range(N_SCENES):
        scene = build_scene(2000 + i)
        stem = f"{i:06d}"
        save_scan(scene["cloud"], path / (stem + ".bin"))
        save_labels(scene["labels"], path / (stem + ".label"))
    return path


@pytest.fixture(scope="module")
def corpus(pool):
    """Run the insertion pipeline over the 500 scenes and tally the checks.

    Ground comes from the scene labels, the same flow as cmd_augment --ground;
    the detector path is covered by its own tests and by the timing and
    determinism runs below, which execute it internally.
    """
    cfg = ToolkitConfig()
    area_lo = cfg.search_lo
    out = {"inserted": 0, "skipped": 0, "objects": 0,
           "voxel_intersections": 0, "support_misses": 0,
           "knn_mismatches": 0, "metric_misses": 0}
    t0 = time.perf_counter()
    for i in range(N_SCENES):
        scene = build_scene(2000 + i)
        cloud = scene["cloud"]
        aug = insert_objects(cloud, scene["labels"], pool, cfg.insertion(),
                             seed=i, ground_mask=scene["ground_mask"])
        if aug.skipped:
            out["skipped"] += 1
            continue
        out["inserted"] += 1

        grid_dims = np.ceil((np.array(cfg.search_hi) - np.array(area_lo))
                            / VOXEL).astype(int)
        raw_cells = oracles.voxel_cells(cloud.points, VOXEL, area_lo, grid_dims)
        ground_pts = cloud.points[scene["ground_mask"]]
        ground_cells = oracles.voxel_cells(ground_pts, VOXEL, area_lo, grid_dims)

        for po, note in zip(aug.placed, aug.audit["instances"]):
            out["objects"] += 1
            obj_cells = oracles.voxel_cells(po.cloud.points, VOXEL, area_lo,
                                            grid_dims)
            out["voxel_intersections"] += len(obj_cells & raw_cells)

            vx, vy, vz = note["voxel_index"]
            support = (vx, vy, vz - note["query_dims"][2] // 2)
            if support not in ground_cells:
                out["support_misses"] += 1

            lo = po.cloud.points.min(axis=0)
            hi = po.cloud.points.max(axis=0)
            knn = oracles.knn_mean_z(((lo + hi) / 2.0)[:2], ground_pts, 5)
            min_z = float(po.cloud.points[:, 2].min())
            if abs(min_z - knn) > 1e-9:
                out["knn_mismatches"] += 1
            if abs(min_z - scene["plane_z"]) > 0.1:
                out["metric_misses"] += 1
    out["elapsed"] = time.perf_counter() - t0
    return out


def test_overlap_freedom(corpus):
    ok = (corpus["voxel_intersections"] == 0
          and corpus["inserted"] >= N_SCENES // 2
          and corpus["elapsed"] < 120.0)
    assert verdict(ok, (
        f"overlap-freedom: {N_SCENES} scenes, {corpus['inserted']} inserted / "
        f"{corpus['skipped']} skipped, {corpus['voxel_intersections']} "
        f"object-scan voxel intersections ({corpus['elapsed']:.1f}s)"))


def test_grounding(corpus):
    ok = (corpus["support_misses"] == 0 and corpus["knn_mismatches"] == 0
          and corpus["metric_misses"] == 0 and corpus["objects"] > 0)
    assert verdict(ok, (
        f"grounding: {corpus['objects']} placements, "
        f"{corpus['support_misses']} support-index misses, "
        f"{corpus['knn_mismatches']} k-NN identity misses (1e-9), "
        f"{corpus['metric_misses']} beyond 0.1 m of the plane"))


def test_rigidity_and_orientation():
    rng = np.random.default_rng(101)
    worst_d = 0.0
    worst_a = 0.0
    for _ in range(1000):
        center = rng.uniform(-25, 25, 3)
        while math.hypot(center[0], center[1]) < 1.0:
            center = rng.uniform(-25, 25, 3)
        pts = center + (rng.random((30, 3)) - 0.5) * rng.uniform(0.2, 2.5)
        inst = ObjectInstance.from_points("a", 2, "t", PointCloud(points=pts))
        target = rng.uniform(-30, 30, 3)
        while math.hypot(target[0], target[1]) < 1.0:
            target = rng.uniform(-30, 30, 3)
        moved, placement = place_object(inst, target)

        pairs = [(int(a), int(b)) for a, b in rng.integers(0, 30, (20, 2))]
        before = oracles.pairwise_distances(inst.cloud.points, pairs)
        after = oracles.pairwise_distances(moved.points, pairs)
        worst_d = max(worst_d, max(abs(x - y) for x, y in zip(before, after)))

        hom = placement.matrix @ np.append(inst.bbox_center, 1.0)
        phi = math.atan2(hom[1], hom[0]) - math.atan2(target[1], target[0])
        worst_a = max(worst_a, abs((phi + math.pi) % (2 * math.pi) - math.pi))
    ok = worst_d <= 1e-6 and worst_a <= 1e-6
    assert verdict(ok, (f"rigidity: 1000 placements, max distance drift "
                        f"{worst_d:.2e} m, max azimuth error {worst_a:.2e} rad"))


def test_style_translate_matches_ray_oracle():
    rng = np.random.default_rng(103)
    cfg = RangeImageConfig()
    trials, total_pts, mismatches = 200, 0, 0
    t0 = time.perf_counter()
    for _ in range(trials):
        n_raw = int(rng.integers(200, 45000))
        n_obj = int(rng.integers(20, 5000))
        raw_pts = (rng.random((n_raw, 3)) - 0.5) * rng.uniform(20, 120)
        # exact duplicates force range ties across the raw/object boundary
        dup = raw_pts[rng.integers(0, n_raw, min(50, n_obj))]
        obj_pts = np.vstack([(rng.random((n_obj - len(dup), 3)) - 0.5) * 60, dup])
        total_pts += n_raw + n_obj

        raw = PointCloud(points=raw_pts)
        labels = LabelArray(labels=rng.integers(0, 3, n_raw).astype(np.uint32),
                            num_classes=4)
        aug = style_translate(raw, labels,
                              [PlacedObject(cloud=PointCloud(points=obj_pts),
                                            class_id=2)], cfg)
        merged = np.vstack([raw_pts, obj_pts])
        _, winners = oracles.project_pixels(merged, cfg.height, cfg.width,
                                            cfg.fov_up, cfg.fov_down)
        if np.flatnonzero(aug.valid_mask).tolist() != sorted(winners.values()):
            mismatches += 1
    ok = mismatches == 0
    assert verdict(ok, (f"style-translate: {trials} clouds, {total_pts} points, "
                        f"{mismatches} retained-set mismatches "
                        f"({time.perf_counter() - t0:.1f}s)"))


def test_loss_values_gradients_linearity():
    rng = np.random.default_rng(107)

    def softmaxish(*shape):
        raw = rng.random(shape) + 0.05
        return raw / raw.sum(axis=-1, keepdims=True)

    def mask_set(img):
        ids, counts = np.unique(img[img > 0], return_counts=True)
        return MaskSet(mask_id=img, areas={int(i): int(c)
                                           for i, c in zip(ids, counts)})

    worst_val = 0.0
    for _ in range(40):
        probs = softmaxish(6, 8, 3)
        img = rng.integers(0, 4, (6, 8))
        got, _ = mask_consistency_loss(probs, mask_set(img))
        worst_val = max(worst_val, abs(got - oracles.mask_consistency(probs, img)))

        p = softmaxish(20, 5)
        lab = rng.integers(0, 5, 20).astype(np.uint32)
        lab[rng.integers(0, 20)] = IGNORE_LABEL
        got, _ = cross_entropy_loss(p, lab)
        worst_val = max(worst_val, abs(got - oracles.cross_entropy(
            p, lab, IGNORE_LABEL)))

        main_p, aux_p = softmaxish(15, 4), softmaxish(15, 4)
        got, _ = cross_modal_kl_loss(main_p, aux_p)
        worst_val = max(worst_val, abs(got - oracles.kl_divergence(main_p, aux_p)))

    # gradients: 100 central-difference probes per loss
    worst_grad = 0.0
    probs = softmaxish(5, 6, 3)
    img = rng.integers(0, 3, (5, 6))
    _, g = mask_consistency_loss(probs, mask_set(img))
    for _ in range(100):
        idx = tuple(int(rng.integers(0, s)) for s in probs.shape)
        fd = oracles.fd_gradient(lambda x: oracles.mask_consistency(x, img),
                                 probs, idx)
        worst_grad = max(worst_grad, abs(g[idx] - fd) / (1.0 + abs(fd)))

    p = softmaxish(25, 4)
    lab = rng.integers(0, 4, 25).astype(np.uint32)
    _, g = cross_entropy_loss(p, lab)
    for _ in range(100):
        idx = (int(rng.integers(0, 25)), int(rng.integers(0, 4)))
        fd = oracles.fd_gradient(
            lambda x: oracles.cross_entropy(x, lab, IGNORE_LABEL), p, idx)
        worst_grad = max(worst_grad, abs(g[idx] - fd) / (1.0 + abs(fd)))

    main_p, aux_p = softmaxish(25, 4), softmaxish(25, 4)
    _, g = cross_modal_kl_loss(main_p, aux_p)
    for _ in range(100):
        idx = (int(rng.integers(0, 25)), int(rng.integers(0, 4)))
        fd = oracles.fd_gradient(lambda x: oracles.kl_divergence(main_p, x),
                                 aux_p, idx)
        worst_grad = max(worst_grad, abs(g[idx] - fd) / (1.0 + abs(fd)))

    # the two-pixel worked example
    example, _ = mask_consistency_loss(
        np.array([[[1.0, 0.0], [0.0, 1.0]]]), mask_set(np.array([[1, 1]])))
    example_err = abs(example - 0.943147)

    # total loss is linear in every weight coefficient
    comp = LossComponents(*rng.random(6))
    base = LossWeights()
    linear_err = 0.0
    for field, part in [("xm_source", comp.source_xm),
                        ("xm_target", comp.target_xm),
                        ("insert_ce", comp.insert_ce),
                        ("mask_consistency", comp.mask_consistency)]:
        bumped = dataclasses.replace(base, **{field: getattr(base, field) + 0.731})
        delta = total_loss(comp, bumped) - total_loss(comp, base)
        linear_err = max(linear_err, abs(delta - 0.731 * part))

    ok = (worst_val <= 1e-9 and worst_grad <= 1e-4
          and example_err < 5e-7 and linear_err <= 1e-12)
    assert verdict(ok, (
        f"losses: max value error {worst_val:.2e}, max relative gradient error "
        f"{worst_grad:.2e} (300 probes), worked example off by {example_err:.1e}, "
        f"weight linearity error {linear_err:.1e}"))


def test_dbscan_matches_oracle():
    rng = np.random.default_rng(109)
    params = DbscanParams()        # production defaults: eps 0.5, min_pts 10
    trials, mismatches, total = 100, 0, 0
    t0 = time.perf_counter()
    for _ in range(trials):
        n = int(rng.integers(20, 501))
        total += n
        k = int(rng.integers(1, 6))
        centers = rng.uniform(-6, 6, (k, 3))
        owner = rng.integers(0, k, n)
        pts = centers[owner] + rng.standard_normal((n, 3)) * rng.uniform(0.05, 0.5)
        got = dbscan_cluster(PointCloud(points=pts), params)
        if got.tolist() != oracles.dbscan(pts, params.eps, params.min_pts):
            mismatches += 1
    ok = mismatches == 0
    assert verdict(ok, (f"dbscan: {trials} trials, {total} points, "
                        f"{mismatches} label mismatches "
                        f"({time.perf_counter() - t0:.1f}s)"))


def test_timing_130k(pool):
    scene = make_benchmark_scene(9)
    assert len(scene["cloud"]) == 130000
    cfg = ToolkitConfig()
    times, inserted = [], 0
    for r in range(21):
        t0 = time.perf_counter()
        aug = insert_objects(scene["cloud"], scene["labels"], pool,
                             cfg.insertion(), seed=r)
        times.append(time.perf_counter() - t0)
        inserted += (not aug.skipped)
    median = sorted(times)[len(times) // 2]
    ok = median <= 0.5 and inserted >= 15
    assert verdict(ok, (f"timing: 130000-point scan, 21 runs, median "
                        f"{median * 1e3:.0f} ms (budget 500 ms), "
                        f"{inserted} runs inserted"))


def test_cmd_augment_bit_identical(scan_dir, pool, tmp_path):
    from pointpaste.pool import pool_save

    pool_dir = tmp_path / "pool"
    pool_save(pool, pool_dir)
    out_a = tmp_path / "run_a"
    out_b = tmp_path / "run_b"
    base = ["augment", "--scans", str(scan_dir), "--pool", str(pool_dir),
            "--seed", "3"]
    t0 = time.perf_counter()
    assert main(base + ["--out", str(out_a), "--workers", "1"]) == 0
    assert main(base + ["--out", str(out_b), "--workers", "4"]) == 0
    elapsed = time.perf_counter() - t0

    names = sorted(os.listdir(out_a))
    diffs = sum(1 for name in names
                if (out_a / name).read_bytes() != (out_b / name).read_bytes())
    same_set = names == sorted(os.listdir(out_b))
    ok = diffs == 0 and same_set and len(names) == 3 * N_SCENES + 1
    assert verdict(ok, (f"determinism: cmd_augment twice over {N_SCENES} scans "
                        f"(workers 1 vs 4), {len(names)} files compared, "
                        f"{diffs} differ ({elapsed:.1f}s)"))
