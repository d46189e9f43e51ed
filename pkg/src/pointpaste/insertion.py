"""Validity-checked object insertion.

The pipeline drops pooled object instances into a raw scan so that they rest
on detected ground and collide with nothing:

    1. query extent     joint bounding box of the sampled instances, in voxels
    2. overlap check    slide an all-ones kernel of the query dims over the
                        scan occupancy grid; keep zero-sum window positions,
                        reported as the window's center voxel (start + (d-1)//2)
    3. ground filter    keep candidates whose center, lowered by
                        floor(dims_z/2), is a voxel containing ground points
    4. placement        radial translation + z-rotation that moves the object
                        bbox center onto the sampled voxel center while keeping
                        its pose relative to the viewing ray
    5. altitude refine  shift z so the object's lowest point matches the mean
                        height of the 5 nearest ground points in xy
    6. verification     re-voxelize the refined object and reject candidates
                        that touch any occupied voxel (grounding can dip the
                        object into the ground-contact band, and even window
                        dims overhang half a voxel, so the window check alone
                        is not sufficient)
    7. style translate  project raw + inserted points to the range view and
                        keep, per pixel, only the nearest point

The placement translation moves the object along its own viewing ray (range
change) and the rotation swings it about the sensor z-axis (azimuth change),
so the transform never shows the sensor an unseen side of the object.
"""

from __future__ import annotations

import dataclasses
import time
from typing import Optional, Sequence

import numpy as np

from .cloud import (PointCloud, LabelArray, SearchArea, VoxelGrid,
                    RangeImageConfig, bounding_extent, voxelize,
                    project_to_range_view)
from .ground import (GroundDetectorParams, GroundVoxelSet, detect_ground,
                     ground_voxels)
from .pool import ObjectInstance, ObjectPool, pool_sample


@dataclasses.dataclass(frozen=True)
class QueryExtent:
    extent: tuple        # meters, joint bbox of the sampled instances
    voxel_dims: tuple    # ints, ceil(extent / voxel_size), at least 1


def compute_query_extent(instances: Sequence[ObjectInstance], voxel_size: float) -> QueryExtent:
    if not instances:
        raise ValueError("no instances")
    if voxel_size <= 0:
        raise ValueError("voxel_size must be > 0")
    extent = bounding_extent([inst.cloud for inst in instances])
    dims = np.maximum(np.ceil(extent / voxel_size).astype(np.int64), 1)
    return QueryExtent(extent=tuple(float(e) for e in extent),
                       voxel_dims=tuple(int(d) for d in dims))


@dataclasses.dataclass
class ValidLocationSet:
    """Zero-overlap window centers, lexicographically sorted voxel indices."""

    locations: np.ndarray    # (K, 3) int64
    origin: tuple
    voxel_size: float

    def __len__(self) -> int:
        return len(self.locations)

    def centers_m(self) -> np.ndarray:
        return np.asarray(self.origin) + (self.locations + 0.5) * self.voxel_size


def _window_sums(occ: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Occupancy count of every valid window position (integer exact)."""
    c = occ.astype(np.int64).cumsum(0).cumsum(1).cumsum(2)
    p = np.zeros(np.asarray(occ.shape) + 1, dtype=np.int64)
    p[1:, 1:, 1:] = c
    d = np.asarray(occ.shape)
    hi = [slice(q[a], d[a] + 1) for a in range(3)]
    lo = [slice(0, d[a] - q[a] + 1) for a in range(3)]

    def part(bx, by, bz):
        return p[hi[0] if bx else lo[0], hi[1] if by else lo[1], hi[2] if bz else lo[2]]

    return (part(1, 1, 1)
            - part(0, 1, 1) - part(1, 0, 1) - part(1, 1, 0)
            + part(0, 0, 1) + part(0, 1, 0) + part(1, 0, 0)
            - part(0, 0, 0))


def overlap_check(grid: VoxelGrid, query: QueryExtent) -> ValidLocationSet:
    """All window positions of the query dims with zero occupied voxels.

    Positions are reported as the window's center voxel, start + (dim-1)//2
    per axis (the lower middle for even dims).
    """
    q = np.asarray(query.voxel_dims, dtype=np.int64)
    if np.any(q > grid.dims):
        raise ValueError(f"query dims {tuple(q)} exceed grid dims {tuple(grid.dims)}")
    sums = _window_sums(grid.occupancy, q)
    starts = np.argwhere(sums == 0)
    centers = starts + (q - 1) // 2
    return ValidLocationSet(locations=centers.astype(np.int64),
                            origin=tuple(grid.origin), voxel_size=grid.voxel_size)


def ground_filter(candidates: ValidLocationSet, ground: GroundVoxelSet,
                  query: QueryExtent) -> ValidLocationSet:
    """Keep candidates supported by ground.

    A candidate survives iff its center lowered by floor(dims_z / 2) is a
    ground voxel. Note the geometric consequence: with the window-center
    convention above, odd vertical dims would need the support voxel inside
    the zero-occupancy window itself, so such queries never pass. Pick the
    voxel size so the vertical dims come out even.
    """
    if tuple(candidates.origin) != tuple(ground.origin) or \
            candidates.voxel_size != ground.voxel_size:
        raise ValueError("candidates and ground voxels use different grids")
    off = query.voxel_dims[2] // 2
    keep = [i for i, (x, y, z) in enumerate(map(tuple, candidates.locations.tolist()))
            if (x, y, z - off) in ground.voxels]
    return ValidLocationSet(locations=candidates.locations[keep].reshape(-1, 3),
                            origin=candidates.origin, voxel_size=candidates.voxel_size)


def sample_locations(valid: ValidLocationSet, n: int, seed) -> np.ndarray:
    """n distinct locations, de-voxelized to voxel centers in meters."""
    if len(valid) == 0:
        raise ValueError("no valid insertion location")
    if n > len(valid):
        raise ValueError(f"requested {n} locations from a set of {len(valid)}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = rng.choice(len(valid), size=n, replace=False)
    picked = ValidLocationSet(locations=valid.locations[idx].reshape(-1, 3),
                              origin=valid.origin, voxel_size=valid.voxel_size)
    return picked.centers_m()


@dataclasses.dataclass
class InsertionPlacement:
    """Rigid motion o_q -> o_c: radial/vertical translation, then z-rotation."""

    source_center: np.ndarray
    target_center: np.ndarray
    translation: np.ndarray   # 4x4
    rotation: np.ndarray      # 4x4

    @property
    def matrix(self) -> np.ndarray:
        return self.rotation @ self.translation


def place_object(instance: ObjectInstance, location) -> tuple:
    """Move an instance so its bbox center lands on the target location.

    Returns (transformed cloud, placement). The translation slides the object
    along its own viewing ray by the range difference and lifts it by the
    height difference; the rotation then swings it about the sensor z-axis by
    the azimuth difference. Pairwise distances are untouched and the side
    facing the sensor stays the same.
    """
    oq = np.asarray(instance.bbox_center, dtype=np.float64)
    oc = np.asarray(location, dtype=np.float64)
    rho_q = float(np.hypot(oq[0], oq[1]))
    if rho_q < 1e-12:
        raise ValueError("object center sits on the sensor z-axis, azimuth undefined")
    phi_q = float(np.arctan2(oq[1], oq[0]))
    rho_c = float(np.hypot(oc[0], oc[1]))
    phi_c = float(np.arctan2(oc[1], oc[0]))
    drho = rho_c - rho_q
    dphi = phi_c - phi_q

    T = np.eye(4)
    T[:3, 3] = [drho * np.cos(phi_q), drho * np.sin(phi_q), oc[2] - oq[2]]
    R = np.eye(4)
    R[0, 0] = R[1, 1] = np.cos(dphi)
    R[0, 1] = -np.sin(dphi)
    R[1, 0] = np.sin(dphi)

    m = R @ T
    pts = instance.cloud.points
    moved = pts @ m[:3, :3].T + m[:3, 3]
    cloud = PointCloud(points=moved, intensity=instance.cloud.intensity)
    placement = InsertionPlacement(source_center=oq, target_center=oc,
                                   translation=T, rotation=R)
    return cloud, placement


def _knn_ground_z(center_xy: np.ndarray, ground_points: np.ndarray, k: int) -> float:
    """Mean z of the k nearest ground points in xy, ties by point index."""
    d = np.hypot(ground_points[:, 0] - center_xy[0], ground_points[:, 1] - center_xy[1])
    if d.shape[0] <= k:
        nn = np.arange(d.shape[0])
    else:
        # argpartition breaks distance ties arbitrarily, so take everything at
        # or below the k-th distance and re-rank by (distance, index).
        kth = np.partition(d, k - 1)[k - 1]
        cand = np.flatnonzero(d <= kth)
        order = np.lexsort((cand, d[cand]))
        nn = cand[order[:k]]
    return float(ground_points[nn, 2].mean())


def refine_altitude(cloud: PointCloud, ground_points: np.ndarray,
                    k: int = 5, radius: float = 2.0) -> tuple:
    """Shift the object along z so its minimum z is the local ground height.

    ground_points is an (G, 3) array of ground-labeled scan points. Returns
    (cloud, refined). When no ground point lies within `radius` of the object
    center in xy the cloud comes back unchanged and refined is False.
    """
    ground_points = np.asarray(ground_points, dtype=np.float64).reshape(-1, 3)
    if len(cloud) == 0:
        raise ValueError("empty object cloud")
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    center = (lo + hi) / 2.0
    if ground_points.shape[0] == 0:
        return cloud, False
    d = np.hypot(ground_points[:, 0] - center[0], ground_points[:, 1] - center[1])
    if float(d.min()) > radius:
        return cloud, False
    target = _knn_ground_z(center[:2], ground_points, min(k, len(ground_points)))
    shift = target - float(cloud.points[:, 2].min())
    pts = cloud.points.copy()
    pts[:, 2] += shift
    return PointCloud(points=pts, intensity=cloud.intensity), True


@dataclasses.dataclass
class PlacedObject:
    cloud: PointCloud
    class_id: int
    instance_id: str = ""


@dataclasses.dataclass
class AugmentedScan:
    """Style-translated union of the raw scan and the inserted objects.

    valid_mask covers the concatenated cloud (raw points first, then each
    inserted object in placement order); inserted_mask covers the retained
    points only. placed keeps the refined objects before occlusion thinning.
    audit carries placement provenance and stage timings.
    """

    points: PointCloud
    labels: LabelArray
    inserted_mask: np.ndarray
    valid_mask: np.ndarray
    skipped: bool = False
    placed: list = dataclasses.field(default_factory=list)
    audit: dict = dataclasses.field(default_factory=dict)


def style_translate(raw: PointCloud, raw_labels: LabelArray,
                    placed: Sequence[PlacedObject],
                    config: RangeImageConfig) -> AugmentedScan:
    """Resolve range-view occlusion between the raw scan and inserted objects.

    All points are projected into the range image; each occupied pixel keeps
    exactly one point, the one with the smallest range (ties go to the lowest
    concatenated index, so raw points beat inserted ones on exact ties). This
    both occludes raw points behind an inserted object and thins the object to
    the sensor's angular resolution.
    """
    if len(raw) != len(raw_labels):
        raise ValueError("raw labels do not match raw points")
    for po in placed:
        if not 0 <= po.class_id < raw_labels.num_classes:
            raise ValueError(f"inserted class {po.class_id} outside "
                             f"[0, {raw_labels.num_classes})")

    parts = [raw.points] + [po.cloud.points for po in placed]
    allpts = np.vstack(parts)
    label_parts = [raw_labels.labels] + [
        np.full(len(po.cloud), po.class_id, dtype=np.uint32) for po in placed]
    alllab = np.concatenate(label_parts)

    have_int = raw.intensity is not None or any(
        po.cloud.intensity is not None for po in placed)
    if have_int:
        int_parts = [raw.intensity if raw.intensity is not None
                     else np.zeros(len(raw), dtype=np.float32)]
        for po in placed:
            int_parts.append(po.cloud.intensity if po.cloud.intensity is not None
                             else np.zeros(len(po.cloud), dtype=np.float32))
        allint = np.concatenate(int_parts)
    else:
        allint = None

    merged = PointCloud(points=allpts, intensity=allint)
    _, image = project_to_range_view(merged, config)
    valid = np.zeros(len(merged), dtype=bool)
    winners = image.pixel_point[image.pixel_point >= 0]
    valid[winners] = True

    inserted_flag = np.zeros(len(merged), dtype=bool)
    inserted_flag[len(raw):] = True

    out_cloud = PointCloud(points=allpts[valid],
                           intensity=None if allint is None else allint[valid])
    out_labels = LabelArray(labels=alllab[valid], num_classes=raw_labels.num_classes)
    return AugmentedScan(points=out_cloud, labels=out_labels,
                         inserted_mask=inserted_flag[valid], valid_mask=valid,
                         placed=list(placed))


@dataclasses.dataclass(frozen=True)
class InsertionConfig:
    area: SearchArea
    range_view: RangeImageConfig = RangeImageConfig()
    voxel_size: float = 0.5
    n_objects: int = 1
    max_attempts: int = 16
    refine_k: int = 5
    refine_radius: float = 2.0

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be > 0")
        if self.n_objects < 1 or self.max_attempts < 1:
            raise ValueError("n_objects and max_attempts must be >= 1")


def insert_objects(scan: PointCloud, pseudo_labels: LabelArray, pool: ObjectPool,
                   config: InsertionConfig, seed,
                   ground_mask: Optional[np.ndarray] = None,
                   detector_params: Optional[GroundDetectorParams] = None) -> AugmentedScan:
    """Full insertion pipeline for one scan. Deterministic under seed.

    ground_mask, when given, replaces the built-in ground detector (use it to
    feed labels from an external segmenter). A scan where no candidate
    survives all checks is returned unchanged with skipped=True; the audit
    dict says why.
    """
    if len(scan) != len(pseudo_labels):
        raise ValueError("scan and pseudo labels disagree on point count")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    timings: dict = {}
    started = time.perf_counter()

    def skip(reason: str) -> AugmentedScan:
        timings["end_to_end"] = time.perf_counter() - started
        return AugmentedScan(
            points=scan, labels=pseudo_labels,
            inserted_mask=np.zeros(len(scan), dtype=bool),
            valid_mask=np.ones(len(scan), dtype=bool),
            skipped=True,
            audit={"status": "skipped:" + reason, "instances": [],
                   "candidates_tried": 0, "stage_seconds": timings})

    if len(pool) == 0:
        return skip("empty_pool")

    t0 = time.perf_counter()
    instances = pool_sample(pool, config.n_objects, rng)
    query = compute_query_extent(instances, config.voxel_size)

    t1 = time.perf_counter()
    grid = voxelize(scan, config.voxel_size, config.area)
    timings["voxelize"] = time.perf_counter() - t1
    if np.any(np.asarray(query.voxel_dims) > grid.dims):
        return skip("query_exceeds_area")

    t2 = time.perf_counter()
    candidates = overlap_check(grid, query)
    timings["overlap"] = time.perf_counter() - t2

    t3 = time.perf_counter()
    if ground_mask is None:
        ground_mask = detect_ground(scan, detector_params or GroundDetectorParams())
    else:
        ground_mask = np.asarray(ground_mask, dtype=bool)
        if ground_mask.shape != (len(scan),):
            raise ValueError("ground mask length does not match scan")
    gset = ground_voxels(ground_mask, scan, grid)
    grounded = ground_filter(candidates, gset, query)
    timings["ground"] = time.perf_counter() - t3

    if len(grounded) == 0:
        timings["place"] = timings["style"] = 0.0
        return skip("no_grounded_location")

    t4 = time.perf_counter()
    n_try = min(config.max_attempts, len(grounded))
    locations = sample_locations(grounded, n_try, rng)
    ground_pts = scan.points[ground_mask]

    placed, notes = [], []
    extra_occ = np.zeros_like(grid.occupancy)
    cursor = 0
    for inst in instances:
        while cursor < len(locations):
            loc = locations[cursor]
            cursor += 1
            moved, _ = place_object(inst, loc)
            refined, ok = refine_altitude(moved, ground_pts,
                                          k=config.refine_k, radius=config.refine_radius)
            if not ok:
                continue
            idx = grid.point_indices(refined.points)
            inside = np.all((idx >= 0) & (idx < grid.dims), axis=1)
            ii = idx[inside]
            if np.any(grid.occupancy[ii[:, 0], ii[:, 1], ii[:, 2]]) or \
                    np.any(extra_occ[ii[:, 0], ii[:, 1], ii[:, 2]]):
                continue
            extra_occ[ii[:, 0], ii[:, 1], ii[:, 2]] = True
            vox = np.floor((loc - np.asarray(grid.origin)) / grid.voxel_size).astype(np.int64)
            notes.append({
                "instance_id": inst.instance_id,
                "class_id": inst.class_id,
                "voxel_index": tuple(int(x) for x in vox),
                "query_dims": tuple(int(d) for d in query.voxel_dims),
                "location_m": tuple(float(x) for x in loc),
                "refined_min_z": float(refined.points[:, 2].min()),
                "ground_knn_mean_z": _knn_ground_z(
                    ((refined.points.min(axis=0) + refined.points.max(axis=0)) / 2.0)[:2],
                    ground_pts, min(config.refine_k, len(ground_pts))),
            })
            placed.append(PlacedObject(cloud=refined, class_id=inst.class_id,
                                       instance_id=inst.instance_id))
            break
        if cursor >= len(locations) and len(placed) < len(instances):
            break
    timings["place"] = time.perf_counter() - t4

    if not placed:
        timings["style"] = 0.0
        out = skip("no_collision_free_location")
        out.audit["candidates_tried"] = cursor
        return out

    t5 = time.perf_counter()
    aug = style_translate(scan, pseudo_labels, placed, config.range_view)
    timings["style"] = time.perf_counter() - t5
    timings["sample_and_extent"] = t1 - t0

    # per-object survival counts from the concatenated valid mask
    offset = len(scan)
    for po, note in zip(placed, notes):
        note["survived_points"] = int(aug.valid_mask[offset:offset + len(po.cloud)].sum())
        offset += len(po.cloud)

    timings["end_to_end"] = time.perf_counter() - started
    aug.audit = {"status": "inserted", "instances": notes,
                 "candidates_tried": cursor, "stage_seconds": timings}
    return aug
