"""Ground segmentation: a small concentric-ring plane fitter, plus ingestion
of precomputed per-point ground labels.

The detector partitions the cloud into (ring, sector) patches, seeds each
patch with its lowest points, then alternates plane fitting and inlier
re-estimation. A patch only contributes ground labels while its plane stays
within max_slope of horizontal. Everything is deterministic and invariant to
the input point order; the seed argument exists for interface stability only.

Ground label files are one byte per point, 0x00 or 0x01.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from .cloud import PointCloud, VoxelGrid, FormatError


@dataclasses.dataclass(frozen=True)
class GroundDetectorParams:
    cell_size: float = 2.0            # radial ring width, meters
    sectors: int = 16                 # azimuth bins
    ransac_iters: int = 50            # refit iterations cap
    inlier_threshold: float = 0.15    # plane distance, meters
    max_slope: float = 0.3490658503988659   # 20 deg
    seed_height_margin: float = 0.3   # band above patch minimum, meters

    def __post_init__(self):
        if self.cell_size <= 0 or self.sectors < 1 or self.ransac_iters < 1:
            raise ValueError("bad detector geometry parameters")
        if self.inlier_threshold <= 0 or self.seed_height_margin <= 0:
            raise ValueError("thresholds must be > 0")
        if not 0 < self.max_slope < np.pi / 2:
            raise ValueError("max_slope must be in (0, pi/2)")


def _fit_plane(pts: np.ndarray):
    """Least-squares plane through pts: (centroid, unit normal with nz >= 0)."""
    centroid = pts.mean(axis=0)
    cov = np.cov((pts - centroid).T)
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    if normal[2] < 0:
        normal = -normal
    return centroid, normal


def detect_ground(cloud: PointCloud, params: GroundDetectorParams,
                  seed: Optional[int] = None) -> np.ndarray:
    """Boolean ground mask per point."""
    n = len(cloud)
    out = np.zeros(n, dtype=bool)
    if n == 0:
        return out

    pts = cloud.points
    rho = np.hypot(pts[:, 0], pts[:, 1])
    ring = np.floor(rho / params.cell_size).astype(np.int64)
    az = np.arctan2(pts[:, 1], pts[:, 0])
    sector = np.floor((az + np.pi) / (2.0 * np.pi / params.sectors)).astype(np.int64)
    np.clip(sector, 0, params.sectors - 1, out=sector)
    patch = ring * params.sectors + sector

    order = np.argsort(patch, kind="stable")
    bounds = np.flatnonzero(np.diff(patch[order])) + 1
    for member in np.split(order, bounds):
        if member.size < 3:
            continue
        sub = pts[member]
        zmin = sub[:, 2].min()
        inlier = sub[:, 2] <= zmin + params.seed_height_margin
        if int(inlier.sum()) < 3:
            continue
        centroid = normal = None
        for _ in range(params.ransac_iters):
            centroid, normal = _fit_plane(sub[inlier])
            dist = np.abs((sub - centroid) @ normal)
            new_inlier = dist <= params.inlier_threshold
            if int(new_inlier.sum()) < 3:
                inlier = new_inlier
                break
            if np.array_equal(new_inlier, inlier):
                break
            inlier = new_inlier
        if centroid is None or int(inlier.sum()) < 3:
            continue
        # slope gate: normal must stay near vertical
        if np.arccos(min(abs(float(normal[2])), 1.0)) > params.max_slope:
            continue
        out[member[inlier]] = True
    return out


def save_ground(mask: np.ndarray, path) -> None:
    np.asarray(mask, dtype=bool).astype(np.uint8).tofile(path)


def ingest_ground(path, cloud: PointCloud) -> np.ndarray:
    """Read a ground label file and validate it against the cloud."""
    buf = np.fromfile(path, dtype=np.uint8)
    if buf.size != len(cloud):
        raise ValueError(
            f"{path}: {buf.size} labels for {len(cloud)} points")
    if np.any(buf > 1):
        raise FormatError(f"{path}: bytes other than 0x00/0x01 present")
    return buf.astype(bool)


@dataclasses.dataclass(frozen=True)
class GroundVoxelSet:
    """Voxel indices (within one grid's index space) holding ground points."""

    voxels: frozenset
    origin: tuple
    voxel_size: float

    @property
    def indices(self) -> np.ndarray:
        if not self.voxels:
            return np.zeros((0, 3), dtype=np.int64)
        return np.array(sorted(self.voxels), dtype=np.int64)


def ground_voxels(mask: np.ndarray, cloud: PointCloud, grid: VoxelGrid) -> GroundVoxelSet:
    """Voxels of the grid that contain at least one ground-labeled point."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (len(cloud),):
        raise ValueError("mask length does not match cloud")
    idx = grid.point_indices(cloud.points[mask])
    inside = np.all((idx >= 0) & (idx < grid.dims), axis=1)
    vox = frozenset(map(tuple, idx[inside].tolist()))
    return GroundVoxelSet(voxels=vox, origin=tuple(grid.origin), voxel_size=grid.voxel_size)
