"""Point cloud containers, voxel occupancy and spherical range-view projection.

Conventions used throughout the package:

    voxel index   i = floor((p - origin) / voxel_size), half-open cells
                  [origin + i*vs, origin + (i+1)*vs) per axis
    range image   u = 1/2 * (1 - atan2(y, x)/pi) * W
                  v = (1 - (asin(z/r) + fov_up)/fov) * H
                  with fov = fov_up + |fov_down|, u/v floored and clamped
                  to the border pixels so no point is silently dropped

Binary wire formats (all little-endian):

    scan    float32 records of x, y, z, intensity (16 bytes per point)
    labels  uint32 per point, class id in the lower 16 bits
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np

# Sentinel class id for "no label / ignore in losses". Fits the lower 16 bits
# of the label wire format.
IGNORE_LABEL = 0xFFFF


class FormatError(ValueError):
    """A binary file does not match its wire format."""


@dataclasses.dataclass
class PointCloud:
    """N points with optional per-point intensity.

    Coordinates are kept in float64; the wire format is float32, so values
    loaded from disk round-trip exactly.
    """

    points: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {self.points.shape}")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite coordinates")
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=np.float32)
            if self.intensity.shape != (len(self.points),):
                raise ValueError("intensity length does not match point count")

    def __len__(self) -> int:
        return len(self.points)


@dataclasses.dataclass
class LabelArray:
    """Per-point class ids, each < num_classes or the IGNORE_LABEL sentinel."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint32)
        if self.labels.ndim != 1:
            raise ValueError("labels must be 1-D")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        bad = (self.labels >= self.num_classes) & (self.labels != IGNORE_LABEL)
        if np.any(bad):
            raise ValueError(
                f"{int(bad.sum())} labels outside [0, {self.num_classes}) "
                "and not the ignore sentinel"
            )

    def __len__(self) -> int:
        return len(self.labels)


@dataclasses.dataclass(frozen=True)
class SearchArea:
    """Axis-aligned box in sensor coordinates, corner_lo strictly below corner_hi."""

    corner_lo: tuple
    corner_hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.corner_lo, dtype=np.float64)
        hi = np.asarray(self.corner_hi, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("corners must be 3-vectors")
        if not np.all(hi > lo):
            raise ValueError(f"degenerate search area: lo={lo}, hi={hi}")
        object.__setattr__(self, "corner_lo", tuple(float(x) for x in lo))
        object.__setattr__(self, "corner_hi", tuple(float(x) for x in hi))

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.corner_hi) - np.asarray(self.corner_lo)


@dataclasses.dataclass
class VoxelGrid:
    """Boolean occupancy over a SearchArea at a fixed voxel size."""

    origin: np.ndarray       # (3,) corner_lo of the area
    voxel_size: float
    dims: np.ndarray         # (3,) int voxel counts per axis
    occupancy: np.ndarray    # bool array of shape dims

    def voxel_center(self, index) -> np.ndarray:
        """Center coordinate of a voxel index (array of indices works too)."""
        idx = np.asarray(index, dtype=np.float64)
        return self.origin + (idx + 0.5) * self.voxel_size

    def point_indices(self, points: np.ndarray) -> np.ndarray:
        """Voxel index per point; may fall outside [0, dims)."""
        return np.floor((points - self.origin) / self.voxel_size).astype(np.int64)


@dataclasses.dataclass(frozen=True)
class RangeImageConfig:
    """Spherical projection geometry.

    fov_up and fov_down are radians; fov_down is usually negative. The total
    vertical fov is fov_up + |fov_down| and must be positive.
    """

    height: int = 64
    width: int = 1024
    fov_up: float = 0.26179938779914941  # 15 deg
    fov_down: float = -0.26179938779914941
    max_range: float = 80.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("image dims must be >= 1")
        if self.total_fov <= 0.0:
            raise ValueError("total vertical fov must be > 0")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be > 0")

    @property
    def total_fov(self) -> float:
        return self.fov_up + abs(self.fov_down)


@dataclasses.dataclass
class RangeImage:
    """Per-pixel winning point index (-1 where empty) and its range."""

    config: RangeImageConfig
    pixel_point: np.ndarray   # (H, W) int64, -1 = no point
    pixel_range: np.ndarray   # (H, W) float64, +inf where empty


def bounding_extent(clouds: Sequence[PointCloud]) -> np.ndarray:
    """Componentwise max minus min over the union of the given clouds."""
    stacks = [c.points for c in clouds if len(c) > 0]
    if not stacks:
        raise ValueError("bounding_extent of zero points")
    allp = np.vstack(stacks)
    return allp.max(axis=0) - allp.min(axis=0)


def voxelize(cloud: PointCloud, voxel_size: float, area: SearchArea) -> VoxelGrid:
    """Bin points into half-open voxel cells over the search area.

    A voxel is occupied iff at least one point falls inside it; points whose
    cell index leaves [0, dims) on any axis are ignored. Duplicate points are
    idempotent by construction.
    """
    if voxel_size <= 0.0:
        raise ValueError("voxel_size must be > 0")
    origin = np.asarray(area.corner_lo, dtype=np.float64)
    dims = np.ceil(area.extent / voxel_size).astype(np.int64)
    occ = np.zeros(tuple(dims), dtype=bool)
    if len(cloud) > 0:
        idx = np.floor((cloud.points - origin) / voxel_size).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < dims), axis=1)
        idx = idx[inside]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(origin=origin, voxel_size=float(voxel_size), dims=dims, occupancy=occ)


def project_to_range_view(cloud: PointCloud, config: RangeImageConfig):
    """Project points onto the spherical range image.

    Returns (pixels, image): pixels is (N, 2) int64 holding (u, v) = (column,
    row) per point; image keeps, per pixel, the point with the smallest range,
    ties broken by the lowest point index. Out-of-fov points clamp to the
    border pixels.
    """
    n = len(cloud)
    h, w = config.height, config.width
    pixel_point = np.full((h, w), -1, dtype=np.int64)
    pixel_range = np.full((h, w), np.inf, dtype=np.float64)
    if n == 0:
        return np.zeros((0, 2), dtype=np.int64), RangeImage(config, pixel_point, pixel_range)

    pts = cloud.points
    rng = np.linalg.norm(pts, axis=1)
    safe = np.maximum(rng, 1e-12)
    yaw = np.arctan2(pts[:, 1], pts[:, 0])
    pitch = np.arcsin(np.clip(pts[:, 2] / safe, -1.0, 1.0))

    u = np.floor(0.5 * (1.0 - yaw / np.pi) * w).astype(np.int64)
    v = np.floor((1.0 - (pitch + config.fov_up) / config.total_fov) * h).astype(np.int64)
    np.clip(u, 0, w - 1, out=u)
    np.clip(v, 0, h - 1, out=v)

    # winner per pixel: sort by (flat pixel, range, index), keep first rows
    flat = v * w + u
    order = np.lexsort((np.arange(n), rng, flat))
    sf = flat[order]
    first = np.ones(n, dtype=bool)
    first[1:] = sf[1:] != sf[:-1]
    win = order[first]
    pixel_point[v[win], u[win]] = win
    pixel_range[v[win], u[win]] = rng[win]

    return np.column_stack([u, v]), RangeImage(config, pixel_point, pixel_range)


def render_range_image(image: RangeImage) -> np.ndarray:
    """8-bit grayscale view: near = bright, empty pixels black."""
    norm = np.clip(image.pixel_range / image.config.max_range, 0.0, 1.0)
    gray = np.where(image.pixel_point >= 0, 255.0 * (1.0 - norm), 0.0)
    return gray.astype(np.uint8)


# ── binary I/O ───────────────────────────────────────────────────────────

def load_scan(path) -> PointCloud:
    """Read a scan file (float32 LE x, y, z, intensity records)."""
    buf = np.fromfile(path, dtype=np.uint8)
    if buf.size % 16 != 0:
        raise FormatError(f"{path}: size {buf.size} is not a multiple of 16 bytes")
    rec = buf.view("<f4").reshape(-1, 4)
    return PointCloud(points=rec[:, :3].astype(np.float64), intensity=rec[:, 3].copy())


def save_scan(cloud: PointCloud, path) -> None:
    """Write the scan format; coordinates are rounded to float32, missing
    intensity is written as zeros."""
    rec = np.zeros((len(cloud), 4), dtype="<f4")
    rec[:, :3] = cloud.points.astype("<f4")
    if cloud.intensity is not None:
        rec[:, 3] = cloud.intensity.astype("<f4")
    rec.tofile(path)


def load_labels(path, num_classes: int) -> LabelArray:
    """Read a label file (uint32 LE per point, class id = value & 0xFFFF)."""
    buf = np.fromfile(path, dtype=np.uint8)
    if buf.size % 4 != 0:
        raise FormatError(f"{path}: size {buf.size} is not a multiple of 4 bytes")
    raw = buf.view("<u4")
    return LabelArray(labels=(raw & 0xFFFF).astype(np.uint32), num_classes=num_classes)


def save_labels(labels: LabelArray, path) -> None:
    labels.labels.astype("<u4").tofile(path)
