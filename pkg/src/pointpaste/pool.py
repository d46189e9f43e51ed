"""Object pool: density clustering, instance extraction and pool storage.

Clustering semantics are the classic density ones, fixed so that results are
reproducible no matter how the neighbor queries are executed:

    neighborhood  euclidean distance <= eps, a point counts itself
    core point    neighborhood size >= min_pts
    cluster       connected component of the core-core graph, components
                  numbered by their smallest core point index
    border point  non-core with a core neighbor, joins the lowest-numbered
                  cluster among its core neighbors
    noise         label -1

Pool directory layout:

    <pool>/manifest.txt          one tab-separated record per instance
    <pool>/instances/<id>.bin    instance points in the scan wire format

Manifest columns: id, class, source, point count, bbox center xyz, bbox
extent xyz. Records are sorted by (class, source, instance index) and the
per-class cap truncates in that order.
"""

from __future__ import annotations

import dataclasses
import os
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, LabelArray, load_scan, save_scan


@dataclasses.dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.5
    min_pts: int = 10

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be > 0")
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")


def dbscan_cluster(cloud: PointCloud, params: DbscanParams) -> np.ndarray:
    """Cluster labels per point (int64), noise = -1."""
    n = len(cloud)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels

    pts = cloud.points
    tree = cKDTree(pts)
    counts = tree.query_ball_point(pts, params.eps, return_length=True)
    core = counts >= params.min_pts
    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return labels

    # union-find over core points connected within eps
    parent = np.arange(n, dtype=np.int64)

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    core_tree = cKDTree(pts[core_idx])
    for i, j in core_tree.query_pairs(params.eps):
        ra, rb = find(core_idx[i]), find(core_idx[j])
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    roots = np.array([find(i) for i in core_idx], dtype=np.int64)
    # component numbering by smallest member index; roots are already the
    # minimum index of their component thanks to union-by-min above
    order = {r: k for k, r in enumerate(sorted(set(roots.tolist())))}
    for i, r in zip(core_idx, roots):
        labels[i] = order[r]

    # border points join the lowest-numbered cluster among core neighbors
    border_idx = np.flatnonzero(~core)
    if border_idx.size:
        neigh = tree.query_ball_point(pts[border_idx], params.eps)
        for b, nb in zip(border_idx, neigh):
            best = -1
            for j in nb:
                if core[j]:
                    lab = labels[j]
                    if best < 0 or lab < best:
                        best = lab
            labels[b] = best
    return labels


@dataclasses.dataclass
class ObjectInstance:
    instance_id: str
    class_id: int
    source_id: str
    cloud: PointCloud
    bbox_center: np.ndarray
    bbox_extent: np.ndarray

    @classmethod
    def from_points(cls, instance_id: str, class_id: int, source_id: str,
                    cloud: PointCloud) -> "ObjectInstance":
        if len(cloud) == 0:
            raise ValueError("instance needs at least one point")
        lo = cloud.points.min(axis=0)
        hi = cloud.points.max(axis=0)
        return cls(instance_id=instance_id, class_id=int(class_id),
                   source_id=source_id, cloud=cloud,
                   bbox_center=(lo + hi) / 2.0, bbox_extent=hi - lo)


def _manifest_key(inst: ObjectInstance):
    return (inst.class_id, inst.source_id, inst.instance_id)


@dataclasses.dataclass
class ObjectPool:
    """Instances in manifest order, truncated to per_class_cap per class."""

    instances: list
    per_class_cap: int = 1000

    def __post_init__(self):
        if self.per_class_cap < 1:
            raise ValueError("per_class_cap must be >= 1")
        ordered = sorted(self.instances, key=_manifest_key)
        kept, seen = [], {}
        for inst in ordered:
            c = seen.get(inst.class_id, 0)
            if c < self.per_class_cap:
                kept.append(inst)
                seen[inst.class_id] = c + 1
        self.instances = kept

    def __len__(self) -> int:
        return len(self.instances)

    def class_counts(self) -> dict:
        out: dict = {}
        for inst in self.instances:
            out[inst.class_id] = out.get(inst.class_id, 0) + 1
        return out


def extract_instances(scan: PointCloud, labels: LabelArray,
                      classes_of_interest: Sequence[int],
                      params: DbscanParams, source_id: str) -> list:
    """Cluster each requested class and return one instance per cluster.

    Clusters smaller than min_pts are discarded (with the semantics above a
    cluster always has >= min_pts members, this is belt-and-braces). Instances
    are ordered by (class, cluster id).
    """
    if len(scan) != len(labels):
        raise ValueError(
            f"scan has {len(scan)} points but labels has {len(labels)}")
    out = []
    for class_id in sorted(set(int(c) for c in classes_of_interest)):
        mask = labels.labels == class_id
        if not np.any(mask):
            continue
        sub = PointCloud(
            points=scan.points[mask],
            intensity=None if scan.intensity is None else scan.intensity[mask])
        cl = dbscan_cluster(sub, params)
        kept = 0
        for k in range(int(cl.max()) + 1 if cl.size else 0):
            member = cl == k
            if int(member.sum()) < params.min_pts:
                continue
            inst_cloud = PointCloud(
                points=sub.points[member],
                intensity=None if sub.intensity is None else sub.intensity[member])
            iid = f"{class_id:04d}_{source_id}_{kept:04d}"
            out.append(ObjectInstance.from_points(iid, class_id, source_id, inst_cloud))
            kept += 1
    return out


# ── pool storage ─────────────────────────────────────────────────────────

def pool_save(pool: ObjectPool, path) -> None:
    inst_dir = os.path.join(path, "instances")
    os.makedirs(inst_dir, exist_ok=True)
    lines = []
    for inst in pool.instances:
        save_scan(inst.cloud, os.path.join(inst_dir, inst.instance_id + ".bin"))
        fields = [inst.instance_id, str(inst.class_id), inst.source_id,
                  str(len(inst.cloud))]
        fields += [repr(float(x)) for x in inst.bbox_center]
        fields += [repr(float(x)) for x in inst.bbox_extent]
        lines.append("\t".join(fields))
    with open(os.path.join(path, "manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def pool_load(path, per_class_cap: int = 1000) -> ObjectPool:
    manifest = os.path.join(path, "manifest.txt")
    if not os.path.isfile(manifest):
        raise FileNotFoundError(f"no manifest at {manifest}")
    instances = []
    seen: dict = {}
    with open(manifest) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 10:
                raise ValueError(f"{manifest}:{ln}: expected 10 fields, got {len(fields)}")
            iid, class_id, source_id, count = fields[0], int(fields[1]), fields[2], int(fields[3])
            if seen.get(class_id, 0) >= per_class_cap:
                continue
            inst_path = os.path.join(path, "instances", iid + ".bin")
            if not os.path.isfile(inst_path):
                raise FileNotFoundError(f"{manifest}:{ln}: missing instance file {inst_path}")
            cloud = load_scan(inst_path)
            if len(cloud) != count:
                raise ValueError(
                    f"{manifest}:{ln}: manifest says {count} points, file has {len(cloud)}")
            instances.append(ObjectInstance.from_points(iid, class_id, source_id, cloud))
            seen[class_id] = seen.get(class_id, 0) + 1
    return ObjectPool(instances=instances, per_class_cap=per_class_cap)


def pool_sample(pool: ObjectPool, n: int, rng) -> list:
    """n uniform draws, without replacement while n <= pool size.

    rng may be a numpy Generator or a seed.
    """
    if len(pool) == 0:
        raise ValueError("cannot sample from an empty pool")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    idx = rng.choice(len(pool), size=n, replace=n > len(pool))
    return [pool.instances[i] for i in idx]
