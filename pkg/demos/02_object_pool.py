"""
Building an object pool with density clustering
================================================

Person-class points from two scans are split into instances with DBSCAN,
collected into a pool, written to disk, and read back.
"""

import tempfile
from pathlib import Path

from pointpaste.pool import (DbscanParams, ObjectPool, dbscan_cluster,
                             extract_instances, pool_load, pool_sample,
                             pool_save)
from pointpaste.synthetic import build_scene

params = DbscanParams()   # eps 0.5 m, min_pts 10

instances = []
for seed in (5, 6):
    scene = build_scene(seed, radius=14.0, n_beams=10, n_az=80,
                        obstacles=2, persons=2)
    # class 2 is the person class in these scenes
    instances += extract_instances(scene["cloud"], scene["labels"],
                                   classes_of_interest=[2], params=params,
                                   source_id=f"{seed:04d}")

print(f"extracted {len(instances)} person instances")
for inst in instances:
    print(f"  {inst.instance_id}: {len(inst.cloud)} points, "
          f"extent {inst.bbox_extent.round(2)}")

# the raw clustering output for one scan, for comparison
scene = build_scene(5, radius=14.0, n_beams=10, n_az=80, obstacles=2, persons=2)
person_points = scene["cloud"].points[scene["labels"].labels == 2]
from pointpaste.cloud import PointCloud
cluster_ids = dbscan_cluster(PointCloud(points=person_points), params)
print(f"dbscan on {len(person_points)} person points: "
      f"{cluster_ids.max() + 1} clusters, {(cluster_ids == -1).sum()} noise points")

pool = ObjectPool(instances=instances)
with tempfile.TemporaryDirectory() as tmp:
    pool_save(pool, Path(tmp) / "pool")
    manifest = (Path(tmp) / "pool" / "manifest.txt").read_text()
    print("manifest:")
    for line in manifest.splitlines():
        print("  " + line)
    reloaded = pool_load(Path(tmp) / "pool")

import numpy as np
picked = pool_sample(reloaded, 2, np.random.default_rng(0))
print(f"sampled {[p.instance_id for p in picked]}")
