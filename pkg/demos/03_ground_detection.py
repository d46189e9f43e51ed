"""
Ground detection by patchwise plane fitting
===========================================

The detector splits the scan into range-ring / azimuth-sector patches, seeds
each patch with its lowest points, and refits a plane until the inlier set
stabilizes. Patches whose plane tilts past the slope gate contribute nothing.
"""

import numpy as np

from pointpaste.cloud import PointCloud
from pointpaste.ground import GroundDetectorParams, detect_ground
from pointpaste.synthetic import build_scene

scene = build_scene(seed=11, radius=20.0, n_beams=14, n_az=120, obstacles=4)
cloud = scene["cloud"]
truth = scene["ground_mask"]

mask = detect_ground(cloud, GroundDetectorParams())

hits = int((mask & truth).sum())
recall = hits / int(truth.sum())
false_pos = int((mask & ~truth).sum())
print(f"{len(cloud)} points, {int(truth.sum())} true ground")
print(f"detector: {int(mask.sum())} called ground, recall {recall:.3f}, "
      f"{false_pos} false positives")

# height profile of the detected ground, by range ring
rho = np.hypot(cloud.points[:, 0], cloud.points[:, 1])
for ring in range(0, 5):
    sel = mask & (rho >= 4 * ring) & (rho < 4 * (ring + 1))
    if sel.any():
        z = cloud.points[sel, 2]
        print(f"  ring {4*ring:2d}-{4*(ring+1):2d} m: "
              f"{int(sel.sum()):4d} points, mean z {z.mean():+.3f}")

# the slope gate: a 35-degree ramp is steeper than the 20-degree default
# and must not be called ground
rng = np.random.default_rng(3)
xy = rng.uniform(2, 8, (600, 2))
ramp = np.column_stack([xy[:, 0], xy[:, 1], xy[:, 0] * np.tan(np.radians(35))])
ramp_mask = detect_ground(PointCloud(points=ramp), GroundDetectorParams())
print(f"35-degree ramp: {int(ramp_mask.sum())} of {len(ramp)} called ground")

gentle = np.column_stack([xy[:, 0], xy[:, 1], xy[:, 0] * np.tan(np.radians(8))])
gentle_mask = detect_ground(PointCloud(points=gentle), GroundDetectorParams())
print(f"8-degree ramp:  {int(gentle_mask.sum())} of {len(gentle)} called ground")
