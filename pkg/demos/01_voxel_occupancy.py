"""
Voxel occupancy and the collision-free location search
=======================================================

Builds a small synthetic scan, voxelizes it over the search area, and walks
through the window-sum overlap check that finds every location where a box
of a given size fits without touching an occupied voxel.
"""

import numpy as np

from pointpaste.cloud import SearchArea, voxelize
from pointpaste.insertion import QueryExtent, overlap_check
from pointpaste.synthetic import build_scene

# a desk-sized scene: sparse ring ground plus a couple of box obstacles
scene = build_scene(seed=42, radius=14.0, n_beams=10, n_az=80, obstacles=3)
cloud = scene["cloud"]
print(f"scan: {len(cloud)} points")

area = SearchArea(corner_lo=(-15.0, -15.0, -2.0), corner_hi=(15.0, 15.0, 2.0))
grid = voxelize(cloud, voxel_size=0.5, area=area)
print(f"grid: {grid.occupancy.shape}, {int(grid.occupancy.sum())} occupied voxels")

# ask where a 2 x 2 x 4 voxel box (1 m x 1 m x 2 m) fits with zero overlap
query = QueryExtent(extent=(1.0, 1.0, 2.0), voxel_dims=np.array([2, 2, 4]))
valid = overlap_check(grid, query)
print(f"query {tuple(int(d) for d in query.voxel_dims)}: "
      f"{len(valid)} collision-free centers")

# sanity: brute-force one reported center, the window around it must be empty
vx, vy, vz = valid.locations[0]
dx, dy, dz = query.voxel_dims
window = grid.occupancy[vx - (dx - 1) // 2: vx - (dx - 1) // 2 + dx,
                        vy - (dy - 1) // 2: vy - (dy - 1) // 2 + dy,
                        vz - (dz - 1) // 2: vz - (dz - 1) // 2 + dz]
print(f"window sum at center {(int(vx), int(vy), int(vz))}: {int(window.sum())}")

# top-down ASCII slice: occupied columns vs a band of free centers
occupied_xy = grid.occupancy.any(axis=2)
free = set(map(tuple, valid.locations[:, :2].tolist()))
x0 = grid.occupancy.shape[0] // 2 - 12
y0 = grid.occupancy.shape[1] // 2 - 12
print("top-down 24 x 24 voxel window around the sensor (#=occupied, .=valid center)")
for ix in range(x0, x0 + 24):
    row = ""
    for iy in range(y0, y0 + 24):
        if occupied_xy[ix, iy]:
            row += "#"
        elif (ix, iy) in {(a, b) for a, b in free}:
            row += "."
        else:
            row += " "
    print(row)
