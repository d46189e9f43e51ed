"""Synthetic street-scene generators.

Nothing here pretends to be a real sensor model. The point patterns only
mimic the parts that matter to the pipeline: radial ground sampling whose
density falls off with range, box-shaped obstacles, and person-sized point
clusters whose vertical extent lands in (1.5, 2.0] m so a 0.5 m voxel query
is 4 voxels tall (even, see ground_filter).

Class ids used by the generated labels:

    0 ground, 1 structure, 2 person; num_classes = 4
"""

from __future__ import annotations

import numpy as np

from .cloud import PointCloud, LabelArray
from .pool import ObjectInstance, ObjectPool

CLASS_GROUND = 0
CLASS_STRUCTURE = 1
CLASS_PERSON = 2
NUM_CLASSES = 4


def make_ground(rng, n_beams: int = 20, n_az: int = 300, radius: float = 30.0,
                sensor_height: float = 1.8, elev_lo: float = -0.4363,
                elev_hi: float = -0.05236, z0: float = 0.0,
                noise: float = 0.02) -> np.ndarray:
    """Ground hits of downward beams: rings whose spacing grows with range.

    The growing ring gaps are the load-bearing property; past mid range the
    gaps exceed typical voxel sizes, which is what leaves ground-contact
    voxels free for insertion.
    """
    parts = []
    for elev in np.linspace(elev_lo, elev_hi, n_beams):
        r = sensor_height / np.tan(-elev)
        if r > radius:
            continue
        az = (np.arange(n_az) + rng.random(n_az)) * (2.0 * np.pi / n_az)
        rr = r * (1.0 + 0.01 * rng.standard_normal(n_az))
        parts.append(np.column_stack([
            rr * np.cos(az), rr * np.sin(az),
            z0 + noise * rng.standard_normal(n_az)]))
    return np.vstack(parts)


def make_box(rng, cx: float, cy: float, base_z: float,
             sx: float, sy: float, sz: float, n: int) -> np.ndarray:
    """Uniform points filling an axis-aligned box that sits on base_z."""
    return np.column_stack([
        cx + (rng.random(n) - 0.5) * sx,
        cy + (rng.random(n) - 0.5) * sy,
        base_z + rng.random(n) * sz])


def make_person(rng, cx: float, cy: float, base_z: float,
                height: float = None, n: int = None) -> np.ndarray:
    """Person-shaped blob; first and last rows pin the exact vertical extent."""
    if height is None:
        height = float(rng.uniform(1.55, 1.95))
    if n is None:
        n = int(rng.integers(80, 200))
    frac = rng.random(n)
    rad = 0.16 * (0.5 + 0.5 * np.sin(np.pi * np.clip(frac, 0.05, 0.95)))
    ang = rng.uniform(0.0, 2.0 * np.pi, n)
    rr = rad * np.sqrt(rng.random(n))
    pts = np.column_stack([cx + rr * np.cos(ang), cy + rr * np.sin(ang),
                           base_z + height * frac])
    caps = np.array([[cx, cy, base_z], [cx, cy, base_z + height]])
    return np.vstack([caps[:1], pts, caps[1:]])


def build_scene(seed, radius: float = 30.0, n_beams: int = 20, n_az: int = 300,
                obstacles: int = 5, persons: int = 0, obstacle_points=(150, 600),
                z0: float = 0.0, noise: float = 0.02) -> dict:
    """One labeled scene: ground plane, boxes, optionally standing persons.

    Returns a dict with cloud, labels, ground_mask (the generator's truth,
    not a detector output) and plane_z.
    """
    rng = np.random.default_rng(seed)
    parts = [make_ground(rng, n_beams=n_beams, n_az=n_az, radius=radius,
                         z0=z0, noise=noise)]
    labels = [np.full(len(parts[0]), CLASS_GROUND, dtype=np.uint32)]

    for _ in range(obstacles):
        r = rng.uniform(5.0, radius - 3.0)
        az = rng.uniform(0.0, 2.0 * np.pi)
        box = make_box(rng, r * np.cos(az), r * np.sin(az), z0,
                       sx=rng.uniform(0.8, 4.0), sy=rng.uniform(0.8, 4.0),
                       sz=rng.uniform(0.6, 1.8),
                       n=int(rng.integers(obstacle_points[0], obstacle_points[1])))
        parts.append(box)
        labels.append(np.full(len(box), CLASS_STRUCTURE, dtype=np.uint32))

    for _ in range(persons):
        r = rng.uniform(4.0, radius - 4.0)
        az = rng.uniform(0.0, 2.0 * np.pi)
        person = make_person(rng, r * np.cos(az), r * np.sin(az), z0)
        parts.append(person)
        labels.append(np.full(len(person), CLASS_PERSON, dtype=np.uint32))

    pts = np.vstack(parts)
    lab = np.concatenate(labels)
    ground_mask = lab == CLASS_GROUND
    cloud = PointCloud(points=pts, intensity=rng.random(len(pts)).astype(np.float32))
    return {"cloud": cloud,
            "labels": LabelArray(labels=lab, num_classes=NUM_CLASSES),
            "ground_mask": ground_mask,
            "plane_z": z0}


def make_benchmark_scene(seed, target_points: int = 130000) -> dict:
    """Structure-heavy scene padded with one extra box to an exact point count."""
    scene = build_scene(seed, radius=45.0, obstacles=35,
                        obstacle_points=(2500, 4500))
    deficit = target_points - len(scene["cloud"])
    if deficit < 0:
        raise ValueError("base scene already exceeds the target point count")
    if deficit > 0:
        rng = np.random.default_rng((int(seed) << 1) + 1)
        pad = make_box(rng, 12.0, -9.0, scene["plane_z"],
                       sx=3.0, sy=3.0, sz=1.5, n=deficit)
        pts = np.vstack([scene["cloud"].points, pad])
        inten = np.concatenate([scene["cloud"].intensity,
                                rng.random(deficit).astype(np.float32)])
        lab = np.concatenate([scene["labels"].labels,
                              np.full(deficit, CLASS_STRUCTURE, dtype=np.uint32)])
        scene["cloud"] = PointCloud(points=pts, intensity=inten)
        scene["labels"] = LabelArray(labels=lab, num_classes=NUM_CLASSES)
        scene["ground_mask"] = np.concatenate(
            [scene["ground_mask"], np.zeros(deficit, dtype=bool)])
    return scene


def make_person_pool(seed, n_instances: int = 24, per_class_cap: int = 1000) -> ObjectPool:
    """A pool of standalone person instances at assorted ranges and azimuths."""
    rng = np.random.default_rng(seed)
    instances = []
    for k in range(n_instances):
        r = rng.uniform(4.0, 25.0)
        az = rng.uniform(0.0, 2.0 * np.pi)
        pts = make_person(rng, r * np.cos(az), r * np.sin(az),
                          base_z=float(rng.uniform(-0.3, 0.3)))
        cloud = PointCloud(points=pts,
                           intensity=rng.random(len(pts)).astype(np.float32))
        instances.append(ObjectInstance.from_points(
            f"{CLASS_PERSON:04d}_synth_{k:04d}", CLASS_PERSON, "synth", cloud))
    return ObjectPool(instances=instances, per_class_cap=per_class_cap)
