"""Clustering, instance extraction and the on-disk pool format."""

import numpy as np
import pytest

import oracles
from pointpaste.cloud import PointCloud, LabelArray
from pointpaste.pool import (DbscanParams, ObjectInstance, ObjectPool,
                             dbscan_cluster, extract_instances, pool_load,
                             pool_sample, pool_save)


def blob(rng, center, n, spread=0.15):
    return center + rng.standard_normal((n, 3)) * spread


def test_dbscan_matches_quadratic_oracle():
    rng = np.random.default_rng(21)
    params = DbscanParams(eps=0.5, min_pts=5)
    for _ in range(20):
        parts = [blob(rng, rng.uniform(-4, 4, 3), int(rng.integers(3, 40)))
                 for _ in range(int(rng.integers(1, 5)))]
        pts = np.vstack(parts)
        got = dbscan_cluster(PointCloud(points=pts), params)
        want = oracles.dbscan(pts, params.eps, params.min_pts)
        assert got.tolist() == want


def test_dbscan_all_noise():
    pts = np.array([[0.0, 0, 0], [10.0, 0, 0], [20.0, 0, 0]])
    got = dbscan_cluster(PointCloud(points=pts), DbscanParams(eps=0.5, min_pts=2))
    assert got.tolist() == [-1, -1, -1]


def test_dbscan_self_counts_toward_min_pts():
    # two points 0.4 apart: each has 2 neighbors including itself
    pts = np.array([[0.0, 0, 0], [0.4, 0, 0]])
    got = dbscan_cluster(PointCloud(points=pts), DbscanParams(eps=0.5, min_pts=2))
    assert got.tolist() == [0, 0]


def test_dbscan_border_point_joins_lowest_cluster():
    # clusters at x=0 and x=2; the point at x=1 is within eps of a core point
    # of each but is not core itself
    left = np.array([[0.0, 0, 0], [0.2, 0, 0], [0.4, 0, 0]])
    right = left + [2.0, 0, 0]
    border = np.array([[1.1, 0, 0]])
    pts = np.vstack([left, right, border])
    got = dbscan_cluster(PointCloud(points=pts), DbscanParams(eps=0.8, min_pts=3))
    assert got.tolist() == [0, 0, 0, 1, 1, 1, 0]
    assert got.tolist() == oracles.dbscan(pts, 0.8, 3)


def test_instance_bbox():
    pts = np.array([[0.0, 0, 0], [2.0, 4.0, 6.0]])
    inst = ObjectInstance.from_points("x", 1, "s", PointCloud(points=pts))
    assert np.allclose(inst.bbox_center, [1.0, 2.0, 3.0])
    assert np.allclose(inst.bbox_extent, [2.0, 4.0, 6.0])


def test_extract_instances_finds_separated_objects():
    rng = np.random.default_rng(8)
    people = [blob(rng, np.array([3.0, 0, 1]), 40),
              blob(rng, np.array([-5.0, 2, 1]), 60)]
    clutter = blob(rng, np.array([0.0, -6, 0]), 50)
    pts = np.vstack(people + [clutter])
    lab = np.array([2] * 100 + [1] * 50, dtype=np.uint32)
    out = extract_instances(PointCloud(points=pts),
                            LabelArray(labels=lab, num_classes=4),
                            classes_of_interest=[2],
                            params=DbscanParams(eps=0.6, min_pts=10),
                            source_id="000000")
    assert [inst.instance_id for inst in out] == ["0002_000000_0000", "0002_000000_0001"]
    assert sorted(len(inst.cloud) for inst in out) == [40, 60]


def test_pool_orders_and_caps():
    rng = np.random.default_rng(0)
    insts = [ObjectInstance.from_points(f"{c:04d}_s_{k:04d}", c, "s",
                                        PointCloud(points=blob(rng, np.zeros(3), 5)))
             for c in (2, 1) for k in (1, 0, 2)]
    pool = ObjectPool(instances=insts, per_class_cap=2)
    assert [i.instance_id for i in pool.instances] == [
        "0001_s_0000", "0001_s_0001", "0002_s_0000", "0002_s_0001"]
    assert pool.class_counts() == {1: 2, 2: 2}


def test_pool_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    insts = [ObjectInstance.from_points(
        f"{2:04d}_a_{k:04d}", 2, "a",
        PointCloud(points=blob(rng, rng.uniform(-3, 3, 3), 12),
                   intensity=rng.random(12).astype(np.float32)))
        for k in range(3)]
    pool = ObjectPool(instances=insts)
    pool_save(pool, tmp_path)

    back = pool_load(tmp_path)
    assert len(back) == 3
    for a, b in zip(pool.instances, back.instances):
        assert a.instance_id == b.instance_id
        assert np.allclose(a.cloud.points, b.cloud.points, atol=1e-5)
        assert np.allclose(a.bbox_center, b.bbox_center, atol=1e-5)

    assert len(pool_load(tmp_path, per_class_cap=2)) == 2

    manifest = tmp_path / "manifest.txt"
    lines = manifest.read_text().splitlines()
    assert all(len(line.split("\t")) == 10 for line in lines)

    # truncated instance file: point count disagrees with the manifest
    victim = tmp_path / "instances" / "0002_a_0001.bin"
    victim.write_bytes(victim.read_bytes()[:-16])
    with pytest.raises(ValueError):
        pool_load(tmp_path)
    victim.unlink()
    with pytest.raises(FileNotFoundError):
        pool_load(tmp_path)


def test_pool_sample_determinism_and_replacement():
    rng = np.random.default_rng(2)
    insts = [ObjectInstance.from_points(f"{1:04d}_s_{k:04d}", 1, "s",
                                        PointCloud(points=blob(rng, np.zeros(3), 4)))
             for k in range(5)]
    pool = ObjectPool(instances=insts)
    a = [i.instance_id for i in pool_sample(pool, 3, 7)]
    b = [i.instance_id for i in pool_sample(pool, 3, 7)]
    assert a == b
    assert len(set(a)) == 3                       # without replacement
    big = [i.instance_id for i in pool_sample(pool, 12, 7)]
    assert len(big) == 12                         # with replacement once n > size
    with pytest.raises(ValueError):
        pool_sample(ObjectPool(instances=[]), 1, 0)
