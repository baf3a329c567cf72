from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.cluster import DBSCAN as SkDBSCAN

from octoscene.errors import EmptyCloud, EmptyContained, NonPositiveEps, NonPositiveResolution
from octoscene.geometry import (
    NOISE,
    Aabb,
    aabb_of,
    cosine,
    dbscan_points,
    dbscan_precomputed,
    largest_cluster_mask,
    voxel_iou,
    voxel_ior,
    voxelize,
)
from oracles import naive_dbscan, partition_sets, scan_aabb

finite_coord = st.floats(min_value=-1000, max_value=1000, allow_nan=False)
point_st = st.tuples(finite_coord, finite_coord, finite_coord)


class TestAabb:
    def test_two_points(self):
        box = aabb_of([(0, 0, 0), (1, 2, 3)])
        assert box.b_min == (0, 0, 0)
        assert box.b_max == (1, 2, 3)

    def test_single_point(self):
        box = aabb_of([(5, 5, 5)])
        assert box.b_min == box.b_max == (5, 5, 5)

    def test_uniform_cube_matches_scan_oracle(self, rng):
        pts = rng.random((1000, 3))
        box = aabb_of(pts)
        lo, hi = scan_aabb(pts.tolist())
        assert box.b_min == tuple(lo)
        assert box.b_max == tuple(hi)
        assert np.all(np.array(box.b_min) >= -1e-12)
        assert np.all(np.array(box.b_max) <= 1 + 1e-12)

    def test_empty_raises(self):
        with pytest.raises(EmptyCloud):
            aabb_of(np.empty((0, 3)))

    @given(st.lists(point_st, min_size=1, max_size=50))
    def test_contains_every_input_point(self, pts):
        box = aabb_of(pts)
        for p in pts:
            assert box.contains_point(p)

    def test_inverted_box_rejected(self):
        with pytest.raises(ValueError):
            Aabb((1, 0, 0), (0, 1, 1))


class TestVoxelize:
    def test_same_cell(self):
        keys = voxelize([(0.01, 0.01, 0.01), (0.02, 0.02, 0.02)], 0.05)
        assert keys == frozenset({(0, 0, 0)})

    def test_empty(self):
        assert voxelize(np.empty((0, 3)), 0.1) == frozenset()

    def test_rod_count_matches_floor_oracle(self, rng):
        xs = rng.random(100)
        pts = np.stack([xs, np.zeros(100), np.zeros(100)], axis=1)
        keys = voxelize(pts, 0.1)
        expected = {int(np.floor(x / 0.1)) for x in xs}
        assert len(keys) == len(expected)
        assert keys == {(i, 0, 0) for i in expected}

    def test_bad_resolution(self):
        with pytest.raises(NonPositiveResolution):
            voxelize([(0, 0, 0)], 0.0)

    @given(st.lists(point_st, min_size=0, max_size=40))
    def test_no_more_keys_than_points(self, pts):
        assert len(voxelize(pts, 0.25)) <= len(pts)


class TestVoxelSetOps:
    def test_identical(self):
        s = frozenset({(0, 0, 0), (1, 1, 1)})
        assert voxel_iou(s, s) == 1.0

    def test_disjoint(self):
        a = frozenset({(0, 0, 0)})
        b = frozenset({(5, 5, 5)})
        assert voxel_iou(a, b) == 0.0

    def test_partial_overlap(self):
        a = frozenset((i, 0, 0) for i in range(8))
        b = frozenset((i, 0, 0) for i in range(4, 12))
        assert voxel_iou(a, b) == pytest.approx(4 / 12)

    def test_both_empty_is_zero(self):
        assert voxel_iou(frozenset(), frozenset()) == 0.0

    def test_ior_subset(self):
        a = frozenset((i, j, 0) for i in range(4) for j in range(4))
        b = frozenset((i, 0, 0) for i in range(3))
        assert voxel_ior(a, b) == 1.0

    def test_ior_disjoint(self):
        assert voxel_ior(frozenset({(0, 0, 0)}), frozenset({(9, 9, 9)})) == 0.0

    def test_ior_at_containment_threshold(self):
        contained = frozenset((i, 0, 0) for i in range(10))
        container = frozenset((i, 0, 0) for i in range(8))
        assert voxel_ior(container, contained) == pytest.approx(0.8)

    def test_ior_empty_contained(self):
        with pytest.raises(EmptyContained):
            voxel_ior(frozenset({(0, 0, 0)}), frozenset())

    @given(
        st.sets(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)), max_size=30),
        st.sets(st.tuples(st.integers(0, 5), st.integers(0, 5), st.integers(0, 5)), max_size=30),
    )
    def test_iou_symmetric(self, a, b):
        assert voxel_iou(frozenset(a), frozenset(b)) == voxel_iou(frozenset(b), frozenset(a))

    @given(st.lists(point_st, min_size=1, max_size=30), st.lists(point_st, min_size=0, max_size=30))
    def test_ior_one_when_contained(self, inner, extra):
        container = voxelize(inner + extra, 0.5)
        contained = voxelize(inner, 0.5)
        assert voxel_ior(container, contained) == 1.0


class TestDbscan:
    def test_isolated_outlier_is_noise(self, rng):
        ball = rng.normal(0, 0.01, size=(50, 3)) * 0.3
        pts = np.vstack([ball, [[10.0, 10.0, 10.0]]])
        labels = dbscan_points(pts, eps=0.05, min_pts=5)
        assert labels[-1] == NOISE
        assert np.all(labels[:-1] == labels[0])

    def test_identical_points_single_cluster(self):
        pts = np.zeros((20, 3))
        labels = dbscan_points(pts, eps=0.05, min_pts=5)
        assert np.all(labels == 0)

    def test_two_blobs_match_reference(self, rng):
        a = rng.normal(0, 0.02, size=(30, 3))
        b = rng.normal(0, 0.02, size=(30, 3)) + np.array([1.0, 0, 0])
        pts = np.vstack([a, b])
        labels = dbscan_points(pts, eps=0.1, min_pts=5)
        assert len(set(labels.tolist()) - {NOISE}) == 2
        assert partition_sets(labels) == partition_sets(naive_dbscan(pts, 0.1, 5))
        sk = SkDBSCAN(eps=0.1, min_samples=5).fit(pts).labels_
        assert partition_sets(labels) == partition_sets(sk)

    def test_matches_sklearn_on_random_blobs(self, rng):
        for trial in range(5):
            centers = rng.uniform(-5, 5, size=(4, 3))
            pts = np.vstack([c + rng.normal(0, 0.05, size=(25, 3)) for c in centers])
            labels = dbscan_points(pts, eps=0.3, min_pts=6)
            sk = SkDBSCAN(eps=0.3, min_samples=6).fit(pts).labels_
            assert partition_sets(labels) == partition_sets(sk)

    def test_memberships_stable_under_permutation(self, rng):
        a = rng.normal(0, 0.02, size=(25, 3))
        b = rng.normal(0, 0.02, size=(25, 3)) + np.array([2.0, 0, 0])
        pts = np.vstack([a, b])
        perm = rng.permutation(len(pts))
        base = partition_sets(dbscan_points(pts, 0.1, 5))
        permuted = dbscan_points(pts[perm], 0.1, 5)
        unperm = np.empty_like(permuted)
        unperm[perm] = permuted
        assert partition_sets(unperm) == base

    def test_bad_eps(self):
        with pytest.raises(NonPositiveEps):
            dbscan_points(np.zeros((3, 3)), eps=-1.0, min_pts=2)

    def test_largest_cluster_mask(self):
        labels = np.array([0, 0, 0, 1, 1, NOISE])
        assert largest_cluster_mask(labels).tolist() == [True, True, True, False, False, False]

    def test_precomputed_matches_points(self, rng):
        pts = np.vstack(
            [rng.normal(0, 0.02, size=(15, 3)), rng.normal(0, 0.02, size=(15, 3)) + 1.0]
        )
        dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        assert partition_sets(dbscan_precomputed(dist, 0.1, 5)) == partition_sets(
            dbscan_points(pts, 0.1, 5)
        )


class TestCosine:
    def test_parallel(self):
        assert cosine([1, 0], [2, 0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine([1, 0], [0, 3]) == pytest.approx(0.0)

    def test_zero_norm_raises(self):
        from octoscene.errors import ZeroNormFeature

        with pytest.raises(ZeroNormFeature):
            cosine([0, 0], [1, 0])
