from __future__ import annotations

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from octoscene.cgsm import (
    InstanceMap,
    MergedSegment,
    PoolEntry,
    SegmentGroup,
    filter_undersegments,
    merge_group,
    pairwise_similarity,
    run_cgsm,
    split_groups,
)
from octoscene.config import PipelineConfig
from octoscene.errors import NonPositiveInterval, ZeroNormFeature
from octoscene.generator import SceneSpec, generate
from octoscene.ingest import Segment, filter_and_build, load_bundle
from octoscene.geometry import voxelize

VOX = 0.025


def seg_from_cells(seg_id, cells, f_v, f_c=None, t=0, caption="obj"):
    """A Segment whose points sit at the centers of the given voxel cells."""
    pts = np.array([[(i + 0.5) * VOX, (j + 0.5) * VOX, (k + 0.5) * VOX] for i, j, k in cells])
    f_v = np.asarray(f_v, dtype=np.float64)
    f_c = f_v if f_c is None else np.asarray(f_c, dtype=np.float64)
    return Segment(
        id=seg_id, t=t, points=pts, voxels=voxelize(pts, VOX), f_v=f_v, f_c=f_c, caption=caption
    )


def merged_from_cells(seg_id, cells, f_v, f_c=None, t=0):
    return MergedSegment.from_segment(seg_from_cells(seg_id, cells, f_v, f_c, t))


def row_cells(lo, hi):
    return [(i, 0, 0) for i in range(lo, hi)]


def partition(imap: InstanceMap) -> set[frozenset[int]]:
    return {inst.source_segment_ids for inst in imap.instances}


class TestSplitGroups:
    def test_interval_200(self):
        segments = [seg_from_cells(i, [(i, 0, 0)], [1.0, 0.0], t=t) for i, t in enumerate(range(400))]
        groups = split_groups(segments, 200)
        assert len(groups) == 2
        assert all(0 <= m.feature_pool[0].source_id < 200 for m in groups[0].members)
        assert len(groups[0].members) == 200 and len(groups[1].members) == 200

    def test_large_interval_single_group(self):
        segments = [seg_from_cells(i, [(i, 0, 0)], [1.0, 0.0], t=i) for i in range(5)]
        assert len(split_groups(segments, 100)) == 1

    def test_interval_one_per_frame(self):
        segments = [seg_from_cells(i, [(i, 0, 0)], [1.0, 0.0], t=i) for i in range(5)]
        groups = split_groups(segments, 1)
        assert len(groups) == 5
        assert all(len(g.members) == 1 for g in groups)

    def test_bad_interval(self):
        with pytest.raises(NonPositiveInterval):
            split_groups([], 0)


class TestPairwiseSimilarity:
    def test_self_similarity(self):
        a = merged_from_cells(0, row_cells(0, 8), [1.0, 0.0])
        terms = pairwise_similarity(a, a)
        assert terms == pytest.approx((1, 1, 1, 1, 1, 4.0))

    def test_disjoint_orthogonal(self):
        a = merged_from_cells(0, row_cells(0, 4), [1.0, 0.0])
        b = merged_from_cells(1, row_cells(100, 104), [0.0, 1.0])
        terms = pairwise_similarity(a, b)
        assert terms.phi_total == pytest.approx(0.0)

    def test_worked_example(self):
        # 8 cells each, 4 shared; visual cosine 0.9, caption cosine 0.7
        a = merged_from_cells(0, row_cells(0, 8), [1.0, 0.0], f_c=[1.0, 0.0])
        b = merged_from_cells(
            1, row_cells(4, 12), [0.9, np.sqrt(1 - 0.81)], f_c=[0.7, np.sqrt(1 - 0.49)]
        )
        terms = pairwise_similarity(a, b)
        assert terms.phi_iou == pytest.approx(4 / 12)
        assert terms.phi_ior_ab == pytest.approx(0.5)
        assert terms.phi_ior_ba == pytest.approx(0.5)
        assert terms.phi_sem_v == pytest.approx(0.9)
        assert terms.phi_sem_c == pytest.approx(0.7)
        assert terms.phi_total == pytest.approx(4 / 12 + 0.5 + 0.9 + 0.7)

    def test_zero_norm_feature(self):
        a = merged_from_cells(0, row_cells(0, 2), [0.0, 0.0])
        with pytest.raises(ZeroNormFeature):
            pairwise_similarity(a, a)

    def test_empty_voxels_rejected(self):
        from octoscene.errors import EmptyVoxels

        a = merged_from_cells(0, row_cells(0, 2), [1.0, 0.0])
        b = merged_from_cells(1, [], [1.0, 0.0])
        with pytest.raises(EmptyVoxels):
            pairwise_similarity(a, b)


class TestUndersegmentFilter:
    def build_case(self, sims):
        """An m containing two small segments with chosen visual cosines."""
        j1 = merged_from_cells(1, [(0, 0, 0), (1, 0, 0)], [sims[0], np.sqrt(1 - sims[0] ** 2)])
        j2 = merged_from_cells(2, [(5, 0, 0), (6, 0, 0)], [sims[1], np.sqrt(1 - sims[1] ** 2)])
        m_cells = [(i, 0, 0) for i in range(8)]
        m = merged_from_cells(0, m_cells, [1.0, 0.0])
        return m, j1, j2

    def test_diverse_contents_removed(self):
        m, j1, j2 = self.build_case([0.9, 0.4])
        kept, removed = filter_undersegments([m, j1, j2], variance_threshold=0.01)
        assert [x.id for x in removed] == [0]
        assert {x.id for x in kept} == {1, 2}

    def test_uniform_contents_kept(self):
        m, j1, j2 = self.build_case([0.85, 0.87])
        kept, removed = filter_undersegments([m, j1, j2], variance_threshold=0.01)
        assert removed == []
        assert len(kept) == 3

    def test_population_variance_is_used(self):
        # population variance of {0.9, 0.4} is exactly 0.0625; the sample
        # variance would be 0.125, so a threshold between them separates the two
        m, j1, j2 = self.build_case([0.9, 0.4])
        _, removed = filter_undersegments([m, j1, j2], variance_threshold=0.09)
        assert removed == []
        _, removed = filter_undersegments([m, j1, j2], variance_threshold=0.0625)
        assert [x.id for x in removed] == [0]

    def test_single_containment_kept(self):
        j1 = merged_from_cells(1, [(0, 0, 0)], [0.2, 0.98])
        m = merged_from_cells(0, [(0, 0, 0), (1, 0, 0), (2, 0, 0)], [1.0, 0.0])
        kept, removed = filter_undersegments([m, j1], variance_threshold=0.01)
        assert removed == []

    def test_empty_group(self):
        assert filter_undersegments([], 0.01) == ([], [])


def cfg_for_merge(theta_start=2.4, theta_end=1.6, steps=5):
    return PipelineConfig(
        merge_theta_start=theta_start, merge_theta_end=theta_end, merge_decay_steps=steps
    )


class TestMergeGroup:
    def test_identical_pair_merges(self):
        a = merged_from_cells(0, row_cells(0, 8), [1.0, 0.0])
        b = merged_from_cells(1, row_cells(0, 8), [1.0, 0.0])
        out = merge_group([], SegmentGroup(0, [a, b]), cfg_for_merge())
        assert len(out) == 1
        assert out[0].source_segment_ids == frozenset({0, 1})
        assert out[0].id == 0

    def test_unrelated_pair_never_merges(self):
        a = merged_from_cells(0, row_cells(0, 4), [1.0, 0.0])
        b = merged_from_cells(1, row_cells(50, 54), [0.0, 1.0])
        out = merge_group([], SegmentGroup(0, [a, b]), cfg_for_merge())
        assert len(out) == 2

    def test_three_oversegments_merge_under_decay(self):
        # two adjacent pairs score 2.1, the far pair 1.7; with the decaying
        # schedule 2.4 -> 1.6 all three join one instance
        gram = np.array(
            [
                [1.0, 0.853571428571429, 0.85],
                [0.853571428571429, 1.0, 0.853571428571429],
                [0.85, 0.853571428571429, 1.0],
            ]
        )
        vecs = np.linalg.cholesky(gram)
        a = merged_from_cells(0, row_cells(0, 8), vecs[0])
        b = merged_from_cells(1, row_cells(6, 14), vecs[1])
        c = merged_from_cells(2, row_cells(12, 20), vecs[2])
        t_ab = pairwise_similarity(a, b).phi_total
        t_bc = pairwise_similarity(b, c).phi_total
        t_ac = pairwise_similarity(a, c).phi_total
        assert t_ab == pytest.approx(2.1, abs=1e-9)
        assert t_bc == pytest.approx(2.1, abs=1e-9)
        assert t_ac == pytest.approx(1.7, abs=1e-9)
        out = merge_group([], SegmentGroup(0, [a, b, c]), cfg_for_merge())
        assert len(out) == 1
        assert out[0].source_segment_ids == frozenset({0, 1, 2})

    def test_fixed_threshold_blocks_oversegments(self):
        # same construction, but a single fixed pass at 2.4 merges nothing
        gram = np.array(
            [
                [1.0, 0.853571428571429, 0.85],
                [0.853571428571429, 1.0, 0.853571428571429],
                [0.85, 0.853571428571429, 1.0],
            ]
        )
        vecs = np.linalg.cholesky(gram)
        a = merged_from_cells(0, row_cells(0, 8), vecs[0])
        b = merged_from_cells(1, row_cells(6, 14), vecs[1])
        c = merged_from_cells(2, row_cells(12, 20), vecs[2])
        out = merge_group([], SegmentGroup(0, [a, b, c]), cfg_for_merge(2.4, 2.4, 1))
        assert len(out) == 3

    def test_single_pass_matches_pairwise_similarity(self, rng):
        # one pass at a fixed threshold must union exactly the pairs that the
        # public similarity scores at or above it
        theta = 2.0
        items = []
        for idx in range(8):
            lo = int(rng.integers(0, 30))
            cells = row_cells(lo, lo + int(rng.integers(2, 8)))
            vec = rng.normal(size=3)
            vec /= np.linalg.norm(vec)
            items.append(merged_from_cells(idx, cells, np.abs(vec)))
        expected_parent = list(range(8))

        def find(x):
            while expected_parent[x] != x:
                x = expected_parent[x]
            return x

        for i in range(8):
            for j in range(i + 1, 8):
                if pairwise_similarity(items[i], items[j]).phi_total >= theta:
                    ri, rj = find(i), find(j)
                    if ri != rj:
                        expected_parent[max(ri, rj)] = min(ri, rj)
        expected = {}
        for i in range(8):
            expected.setdefault(find(i), set()).add(i)
        expected_sets = {frozenset(v) for v in expected.values()}

        out = merge_group(
            [],
            SegmentGroup(0, [MergedSegment.from_segment(seg_from_cells(m.id, [], [1, 0])) if False else m for m in items]),
            cfg_for_merge(theta, theta, 1),
        )
        got_sets = {frozenset(m.source_segment_ids) for m in out}
        assert got_sets == expected_sets


def scene_cfg():
    return PipelineConfig(group_interval=2, merge_theta_start=2.4, merge_theta_end=1.6,
                          merge_decay_steps=5, seed=3)


def load_scene(tmp_path, **kwargs):
    spec = SceneSpec(**kwargs)
    manifest = tmp_path / "scene.manifest"
    truth = generate(spec, manifest)
    bundle = load_bundle(manifest)
    segments = filter_and_build(bundle, scene_cfg())
    return truth, segments


class TestRunCgsm:
    def test_single_segment(self, rng):
        seg = seg_from_cells(0, row_cells(0, 5), [1.0, 0.0])
        imap = run_cgsm([seg], scene_cfg())
        assert len(imap.instances) == 1
        assert np.array_equal(imap.instances[0].points, seg.points)

    def test_two_object_scene_matches_truth(self, tmp_path):
        truth, segments = load_scene(
            tmp_path, objects=2, shapes=("box",), frames=6, splits=2, seed=5
        )
        imap = run_cgsm(segments, scene_cfg())
        assert len(imap.instances) == 2
        truth_by_id = {s.segment_id: s.object_id for s in truth.segments}
        for inst in imap.instances:
            owners = {truth_by_id[sid] for sid in inst.source_segment_ids}
            assert len(owners) == 1

    def test_planted_undersegment_removed(self, tmp_path):
        truth, segments = load_scene(
            tmp_path, objects=2, shapes=("box",), frames=4, splits=1,
            under_segment_rate=0.5, seed=11,
        )
        planted = {s.segment_id for s in truth.segments if s.under_segment}
        assert planted
        imap = run_cgsm(segments, scene_cfg())
        assert planted <= imap.removed_segment_ids
        assert len(imap.instances) == 2

    def test_point_conservation(self, tmp_path):
        truth, segments = load_scene(
            tmp_path, objects=4, shapes=("box",), frames=4, splits=2,
            under_segment_rate=0.25, seed=2,
        )
        imap = run_cgsm(segments, scene_cfg())
        surviving = [s for s in segments if s.id not in imap.removed_segment_ids]
        expected = np.concatenate([s.points for s in surviving])
        got = np.concatenate([inst.points for inst in imap.instances])
        assert got.shape == expected.shape
        order_g = np.lexsort(got.T)
        order_e = np.lexsort(expected.T)
        assert np.array_equal(got[order_g], expected[order_e])

    def test_partition_covers_surviving_ids(self, tmp_path):
        _, segments = load_scene(tmp_path, objects=3, shapes=("box",), frames=4, splits=2, seed=9)
        imap = run_cgsm(segments, scene_cfg())
        all_ids = {s.id for s in segments} - set(imap.removed_segment_ids)
        seen: set[int] = set()
        for inst in imap.instances:
            assert not (seen & inst.source_segment_ids)
            seen |= inst.source_segment_ids
        assert seen == all_ids

    def test_determinism(self, tmp_path):
        _, segments = load_scene(tmp_path, objects=4, shapes=("box", "rod"), frames=4, splits=2, seed=13)
        a = run_cgsm(segments, scene_cfg())
        b = run_cgsm(segments, scene_cfg())
        assert partition(a) == partition(b)
        for x, y in zip(a.instances, b.instances):
            assert np.array_equal(x.points, y.points)

    def test_ari_against_truth(self, tmp_path):
        truth, segments = load_scene(
            tmp_path, objects=6, shapes=("box",), frames=6, splits=2,
            under_segment_rate=0.2, seed=21,
        )
        imap = run_cgsm(segments, scene_cfg())
        truth_by_id = {s.segment_id: s.object_id for s in truth.segments}
        ids = sorted(
            sid for inst in imap.instances for sid in inst.source_segment_ids
            if truth_by_id.get(sid) is not None
        )
        label_true = [truth_by_id[sid] for sid in ids]
        inst_of = {sid: k for k, inst in enumerate(imap.instances) for sid in inst.source_segment_ids}
        label_pred = [inst_of[sid] for sid in ids]
        assert adjusted_rand_score(label_true, label_pred) >= 0.9


class TestDegeneracyEquivalence:
    def test_interval_one_equals_framewise(self, tmp_path):
        _, segments = load_scene(tmp_path, objects=3, shapes=("box",), frames=5, splits=2, seed=17)
        cfg = scene_cfg()
        cfg.group_interval = 1
        via_fold = run_cgsm(segments, cfg)

        # frame-wise reference: explicit sequential per-frame merging
        current = []
        removals = []
        for t in sorted({s.t for s in segments}):
            members = [MergedSegment.from_segment(s) for s in segments if s.t == t]
            current = merge_group(current, SegmentGroup(t, members), cfg, removals=removals)
        assert partition(via_fold) == {m.source_segment_ids for m in current}

    def test_large_interval_equals_global(self, tmp_path):
        _, segments = load_scene(tmp_path, objects=3, shapes=("box",), frames=5, splits=2, seed=19)
        cfg = scene_cfg()
        cfg.group_interval = max(s.t for s in segments) + 1
        via_fold = run_cgsm(segments, cfg)

        members = [MergedSegment.from_segment(s) for s in segments]
        global_once = merge_group([], SegmentGroup(0, members), cfg)
        assert partition(via_fold) == {m.source_segment_ids for m in global_once}

    def test_lower_theta_end_only_coarsens(self, tmp_path):
        _, segments = load_scene(tmp_path, objects=4, shapes=("box",), frames=4, splits=3, seed=23)
        cfg_hi = scene_cfg()
        cfg_lo = scene_cfg()
        cfg_lo.merge_theta_end = 1.2
        fine = run_cgsm(segments, cfg_hi)
        coarse = run_cgsm(segments, cfg_lo)
        coarse_sets = [inst.source_segment_ids for inst in coarse.instances]
        for inst in fine.instances:
            assert any(inst.source_segment_ids <= cs for cs in coarse_sets)
