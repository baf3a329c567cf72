"""Chronological group-wise segment merging.

Segments are split into temporal groups of `group_interval` frames. Groups
are folded in order: the running instance map is pooled with the next group,
obvious under-segments (one proposal spatially containing several semantically
diverse proposals) are removed, and the rest are merged greedily over several
passes while the acceptance threshold decays linearly from merge_theta_start
to merge_theta_end. The decay lets clean duplicates merge early and spatially
disjoint over-segments of one object (which share semantics but little
overlap) merge late, without ever joining unrelated objects.

Pair similarity is the sum of four terms in [0, 1]:

    iou(voxels)  +  max directed containment  +  cos(visual)  +  cos(caption)

where the semantic terms compare the arithmetic means of each side's pooled
per-view features. Groups must be folded sequentially; similarity evaluation
within a pass is read-only and parallelizable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .config import PipelineConfig
from .errors import EmptyVoxels, NonPositiveInterval, ZeroNormFeature
from .geometry import VoxelKey, voxel_iou, voxel_ior
from .ingest import Segment


@dataclass
class PoolEntry:
    f_v: np.ndarray
    f_c: np.ndarray
    caption: str
    source_id: int


@dataclass
class MergedSegment:
    id: int
    source_segment_ids: frozenset[int]
    points: np.ndarray
    voxels: frozenset[VoxelKey]
    feature_pool: list[PoolEntry]

    @classmethod
    def from_segment(cls, seg: Segment) -> "MergedSegment":
        return cls(
            id=seg.id,
            source_segment_ids=frozenset([seg.id]),
            points=seg.points,
            voxels=seg.voxels,
            feature_pool=[PoolEntry(seg.f_v, seg.f_c, seg.caption, seg.id)],
        )

    def mean_visual(self) -> np.ndarray:
        return np.mean([e.f_v for e in self.feature_pool], axis=0)

    def mean_caption(self) -> np.ndarray:
        return np.mean([e.f_c for e in self.feature_pool], axis=0)

    def majority_caption(self) -> str:
        # most frequent caption; ties go to the earliest source segment
        order: list[str] = []
        counts: dict[str, int] = {}
        for entry in sorted(self.feature_pool, key=lambda e: e.source_id):
            if entry.caption not in counts:
                order.append(entry.caption)
            counts[entry.caption] = counts.get(entry.caption, 0) + 1
        return max(order, key=lambda c: counts[c])

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)


@dataclass
class SegmentGroup:
    index: int
    members: list[MergedSegment]


@dataclass
class InstanceMap:
    instances: list[MergedSegment]
    removed_segment_ids: frozenset[int] = frozenset()


class SimilarityTerms(NamedTuple):
    phi_iou: float
    phi_ior_ab: float
    phi_ior_ba: float
    phi_sem_v: float
    phi_sem_c: float
    phi_total: float


def split_groups(segments: list[Segment], interval: int) -> list[SegmentGroup]:
    """Group segments by frame index: group i covers t in [i*I, (i+1)*I)."""
    if interval < 1:
        raise NonPositiveInterval(f"interval must be >= 1, got {interval}")
    if not segments:
        return []
    n_groups = max(s.t for s in segments) // interval + 1
    groups = [SegmentGroup(i, []) for i in range(n_groups)]
    for seg in segments:
        groups[seg.t // interval].members.append(MergedSegment.from_segment(seg))
    return groups


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise ZeroNormFeature("pooled feature has zero norm")
    return np.asarray(v, dtype=np.float64) / norm


def pairwise_similarity(a: MergedSegment, b: MergedSegment) -> SimilarityTerms:
    """All similarity terms between two merged segments."""
    if not a.voxels or not b.voxels:
        raise EmptyVoxels("similarity needs non-empty voxel sets")
    if not a.feature_pool or not b.feature_pool:
        raise ZeroNormFeature("similarity needs non-empty feature pools")
    iou = voxel_iou(a.voxels, b.voxels)
    ior_ab = voxel_ior(a.voxels, b.voxels)
    ior_ba = voxel_ior(b.voxels, a.voxels)
    sem_v = float(_unit(a.mean_visual()) @ _unit(b.mean_visual()))
    sem_c = float(_unit(a.mean_caption()) @ _unit(b.mean_caption()))
    total = iou + max(ior_ab, ior_ba) + sem_v + sem_c
    return SimilarityTerms(iou, ior_ab, ior_ba, sem_v, sem_c, total)


def filter_undersegments(
    group: list[MergedSegment], variance_threshold: float, containment_ratio: float = 0.8
) -> tuple[list[MergedSegment], list[MergedSegment]]:
    """Drop segments that spatially contain several semantically diverse ones.

    A segment m is removed iff at least two others are contained in it
    (directed voxel overlap >= containment_ratio) and the population variance
    of m's visual similarity to those contained segments reaches the
    threshold. Returns (kept, removed).
    """
    n = len(group)
    if n == 0:
        return [], []
    units = np.stack([_unit(m.mean_visual()) for m in group])
    removed_idx: set[int] = set()
    for mi, m in enumerate(group):
        contained = [
            ji
            for ji, j in enumerate(group)
            if ji != mi and j.voxels and voxel_ior(m.voxels, j.voxels) >= containment_ratio
        ]
        if len(contained) < 2:
            continue
        sims = units[contained] @ units[mi]
        if float(np.var(sims)) >= variance_threshold:
            removed_idx.add(mi)
    kept = [m for i, m in enumerate(group) if i not in removed_idx]
    removed = [m for i, m in enumerate(group) if i in removed_idx]
    return kept, removed


def _fuse_members(members: list[MergedSegment]) -> MergedSegment:
    members = sorted(members, key=lambda m: m.id)
    points = np.concatenate([m.points for m in members], axis=0)
    voxels = frozenset().union(*[m.voxels for m in members])
    pool: list[PoolEntry] = []
    for m in members:
        pool.extend(m.feature_pool)
    pool.sort(key=lambda e: e.source_id)
    return MergedSegment(
        id=min(m.id for m in members),
        source_segment_ids=frozenset().union(*[m.source_segment_ids for m in members]),
        points=points,
        voxels=voxels,
        feature_pool=pool,
    )


def _bbox_of_voxels(voxels: frozenset[VoxelKey]) -> tuple:
    arr = np.array(list(voxels))
    return tuple(arr.min(axis=0)) + tuple(arr.max(axis=0))


def merge_group(
    current: list[MergedSegment],
    incoming: SegmentGroup,
    cfg: PipelineConfig,
    removals: list[MergedSegment] | None = None,
) -> list[MergedSegment]:
    """One fold step: pool current instances with a group and merge.

    Under-segment filtering runs once on the pooled list; then
    cfg.merge_decay_steps passes run with thresholds decaying linearly from
    merge_theta_start to merge_theta_end (a single pass uses theta_end).
    Within a pass, every pair scoring at least the pass threshold is merged
    greedily in descending score order under union-find; merged results are
    re-scored before the next pass. Ties are broken by the (min id, max id)
    pair, so the outcome is deterministic.
    """
    items, removed = filter_undersegments(
        current + incoming.members, cfg.undersegment_variance, cfg.containment_ratio
    )
    if removals is not None:
        removals.extend(removed)

    steps = cfg.merge_decay_steps
    for k in range(steps):
        if steps == 1:
            theta = cfg.merge_theta_end
        else:
            theta = cfg.merge_theta_start - k * (cfg.merge_theta_start - cfg.merge_theta_end) / (steps - 1)
        if len(items) < 2:
            break

        units_v = np.stack([_unit(m.mean_visual()) for m in items])
        units_c = np.stack([_unit(m.mean_caption()) for m in items])
        sem_v = units_v @ units_v.T
        sem_c = units_c @ units_c.T
        boxes = [_bbox_of_voxels(m.voxels) for m in items]

        candidates = []
        for i in range(len(items)):
            for j in range(i + 1, len(items)):
                sem = float(sem_v[i, j] + sem_c[i, j])
                # geometric terms are zero when the voxel bboxes are disjoint
                bi, bj = boxes[i], boxes[j]
                disjoint = any(bi[3 + ax] < bj[ax] or bj[3 + ax] < bi[ax] for ax in range(3))
                if disjoint:
                    geo = 0.0
                else:
                    inter = len(items[i].voxels & items[j].voxels)
                    if inter == 0:
                        geo = 0.0
                    else:
                        union = len(items[i].voxels) + len(items[j].voxels) - inter
                        geo = inter / union + max(
                            inter / len(items[j].voxels), inter / len(items[i].voxels)
                        )
                total = geo + sem
                if total >= theta:
                    candidates.append((total, items[i].id, items[j].id, i, j))

        if not candidates:
            continue
        candidates.sort(key=lambda c: (-c[0], min(c[1], c[2]), max(c[1], c[2])))

        parent = list(range(len(items)))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        merged_any = False
        for _, _, _, i, j in candidates:
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
                merged_any = True
        if not merged_any:
            continue

        clusters: dict[int, list[MergedSegment]] = {}
        for idx, item in enumerate(items):
            clusters.setdefault(find(idx), []).append(item)
        items = [
            members[0] if len(members) == 1 else _fuse_members(members)
            for _, members in sorted(clusters.items())
        ]
        items.sort(key=lambda m: m.id)
    return sorted(items, key=lambda m: m.id)


def run_cgsm(segments: list[Segment], cfg: PipelineConfig) -> InstanceMap:
    """Fold merge_group over all chronological groups."""
    groups = split_groups(segments, cfg.group_interval)
    removals: list[MergedSegment] = []
    current: list[MergedSegment] = []
    for group in groups:
        current = merge_group(current, group, cfg, removals=removals)
    removed_ids = frozenset().union(*[m.source_segment_ids for m in removals]) if removals else frozenset()
    return InstanceMap(instances=sorted(current, key=lambda m: m.id), removed_segment_ids=removed_ids)
