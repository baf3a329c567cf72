"""Instance feature aggregation.

Each merged instance carries one (visual, caption) feature pair per source
view. Plain averaging dilutes distinctive views, and picking a single
dominant view discards evidence, so fusion here weights every view by how
representative it is of its own instance minus how much it resembles
neighboring instances:

    weight(view j of instance i) =
        cos(f_ij, center_i) - sum over neighbors k of cos(f_ij, center_k)

normalized with a softmax. Neighbors are instances whose visual centers are
at least neighbor_cos_threshold similar. The fused instance feature is the
weighted sum of views, and the final feature is visual + caption.

Before fusion the pool can be refined by re-projecting the instance into
every posed frame and asking a provider for fresh per-view features, and is
cleaned by keeping the densest feature cluster under cosine distance.

Fusion is a two-phase contract: all cluster centers are computed first, then
each instance fuses independently against that read-only table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cgsm import MergedSegment
from .config import PipelineConfig
from .errors import ZeroNormFeature
from .features import FeatureProvider, PassThroughProvider
from .geometry import dbscan_precomputed, largest_cluster_mask
from .ingest import SceneBundle


@dataclass
class PoolFeature:
    f_v: np.ndarray
    f_c: np.ndarray
    weight_debug: float | None = None


@dataclass
class FeaturePool:
    instance_id: int
    entries: list[PoolFeature]
    note: str | None = None

    @classmethod
    def from_instance(cls, instance: MergedSegment) -> "FeaturePool":
        return cls(
            instance_id=instance.id,
            entries=[PoolFeature(e.f_v, e.f_c) for e in instance.feature_pool],
        )


@dataclass
class FusedFeature:
    f_v_star: np.ndarray
    f_c_star: np.ndarray
    f_star: np.ndarray = field(init=False)

    def __post_init__(self):
        self.f_star = self.f_v_star + self.f_c_star


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ZeroNormFeature("zero-norm feature in pool")
    return mat / norms


def refine_pool(
    instance: MergedSegment,
    bundle: SceneBundle,
    provider: FeatureProvider,
    visibility_fraction: float = 0.3,
    depth_tolerance: float = 0.05,
) -> FeaturePool:
    """Re-project the instance into every posed frame and collect fresh
    per-view features for frames where it is sufficiently visible.

    A frame counts as visible when at least `visibility_fraction` of the
    instance's points project in front of the camera, inside the image, and
    (when the frame has a depth map) within `depth_tolerance` of the stored
    depth. With a pass-through provider, or when no frame qualifies, the pool
    from merging is returned unchanged.
    """
    base = FeaturePool.from_instance(instance)
    if isinstance(provider, PassThroughProvider):
        return base

    posed = [f for f in bundle.frames if f.pose is not None and f.intrinsics is not None and f.size]
    if not posed:
        return base

    pts = instance.points
    homo = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)
    entries: list[PoolFeature] = []
    for frame in posed:
        world_to_cam = np.linalg.inv(frame.pose)
        cam = homo @ world_to_cam.T
        x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
        fx, fy, cx, cy = frame.intrinsics
        width, height = frame.size
        valid = z > 1e-9
        u = np.where(valid, fx * x / np.where(valid, z, 1.0) + cx, -1.0)
        v = np.where(valid, fy * y / np.where(valid, z, 1.0) + cy, -1.0)
        inside = valid & (u >= 0) & (u < width) & (v >= 0) & (v < height)
        if frame.depth is not None and np.any(inside):
            ui = np.clip(u[inside].astype(int), 0, frame.depth.shape[1] - 1)
            vi = np.clip(v[inside].astype(int), 0, frame.depth.shape[0] - 1)
            agree = np.abs(frame.depth[vi, ui] - z[inside]) <= depth_tolerance
            visible_count = int(agree.sum())
        else:
            visible_count = int(inside.sum())
        if visible_count / pts.shape[0] < visibility_fraction:
            continue
        resp = provider.get(frame.t, instance.id)
        entries.append(PoolFeature(np.asarray(resp.f_v), np.asarray(resp.f_c)))

    if not entries:
        base.note = "no-visibility"
        return base
    return FeaturePool(instance_id=instance.id, entries=entries)


def major_cluster(pool: FeaturePool, eps: float, min_pts: int) -> FeaturePool:
    """Keep the densest cluster of visual features under cosine distance.

    If everything is labelled noise the full pool is returned, so a sparse
    pool never loses all its evidence.
    """
    if not pool.entries:
        raise ValueError("pool must be non-empty")
    if len(pool.entries) == 1:
        return pool
    units = _unit_rows(np.stack([e.f_v for e in pool.entries]).astype(np.float64))
    dist = 1.0 - units @ units.T
    np.fill_diagonal(dist, 0.0)
    labels = dbscan_precomputed(dist, eps, min_pts)
    keep = largest_cluster_mask(labels)
    if not keep.any():
        return pool
    entries = [e for e, k in zip(pool.entries, keep) if k]
    return FeaturePool(instance_id=pool.instance_id, entries=entries, note=pool.note)


def _fuse_side(
    feats: np.ndarray,
    own_center: np.ndarray,
    neighbor_centers: np.ndarray,
    temperature: float,
    neighbor_mean: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted fusion of one modality. Returns (fused, weights)."""
    units = _unit_rows(feats.astype(np.float64))
    own_norm = float(np.linalg.norm(own_center))
    if own_norm < 1e-12:
        raise ZeroNormFeature("zero-norm cluster center")
    raw = units @ (own_center / own_norm)
    if neighbor_centers.shape[0] > 0:
        neigh_units = _unit_rows(neighbor_centers)
        penalty = units @ neigh_units.T
        if neighbor_mean:
            raw = raw - penalty.mean(axis=1)
        else:
            raw = raw - penalty.sum(axis=1)
    if math.isinf(temperature):
        weights = np.full(len(raw), 1.0 / len(raw))
    else:
        scaled = raw / temperature
        scaled = scaled - scaled.max()  # shift-invariant
        exp = np.exp(scaled)
        weights = exp / exp.sum()
    fused = weights @ feats.astype(np.float64)
    return fused, weights


def fuse(
    pools: list[FeaturePool],
    neighbor_cos_threshold: float,
    temperature: float = 1.0,
    neighbor_mean: bool = False,
) -> list[FusedFeature]:
    """Fuse every instance's pool with dynamic weights.

    Phase one computes all visual/caption centers; phase two fuses each pool
    against the centers of its neighbors (instances whose visual centers are
    at least `neighbor_cos_threshold` similar). The neighbor set is computed
    on visual centers and reused for the caption side.
    """
    for pool in pools:
        if not pool.entries:
            raise ValueError(f"pool for instance {pool.instance_id} is empty")
    if not pools:
        return []

    centers_v = np.stack([np.mean([e.f_v for e in p.entries], axis=0) for p in pools]).astype(np.float64)
    centers_c = np.stack([np.mean([e.f_c for e in p.entries], axis=0) for p in pools]).astype(np.float64)
    units_v = _unit_rows(centers_v)
    sim = units_v @ units_v.T

    fused: list[FusedFeature] = []
    for i, pool in enumerate(pools):
        neighbors = [k for k in range(len(pools)) if k != i and sim[i, k] >= neighbor_cos_threshold]
        feats_v = np.stack([e.f_v for e in pool.entries])
        feats_c = np.stack([e.f_c for e in pool.entries])
        f_v_star, weights = _fuse_side(
            feats_v, centers_v[i], centers_v[neighbors], temperature, neighbor_mean
        )
        f_c_star, _ = _fuse_side(
            feats_c, centers_c[i], centers_c[neighbors], temperature, neighbor_mean
        )
        for entry, w in zip(pool.entries, weights):
            entry.weight_debug = float(w)
        fused.append(FusedFeature(f_v_star=f_v_star, f_c_star=f_c_star))
    return fused


def aggregate_instances(
    instances: list[MergedSegment],
    cfg: PipelineConfig,
    bundle: SceneBundle | None = None,
    provider: FeatureProvider | None = None,
) -> list[FusedFeature]:
    """Full aggregation pass: refine (optional), cluster, fuse."""
    provider = provider or PassThroughProvider()
    pools = []
    for inst in instances:
        if bundle is not None:
            pool = refine_pool(inst, bundle, provider, cfg.visibility_fraction, cfg.depth_tolerance)
        else:
            pool = FeaturePool.from_instance(inst)
        pools.append(major_cluster(pool, cfg.feature_cluster_eps, cfg.feature_cluster_min_pts))
    return fuse(pools, cfg.neighbor_cos_threshold, cfg.softmax_temperature, cfg.neighbor_mean_mode)
