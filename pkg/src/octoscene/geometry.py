"""Point-cloud primitives shared by the whole pipeline.

Clouds are (N, 3) float64 arrays in the world frame. Set operations between
clouds are computed on voxel keys (floor(coord / resolution) per axis), since
points lifted from different frames never coincide exactly. All functions are
pure and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyCloud, EmptyContained, NonPositiveEps, NonPositiveResolution

NOISE = -1  # cluster id assigned to noise points

VoxelKey = tuple[int, int, int]


def as_cloud(points) -> np.ndarray:
    """Coerce input to an (N, 3) float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected (N, 3) points, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box, closed on all faces."""

    b_min: tuple[float, float, float]
    b_max: tuple[float, float, float]

    def __post_init__(self):
        if any(lo > hi for lo, hi in zip(self.b_min, self.b_max)):
            raise ValueError(f"inverted box: {self.b_min} > {self.b_max}")

    @property
    def center(self) -> tuple[float, float, float]:
        return tuple((lo + hi) / 2.0 for lo, hi in zip(self.b_min, self.b_max))

    @property
    def extents(self) -> tuple[float, float, float]:
        return tuple(hi - lo for lo, hi in zip(self.b_min, self.b_max))

    def contains_point(self, p) -> bool:
        return all(lo <= c <= hi for lo, c, hi in zip(self.b_min, p, self.b_max))

    def contains_box(self, other: "Aabb", margin: float = 0.0) -> bool:
        return all(so >= lo - margin for so, lo in zip(other.b_min, self.b_min)) and all(
            sh <= hi + margin for sh, hi in zip(other.b_max, self.b_max)
        )

    def translated(self, offset) -> "Aabb":
        off = tuple(float(o) for o in offset)
        return Aabb(
            tuple(lo + o for lo, o in zip(self.b_min, off)),
            tuple(hi + o for hi, o in zip(self.b_max, off)),
        )


def aabb_of(cloud) -> Aabb:
    """Componentwise min/max box of a non-empty cloud."""
    pts = as_cloud(cloud)
    if pts.shape[0] == 0:
        raise EmptyCloud("aabb_of requires at least one point")
    return Aabb(tuple(pts.min(axis=0).tolist()), tuple(pts.max(axis=0).tolist()))


def voxelize(cloud, resolution: float) -> frozenset[VoxelKey]:
    """Occupied voxel keys of a cloud at the given cell size."""
    if resolution <= 0:
        raise NonPositiveResolution(f"resolution must be > 0, got {resolution}")
    pts = as_cloud(cloud)
    if pts.shape[0] == 0:
        return frozenset()
    keys = np.floor(pts / resolution).astype(np.int64)
    keys = np.unique(keys, axis=0)
    return frozenset(map(tuple, keys.tolist()))


def voxel_iou(a: frozenset[VoxelKey], b: frozenset[VoxelKey]) -> float:
    """Intersection over union of two voxel sets; 0 when both are empty."""
    if not a and not b:
        return 0.0
    inter = len(a & b)
    union = len(a) + len(b) - inter
    return inter / union


def voxel_ior(container: frozenset[VoxelKey], contained: frozenset[VoxelKey]) -> float:
    """Share of `contained` that lies inside `container`."""
    if not contained:
        raise EmptyContained("containment ratio needs a non-empty contained set")
    return len(container & contained) / len(contained)


def dbscan_points(cloud, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering of 3D points.

    Returns one cluster id per point; noise points get NOISE (-1). Standard
    semantics: core points (at least min_pts neighbors within eps, self
    included) form clusters as connected components of the core eps-graph;
    non-core points join the lowest-indexed core neighbor or stay noise.
    Cluster ids follow first appearance in point order, so identical inputs
    always label identically.
    """
    if eps <= 0:
        raise NonPositiveEps(f"eps must be > 0, got {eps}")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = as_cloud(cloud)
    n = pts.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels

    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    tree = cKDTree(pts)
    pairs = tree.query_pairs(eps, output_type="ndarray")  # i < j, d <= eps
    counts = np.ones(n, dtype=np.int64)  # every point neighbors itself
    if pairs.size:
        counts += np.bincount(pairs[:, 0], minlength=n)
        counts += np.bincount(pairs[:, 1], minlength=n)
    core = counts >= min_pts

    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return labels
    dense_id = np.full(n, -1, dtype=np.int64)
    dense_id[core_idx] = np.arange(core_idx.size)
    if pairs.size:
        cc_mask = core[pairs[:, 0]] & core[pairs[:, 1]]
        rows = dense_id[pairs[cc_mask, 0]]
        cols = dense_id[pairs[cc_mask, 1]]
    else:
        rows = cols = np.empty(0, dtype=np.int64)
    adjacency = csr_matrix(
        (np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(core_idx.size,) * 2
    )
    _, comp = connected_components(adjacency, directed=False)
    labels[core_idx] = comp

    # border points attach to their lowest-indexed core neighbor
    if pairs.size:
        border_edges = pairs[core[pairs[:, 0]] != core[pairs[:, 1]]]
        for i, j in border_edges[np.lexsort((border_edges[:, 1], border_edges[:, 0]))]:
            border, core_pt = (i, j) if core[j] else (j, i)
            if labels[border] == NOISE:
                labels[border] = labels[core_pt]

    # remap component ids to first-appearance order
    remap: dict[int, int] = {}
    for lab in labels:
        if lab != NOISE and lab not in remap:
            remap[int(lab)] = len(remap)
    return np.array([remap[int(l)] if l != NOISE else NOISE for l in labels], dtype=np.int64)


def dbscan_precomputed(dist: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering over a precomputed symmetric distance matrix.

    Used for small sets under non-Euclidean metrics (e.g. cosine distance
    between feature vectors). Same labelling convention as dbscan_points.
    """
    if eps <= 0:
        raise NonPositiveEps(f"eps must be > 0, got {eps}")
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    adjacency = dist <= eps
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        seeds = np.flatnonzero(adjacency[i])
        if seeds.size < min_pts:
            continue
        labels[i] = cluster
        queue = [j for j in seeds.tolist() if j != i]
        qpos = 0
        while qpos < len(queue):
            j = queue[qpos]
            qpos += 1
            if labels[j] == NOISE:
                labels[j] = cluster
            if visited[j]:
                continue
            visited[j] = True
            labels[j] = cluster
            j_seeds = np.flatnonzero(adjacency[j])
            if j_seeds.size >= min_pts:
                queue.extend(k for k in j_seeds.tolist() if not visited[k] or labels[k] == NOISE)
        cluster += 1
    return labels


def largest_cluster_mask(labels: np.ndarray) -> np.ndarray:
    """Boolean mask of the biggest non-noise cluster (ties: lowest id)."""
    labels = np.asarray(labels)
    valid = labels[labels != NOISE]
    if valid.size == 0:
        return np.zeros(labels.shape, dtype=bool)
    ids, counts = np.unique(valid, return_counts=True)
    best = ids[np.argmax(counts)]
    return labels == best


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors; raises on zero norm."""
    from .errors import ZeroNormFeature

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        raise ZeroNormFeature("cosine of a zero-norm vector")
    return float(a @ b) / (na * nb)
