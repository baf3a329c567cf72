"""Per-object adaptive octrees with per-axis node extents.

A classic octree roots at a cube and halves it per axis, so elongated objects
waste most of each cell. Here the root box instead takes the cloud's own
per-axis extents (plus a small margin so boundary points stay strictly
inside), and every descendant inherits the non-cubic aspect:

    extents(depth l) = (b_max - b_min + 2 * margin) / 2**l
    center(child)    = center(parent) + extents(child) * direction / 2

with direction in {-1, +1}^3 selecting one of the eight octants. A node is
subdivided while it holds points and is above max_depth; a max-depth node
with enough points becomes an occupied leaf. Empty children are not stored.

Trees are immutable after build; queries are safe under concurrent readers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, NoOccupiedLeaves
from .geometry import Aabb, aabb_of, as_cloud

# child index bits: 4*x + 2*y + z, bit set means +1 direction on that axis
_CHILD_DIRS = [
    tuple(1.0 if (code >> shift) & 1 else -1.0 for shift in (2, 1, 0)) for code in range(8)
]


@dataclass
class OctreeNode:
    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    depth: int
    occupied: bool = False
    children: dict[int, "OctreeNode"] = field(default_factory=dict)
    # cached guard-banded closed bounds, derived from center/half_extents
    _lo: tuple[float, float, float] | None = field(
        default=None, repr=False, compare=False
    )
    _hi: tuple[float, float, float] | None = field(
        default=None, repr=False, compare=False
    )

    def bounds(self) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
        """Closed query bounds with a relative guard band (~1e-12 of the
        coordinate scale) that absorbs the few-ULP drift child centers
        accumulate over subdivisions, so points lying exactly on a split
        plane never fall between children."""
        if self._lo is None:
            cx, cy, cz = self.center
            hx, hy, hz = self.half_extents
            tx = 1e-12 * (abs(cx) + hx + 1.0)
            ty = 1e-12 * (abs(cy) + hy + 1.0)
            tz = 1e-12 * (abs(cz) + hz + 1.0)
            self._lo = (cx - hx - tx, cy - hy - ty, cz - hz - tz)
            self._hi = (cx + hx + tx, cy + hy + ty, cz + hz + tz)
        return self._lo, self._hi

    def contains(self, p) -> bool:
        """Closed-box membership: faces belong to the node."""
        lo, hi = self.bounds()
        return (
            lo[0] <= p[0] <= hi[0]
            and lo[1] <= p[1] <= hi[1]
            and lo[2] <= p[2] <= hi[2]
        )

    @property
    def volume(self) -> float:
        hx, hy, hz = self.half_extents
        return 8.0 * hx * hy * hz

    def box(self) -> Aabb:
        return Aabb(
            tuple(c - h for c, h in zip(self.center, self.half_extents)),
            tuple(c + h for c, h in zip(self.center, self.half_extents)),
        )


@dataclass
class AdaptiveOctree:
    root: OctreeNode
    bbox: Aabb            # of the input cloud, before margin expansion
    expand_margin: float
    max_depth: int
    point_count: int
    mode: str             # "adaptive" or "classic"

    def occupied_leaves(self) -> list[OctreeNode]:
        out: list[OctreeNode] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.occupied and not node.children:
                out.append(node)
            stack.extend(node.children.values())
        return out

    def node_count(self) -> int:
        count = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            count += 1
            stack.extend(node.children.values())
        return count


@dataclass
class EorReport:
    """Monte Carlo estimate of how much of the tree's occupied volume
    actually overlaps the dilated point cloud."""

    eor: float
    octree_volume: float
    intersection_volume: float
    sample_count: int


def build(
    cloud,
    max_depth: int,
    expand_margin: float,
    mode: str = "adaptive",
    min_leaf_points: int = 1,
    prune_full_nodes: bool = False,
) -> AdaptiveOctree:
    """Build an octree over a non-empty cloud.

    mode="adaptive" roots at the cloud's per-axis box; mode="classic" roots at
    a cube whose side is the largest extent. Both expand by `expand_margin`
    per axis so points on the box boundary stay inside.
    """
    pts = as_cloud(cloud)
    if pts.shape[0] == 0:
        raise EmptyCloud("cannot build an octree over an empty cloud")
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if mode not in ("adaptive", "classic"):
        raise ValueError(f"unknown mode {mode!r}")

    bbox = aabb_of(pts)
    center = np.array(bbox.center, dtype=np.float64)
    if mode == "adaptive":
        extents = np.array(bbox.extents, dtype=np.float64) + 2.0 * expand_margin
    else:
        side = max(bbox.extents) + 2.0 * expand_margin
        extents = np.full(3, side, dtype=np.float64)

    def make_node(pts_in: np.ndarray, ctr: np.ndarray, ext: np.ndarray, depth: int) -> OctreeNode | None:
        if depth == max_depth:
            if pts_in.shape[0] < min_leaf_points:
                return None
            return OctreeNode(tuple(ctr.tolist()), tuple((ext / 2.0).tolist()), depth, occupied=True)
        node = OctreeNode(tuple(ctr.tolist()), tuple((ext / 2.0).tolist()), depth)
        child_ext = ext / 2.0
        # octant code per point: bit set where the coordinate is >= center
        codes = ((pts_in >= ctr) * np.array([4, 2, 1])).sum(axis=1)
        for code in np.unique(codes):
            sub = pts_in[codes == code]
            direction = np.array(_CHILD_DIRS[int(code)])
            child_ctr = ctr + child_ext * direction / 2.0
            child = make_node(sub, child_ctr, child_ext, depth + 1)
            if child is not None:
                node.children[int(code)] = child
        if not node.children:
            return None
        if prune_full_nodes and len(node.children) == 8 and all(
            c.occupied and not c.children for c in node.children.values()
        ):
            node.children.clear()
            node.occupied = True
        return node

    root = make_node(pts, center, extents, 0)
    if root is None:
        # only possible when min_leaf_points exceeds the cloud size
        root = OctreeNode(tuple(center.tolist()), tuple((extents / 2.0).tolist()), 0)
    return AdaptiveOctree(
        root=root,
        bbox=bbox,
        expand_margin=expand_margin,
        max_depth=max_depth,
        point_count=int(pts.shape[0]),
        mode=mode,
    )


def is_occupied(tree: AdaptiveOctree, p) -> bool:
    """Occupancy query: descend into every child whose (closed) box contains
    the point, stopping at the first occupied node. A point on a shared face
    may lie in two children; both are tried.
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    stack = [tree.root]
    while stack:
        node = stack.pop()
        lo, hi = node.bounds()
        if not (lo[0] <= x <= hi[0] and lo[1] <= y <= hi[1] and lo[2] <= z <= hi[2]):
            continue
        if node.occupied:
            return True
        stack.extend(node.children.values())
    return False


def eor(tree: AdaptiveOctree, cloud, dilation_radius: float, samples: int, seed: int = 0) -> EorReport:
    """Effective occupancy ratio: occupied-leaf volume that falls within
    `dilation_radius` of the cloud, over total occupied-leaf volume.

    Estimated by seeded Monte Carlo: samples are drawn uniformly over the
    union of occupied leaf boxes (volume-weighted) and tested against the
    dilated cloud with a KD-tree.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    leaves = tree.occupied_leaves()
    if not leaves:
        raise NoOccupiedLeaves("tree has no occupied leaves")
    pts = as_cloud(cloud)
    if pts.shape[0] == 0:
        raise EmptyCloud("eor needs the source cloud")

    centers = np.array([leaf.center for leaf in leaves])
    halves = np.array([leaf.half_extents for leaf in leaves])
    volumes = np.prod(2.0 * halves, axis=1)
    total_volume = float(volumes.sum())

    rng = np.random.default_rng(seed)
    cum = np.cumsum(volumes)
    picks = np.searchsorted(cum, rng.random(samples) * cum[-1], side="right")
    picks = np.minimum(picks, len(leaves) - 1)
    offsets = rng.random((samples, 3)) * 2.0 - 1.0
    sample_pts = centers[picks] + offsets * halves[picks]

    kd = cKDTree(pts)
    dist, _ = kd.query(sample_pts, k=1, distance_upper_bound=dilation_radius * 1.001)
    hits = int(np.count_nonzero(dist <= dilation_radius))
    ratio = hits / samples
    return EorReport(
        eor=ratio,
        octree_volume=total_volume,
        intersection_volume=ratio * total_volume,
        sample_count=samples,
    )


def serialize_tree(tree: AdaptiveOctree) -> bytes:
    """Canonical binary form of one tree; used standalone and inside graph
    files. Layout: header (bbox f64[6], margin f64, max_depth u8, mode u8,
    point_count u32, node_count u32) then preorder node records of
    depth u8 | center f64[3] | half_extents f64[3] | flags u8 | child_mask u8.
    """
    import struct

    records: list[bytes] = []

    def walk(node: OctreeNode):
        mask = 0
        for code in node.children:
            mask |= 1 << code
        flags = 1 if node.occupied else 0
        records.append(
            struct.pack(
                "<B3d3dBB",
                node.depth,
                *node.center,
                *node.half_extents,
                flags,
                mask,
            )
        )
        for code in sorted(node.children):
            walk(node.children[code])

    walk(tree.root)
    header = struct.pack(
        "<6ddBBII",
        *tree.bbox.b_min,
        *tree.bbox.b_max,
        tree.expand_margin,
        tree.max_depth,
        0 if tree.mode == "adaptive" else 1,
        tree.point_count,
        len(records),
    )
    return header + b"".join(records)


def deserialize_tree(data: bytes, offset: int = 0) -> tuple[AdaptiveOctree, int]:
    """Inverse of serialize_tree. Returns (tree, next offset)."""
    import struct

    from .errors import TruncatedFile

    header_fmt = "<6ddBBII"
    header_size = struct.calcsize(header_fmt)
    if offset + header_size > len(data):
        raise TruncatedFile("octree header extends past end of data")
    vals = struct.unpack_from(header_fmt, data, offset)
    bbox = Aabb(tuple(vals[0:3]), tuple(vals[3:6]))
    margin, max_depth, mode_code, point_count, node_count = vals[6:]
    offset += header_size

    rec_fmt = "<B3d3dBB"
    rec_size = struct.calcsize(rec_fmt)
    if offset + node_count * rec_size > len(data):
        raise TruncatedFile("octree records extend past end of data")

    pos = [offset]

    def read_node() -> OctreeNode:
        depth, cx, cy, cz, hx, hy, hz, flags, mask = struct.unpack_from(rec_fmt, data, pos[0])
        pos[0] += rec_size
        node = OctreeNode((cx, cy, cz), (hx, hy, hz), depth, occupied=bool(flags & 1))
        for code in range(8):
            if mask & (1 << code):
                node.children[code] = read_node()
        return node

    root = read_node()
    tree = AdaptiveOctree(
        root=root,
        bbox=bbox,
        expand_margin=margin,
        max_depth=max_depth,
        point_count=point_count,
        mode="adaptive" if mode_code == 0 else "classic",
    )
    return tree, pos[0]


def storage_size(tree: AdaptiveOctree) -> int:
    """Bytes of the canonical serialization."""
    return len(serialize_tree(tree))
