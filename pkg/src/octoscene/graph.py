"""Scene graph assembly and scene-level occupancy queries.

Nodes are fused object instances: caption, fused feature, centroid, and the
instance's adaptive octree (the node box is the octree's expanded root box so
occupancy answers agree exactly with the union of occupied leaves). Edges
connect node pairs whose centers are closer than the edge threshold, plus
containing/contained pairs at any distance, and carry a semantic relation,
the center distance, and the center-to-center vector. Every edge is stored in
both directions with the vector negated and the relation inverted.

Relations live in a closed vocabulary. Directional ones describe the target
node relative to the source node in world axes ("above" on edge a->b means b
is above a); "contain" means the source encloses the target. The graph is
immutable after build and safe for concurrent readers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cgsm import InstanceMap, MergedSegment
from .config import PipelineConfig
from .errors import CountMismatch
from .geometry import Aabb
from .ifa import FusedFeature
from .octree import AdaptiveOctree, build as build_octree, is_occupied

RELATIONS = (
    "above", "below", "front", "back", "left", "right",
    "contain", "included", "far", "close", "none",
)

INVERSE_RELATION = {
    "above": "below", "below": "above",
    "left": "right", "right": "left",
    "front": "back", "back": "front",
    "contain": "included", "included": "contain",
    "far": "far", "close": "close",
    "none": "none",
}

# comparative relations are query-only; they never appear on stored edges
EDGE_RELATIONS = tuple(r for r in RELATIONS if r not in ("far", "close", "none"))


@dataclass
class GraphNode:
    id: int
    caption: str
    feature: np.ndarray        # fused instance feature, float32
    center: tuple[float, float, float]
    octree: AdaptiveOctree
    aabb: Aabb                 # the octree's expanded root box
    point_count: int = 0


@dataclass
class GraphEdge:
    source: int
    target: int
    relation: str
    distance: float
    vector: tuple[float, float, float]


@dataclass
class SceneGraph:
    nodes: list[GraphNode]
    edges: list[GraphEdge]
    config: PipelineConfig = field(default_factory=PipelineConfig)
    feature_dim: int = 0

    def node_by_id(self, node_id: int) -> GraphNode:
        return self.nodes[node_id]

    def edges_from(self, node_id: int) -> list[GraphEdge]:
        return [e for e in self.edges if e.source == node_id]


def _axis_indices(world_up: str) -> tuple[int, int, int]:
    """(up, left-right axis, front-back axis) indices for the configured up."""
    if world_up == "z":
        return 2, 0, 1
    return 1, 0, 2


def classify_relation(
    a: GraphNode,
    b: GraphNode,
    dominance_ratio: float = 1.0,
    containment_margin: float = 0.01,
    world_up: str = "z",
) -> str:
    """Relation stored on the edge a -> b.

    Containment wins first: if b's box fits inside a's (with margin), a
    "contain"s b; the reverse gives "included". Otherwise the displacement
    v = center(b) - center(a) is classified by its dominant world axis,
    vertical checked first (ties resolved in axis order up, x, then the
    remaining horizontal axis).
    """
    if a.aabb.contains_box(b.aabb, containment_margin):
        return "contain"
    if b.aabb.contains_box(a.aabb, containment_margin):
        return "included"
    v = np.array(b.center) - np.array(a.center)
    up, lr, fb = _axis_indices(world_up)
    if abs(v[up]) >= dominance_ratio * max(abs(v[lr]), abs(v[fb])):
        return "above" if v[up] >= 0 else "below"
    if abs(v[lr]) >= abs(v[fb]):
        return "right" if v[lr] >= 0 else "left"
    return "front" if v[fb] >= 0 else "back"


def build_graph(
    instances: InstanceMap | list[MergedSegment],
    fused: list[FusedFeature],
    cfg: PipelineConfig,
) -> SceneGraph:
    """Build the scene graph from merged instances and their fused features.

    One node per instance (ordered by instance id), an octree per node, and a
    symmetric edge pair per qualifying node pair.
    """
    members = instances.instances if isinstance(instances, InstanceMap) else list(instances)
    members = sorted(members, key=lambda m: m.id)
    if len(members) != len(fused):
        raise CountMismatch(f"{len(members)} instances but {len(fused)} fused features")

    nodes: list[GraphNode] = []
    feature_dim = 0
    for node_id, (inst, feat) in enumerate(zip(members, fused)):
        tree = build_octree(
            inst.points,
            max_depth=cfg.max_depth,
            expand_margin=cfg.expand_margin,
            mode="adaptive",
            min_leaf_points=cfg.min_leaf_points,
            prune_full_nodes=cfg.prune_full_nodes,
        )
        feature = np.asarray(feat.f_star, dtype=np.float32)
        feature_dim = feature.shape[0]
        nodes.append(
            GraphNode(
                id=node_id,
                caption=inst.majority_caption(),
                feature=feature,
                center=tuple(inst.centroid().tolist()),
                octree=tree,
                aabb=tree.root.box(),
                point_count=inst.points.shape[0],
            )
        )

    edges: list[GraphEdge] = []
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            vec = np.array(nodes[j].center) - np.array(nodes[i].center)
            dist = float(np.linalg.norm(vec))
            contained = nodes[i].aabb.contains_box(nodes[j].aabb, cfg.containment_margin) or nodes[
                j
            ].aabb.contains_box(nodes[i].aabb, cfg.containment_margin)
            if dist >= cfg.edge_distance_threshold and not contained:
                continue
            rel = classify_relation(
                nodes[i], nodes[j], cfg.vertical_dominance_ratio, cfg.containment_margin, cfg.world_up
            )
            edges.append(GraphEdge(i, j, rel, dist, tuple(vec.tolist())))
            edges.append(GraphEdge(j, i, INVERSE_RELATION[rel], dist, tuple((-vec).tolist())))

    return SceneGraph(nodes=nodes, edges=edges, config=cfg, feature_dim=feature_dim)


def scene_is_occupied(graph: SceneGraph, p) -> bool:
    """Scene-level occupancy: try every node whose box contains the point and
    descend its octree; free when no node claims the point."""
    p = tuple(float(c) for c in p)
    for node in graph.nodes:
        if node.aabb.contains_point(p):
            if is_occupied(node.octree, p):
                return True
    return False
