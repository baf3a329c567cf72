from __future__ import annotations

import numpy as np
import pytest

from octoscene.config import PipelineConfig
from octoscene.errors import CountMismatch
from octoscene.graph import (
    EDGE_RELATIONS,
    INVERSE_RELATION,
    GraphNode,
    build_graph,
    classify_relation,
    scene_is_occupied,
)
from octoscene.geometry import Aabb
from octoscene.octree import build as build_octree
from oracles import leaf_boxes, point_in_any_box
from scenes import graph_of, make_instance


def node_at(center, half=(0.3, 0.3, 0.3), node_id=0):
    lo = tuple(c - h for c, h in zip(center, half))
    hi = tuple(c + h for c, h in zip(center, half))
    tree = build_octree([lo, hi], max_depth=0, expand_margin=0.0)
    return GraphNode(
        id=node_id,
        caption="n",
        feature=np.ones(4, dtype=np.float32),
        center=tuple(float(c) for c in center),
        octree=tree,
        aabb=Aabb(lo, hi),
    )


class TestClassifyRelation:
    def test_pure_vertical_above(self):
        a = node_at((0, 0, 0))
        b = node_at((0, 0, 1), node_id=1)
        assert classify_relation(a, b) == "above"
        assert classify_relation(b, a) == "below"

    def test_contained_box(self):
        outer = node_at((0, 0, 0), half=(1, 1, 1))
        inner = node_at((0.1, 0, 0), half=(0.2, 0.2, 0.2), node_id=1)
        assert classify_relation(outer, inner) == "contain"
        assert classify_relation(inner, outer) == "included"

    def test_x_dominant_right(self):
        a = node_at((0, 0, 0))
        b = node_at((1.0, 0.2, 0.1), node_id=1)
        assert classify_relation(a, b) == "right"
        assert classify_relation(b, a) == "left"

    def test_y_dominant_front(self):
        a = node_at((0, 0, 0))
        b = node_at((0.2, 1.0, 0.1), node_id=1)
        assert classify_relation(a, b) == "front"
        assert classify_relation(b, a) == "back"

    def test_vertical_tie_goes_up(self):
        a = node_at((0, 0, 0))
        b = node_at((1.0, 0.0, 1.0), node_id=1)  # |vz| == |vx|
        assert classify_relation(a, b) == "above"

    def test_y_up_convention(self):
        a = node_at((0, 0, 0))
        b = node_at((0, 1, 0), node_id=1)
        assert classify_relation(a, b, world_up="y") == "above"
        c = node_at((0.2, 0.1, 1.0), node_id=2)
        assert classify_relation(a, c, world_up="y") == "front"

    def test_translation_invariance(self, rng):
        for _ in range(50):
            ca = rng.uniform(-5, 5, 3)
            cb = rng.uniform(-5, 5, 3)
            ha = rng.uniform(0.1, 0.5, 3)
            hb = rng.uniform(0.1, 0.5, 3)
            shift = rng.uniform(-20, 20, 3)
            a, b = node_at(ca, ha), node_at(cb, hb, node_id=1)
            a2, b2 = node_at(ca + shift, ha), node_at(cb + shift, hb, node_id=1)
            assert classify_relation(a, b) == classify_relation(a2, b2)


class TestBuildGraph:
    def test_edge_within_threshold(self):
        graph = graph_of([("a", (0, 0, 0)), ("b", (2.5, 0, 0))])
        assert len(graph.edges) == 2

    def test_no_edge_beyond_threshold(self):
        graph = graph_of([("a", (0, 0, 0)), ("b", (3.5, 0, 0))])
        assert graph.edges == []

    def test_single_node_no_edges(self):
        graph = graph_of([("solo", (0, 0, 0))])
        assert len(graph.nodes) == 1
        assert graph.edges == []

    def test_containment_edge_beyond_threshold(self):
        cfg = PipelineConfig(max_depth=2, edge_distance_threshold=0.1)
        graph = graph_of(
            [("room", (0, 0, 0), (4.0, 4.0, 2.0)), ("chair", (2.0, 2.0, -1.0), (0.2, 0.2, 0.2))],
            cfg,
        )
        rels = {(e.source, e.target): e.relation for e in graph.edges}
        assert rels[(0, 1)] == "contain"
        assert rels[(1, 0)] == "included"

    def test_count_mismatch(self):
        inst = make_instance(0, (0, 0, 0))
        with pytest.raises(CountMismatch):
            build_graph([inst], [], PipelineConfig())

    def test_nodes_ordered_by_instance_id(self):
        graph = graph_of([("a", (0, 0, 0)), ("b", (1, 0, 0)), ("c", (2, 0, 0))])
        assert [n.id for n in graph.nodes] == [0, 1, 2]
        assert [n.caption for n in graph.nodes] == ["a", "b", "c"]

    def test_node_box_is_octree_root_box(self):
        graph = graph_of([("a", (0, 0, 0))])
        node = graph.nodes[0]
        assert node.aabb == node.octree.root.box()
        assert node.aabb.contains_point(node.center)


def random_graph(rng, n_nodes=None):
    n = n_nodes or int(rng.integers(2, 8))
    objects = []
    for k in range(n):
        center = tuple(rng.uniform(-4, 4, 3).tolist())
        half = tuple(rng.uniform(0.1, 0.5, 3).tolist())
        objects.append((f"obj {k}", center, half))
    cfg = PipelineConfig(max_depth=2, edge_distance_threshold=float(rng.uniform(2.0, 6.0)))
    return graph_of(objects, cfg)


class TestGraphInvariants:
    def test_edge_pairing_on_random_graphs(self, rng):
        for _ in range(30):
            graph = random_graph(rng)
            by_pair = {(e.source, e.target): e for e in graph.edges}
            assert len(by_pair) == len(graph.edges)
            for (src, dst), edge in by_pair.items():
                assert src != dst
                back = by_pair[(dst, src)]
                assert back.relation == INVERSE_RELATION[edge.relation]
                assert back.distance == edge.distance
                assert np.allclose(back.vector, -np.array(edge.vector))
                assert edge.relation in EDGE_RELATIONS

    def test_distance_equals_vector_norm(self, rng):
        for _ in range(20):
            graph = random_graph(rng)
            for e in graph.edges:
                assert e.distance == pytest.approx(np.linalg.norm(e.vector), abs=1e-9)
                src = np.array(graph.node_by_id(e.source).center)
                dst = np.array(graph.node_by_id(e.target).center)
                assert np.allclose(e.vector, dst - src)

    def test_relation_translation_invariance_whole_scene(self, rng):
        objects = [
            ("a", (0, 0, 0), (0.3, 0.3, 0.3)),
            ("b", (1.2, 0.4, 0.2), (0.2, 0.2, 0.2)),
            ("c", (0.1, -1.5, 0.9), (0.25, 0.25, 0.25)),
        ]
        base = graph_of(objects)
        for _ in range(5):
            shift = rng.uniform(-30, 30, 3)
            moved = graph_of([(c, tuple(np.array(p) + shift), h) for c, p, h in objects])
            base_rels = {(e.source, e.target): e.relation for e in base.edges}
            moved_rels = {(e.source, e.target): e.relation for e in moved.edges}
            assert base_rels == moved_rels


class TestSceneOccupancy:
    def test_outside_all_nodes_false(self):
        graph = graph_of([("a", (0, 0, 0))])
        assert not scene_is_occupied(graph, (50, 50, 50))

    def test_occupied_leaf_center_true(self):
        graph = graph_of([("a", (0, 0, 0))])
        leaf = graph.nodes[0].octree.occupied_leaves()[0]
        assert scene_is_occupied(graph, leaf.center)

    def test_matches_leaf_union_oracle(self, rng):
        for _ in range(5):
            graph = random_graph(rng, n_nodes=4)
            boxes = []
            for node in graph.nodes:
                boxes.extend(leaf_boxes(node.octree))
            lo = np.min([b[0] for b in boxes], axis=0) - 0.5
            hi = np.max([b[1] for b in boxes], axis=0) + 0.5
            pts = rng.random((2000, 3)) * (hi - lo) + lo
            for p in pts:
                assert scene_is_occupied(graph, p) == point_in_any_box(boxes, p)

    def test_empty_graph_all_free(self):
        from octoscene.graph import SceneGraph

        graph = SceneGraph(nodes=[], edges=[], config=PipelineConfig(), feature_dim=4)
        assert not scene_is_occupied(graph, (0, 0, 0))
