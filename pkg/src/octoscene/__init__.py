"""octoscene: offline 3D scene representation.

Turns per-frame, feature-annotated point-cloud segments into merged object
instances with fused semantics, stores each instance as a storage-efficient
adaptive octree, links instances into a scene graph with spatial-relation
edges, and answers occupancy queries, text-based retrieval, and grid path
planning on top of that graph.
"""

from .config import PipelineConfig
from .cgsm import InstanceMap, MergedSegment, run_cgsm
from .generator import SceneSpec, generate
from .graph import SceneGraph, build_graph, classify_relation, scene_is_occupied
from .ifa import FusedFeature, aggregate_instances, fuse, major_cluster, refine_pool
from .ingest import SceneBundle, Segment, filter_and_build, lift_mask, load_bundle
from .octree import AdaptiveOctree, build as build_octree, eor, is_occupied, storage_size
from .pipeline import PipelineResult, build_scene
from .planning import PlanRequest, PlanResult, cell_free, plan
from .retrieval import (
    QueryPlan,
    RetrievalResult,
    plan_query,
    query_for_compare_dis,
    query_for_reference_relation,
    query_for_reference_relation_target,
    query_for_target,
    retrieve,
)
from .serialize import export_text, load_graph, load_graph_file, save_graph, save_graph_file

__version__ = "0.1.0"

__all__ = [
    "AdaptiveOctree",
    "FusedFeature",
    "InstanceMap",
    "MergedSegment",
    "PipelineConfig",
    "PipelineResult",
    "PlanRequest",
    "PlanResult",
    "QueryPlan",
    "RetrievalResult",
    "SceneBundle",
    "SceneGraph",
    "SceneSpec",
    "Segment",
    "aggregate_instances",
    "build_graph",
    "build_octree",
    "build_scene",
    "cell_free",
    "classify_relation",
    "eor",
    "export_text",
    "filter_and_build",
    "fuse",
    "generate",
    "is_occupied",
    "lift_mask",
    "load_bundle",
    "load_graph",
    "load_graph_file",
    "major_cluster",
    "plan",
    "plan_query",
    "query_for_compare_dis",
    "query_for_reference_relation",
    "query_for_reference_relation_target",
    "query_for_target",
    "refine_pool",
    "retrieve",
    "run_cgsm",
    "save_graph",
    "save_graph_file",
    "scene_is_occupied",
    "storage_size",
    "__version__",
]
