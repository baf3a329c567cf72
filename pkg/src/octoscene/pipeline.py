"""End-to-end wiring: bundle -> instances -> fused features -> scene graph."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .cgsm import InstanceMap, run_cgsm
from .config import PipelineConfig
from .features import FeatureProvider
from .graph import SceneGraph, build_graph
from .ifa import aggregate_instances
from .ingest import SceneBundle, Segment, filter_and_build, load_bundle


@dataclass
class PipelineResult:
    segments: list[Segment]
    instances: InstanceMap
    graph: SceneGraph


def build_scene(
    bundle: SceneBundle | str | Path,
    cfg: PipelineConfig,
    provider: FeatureProvider | None = None,
    refine: bool = False,
) -> PipelineResult:
    """Run the full pipeline over a bundle (or a path to one)."""
    if not isinstance(bundle, SceneBundle):
        bundle = load_bundle(bundle)
    segments = filter_and_build(bundle, cfg)
    instances = run_cgsm(segments, cfg)
    fused = aggregate_instances(
        instances.instances,
        cfg,
        bundle=bundle if refine else None,
        provider=provider,
    )
    graph = build_graph(instances, fused, cfg)
    return PipelineResult(segments=segments, instances=instances, graph=graph)
