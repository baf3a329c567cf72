"""Command-line surface.

Subcommands: gen, build, stats, export-graph, occupied, retrieve, plan, eor.
Exit codes: 0 success, 2 bad input, 3 corrupt graph file, 4 empty result or
no path, 1 internal failure. Every command is deterministic given its inputs,
config, and seed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import serialize
from .config import PipelineConfig
from .errors import (
    BadBundle,
    BadFeatureDim,
    BadSpec,
    CorruptFile,
    EmptyGraph,
    EmptyOperand,
    NoSuchRelation,
    OctosceneError,
    TruncatedFile,
    UnparsableCommand,
)
from .features import (
    EMBED_ENDPOINT_VAR,
    ChatClient,
    HashTextEmbedder,
    HttpTextEmbedder,
)
from .generator import SceneSpec, generate
from .octree import NoOccupiedLeaves, build as build_octree, eor as tree_eor, storage_size
from .pipeline import build_scene
from .planning import PlanRequest, plan as run_plan
from .report import compute_stats, render_figures, stats_csv
from .retrieval import GrammarPlanner, LlmPlanner, retrieve

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_CORRUPT = 3
EXIT_EMPTY = 4


def _load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        return PipelineConfig.load(path)
    except (OSError, ValueError) as exc:
        raise BadBundle(f"cannot load config {path}: {exc}") from exc


def _parse_xyz(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise UnparsableCommand(f"expected x,y,z got {text!r}", raw=text)
    return tuple(float(p) for p in parts)


def cmd_gen(args) -> int:
    spec = SceneSpec.load(args.spec)
    truth = generate(spec, args.out)
    n_under = sum(1 for s in truth.segments if s.under_segment)
    print(
        f"wrote {args.out}: {len(truth.objects)} objects, "
        f"{len(truth.segments)} segments ({n_under} planted under-segments)"
    )
    return EXIT_OK


def cmd_build(args) -> int:
    cfg = _load_config(args.config)
    result = build_scene(args.bundle, cfg)
    graph = result.graph
    size = serialize.save_graph_file(graph, args.out)
    if not graph.nodes:
        print("warning: bundle produced no instances; wrote an empty graph", file=sys.stderr)
    eors = []
    samples = args.eor_samples or cfg.eor_samples
    for node, inst in zip(graph.nodes, result.instances.instances):
        eors.append(tree_eor(node.octree, inst.points, cfg.dilation_radius, samples, seed=cfg.seed).eor)
    mean_eor = float(np.mean(eors)) if eors else 0.0
    print(f"instances: {len(result.instances.instances)}")
    print(f"nodes: {len(graph.nodes)}  edges: {len(graph.edges)}")
    print(f"graph file: {size} bytes ({args.out})")
    print(f"mEOR (adaptive): {mean_eor:.6f}")
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg_file = _load_config(args.config)
    graph = serialize.load_graph_file(args.graph)
    # the graph file stores no point clouds; rebuild them from the bundle
    # (the pipeline is deterministic, so instances match the stored nodes)
    result = build_scene(args.bundle, cfg_file if args.config else graph.config)
    cfg = graph.config
    if args.samples:
        cfg.eor_samples = args.samples
    stats = compute_stats(graph, result.instances.instances, cfg)
    csv_text = stats_csv(stats)
    if args.csv:
        Path(args.csv).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)
    print(f"total octree bytes: {stats.total_octree_bytes}")
    print(f"total point bytes (xyz f32): {stats.total_point_bytes}")
    print(f"mEOR adaptive: {stats.mean_eor_adaptive:.6f}")
    print(f"mEOR classic:  {stats.mean_eor_classic:.6f}")
    if args.figures:
        for path in render_figures(stats, args.figures):
            print(f"figure: {path}")
    return EXIT_OK


def cmd_export_graph(args) -> int:
    graph = serialize.load_graph_file(args.graph)
    if args.format == "binary":
        Path(args.out).write_bytes(serialize.save_graph(graph))
    else:
        Path(args.out).write_text(serialize.export_text(graph), encoding="utf-8")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_occupied(args) -> int:
    from .graph import scene_is_occupied

    graph = serialize.load_graph_file(args.graph)
    point = _parse_xyz(args.point)
    print("occupied" if scene_is_occupied(graph, point) else "free")
    return EXIT_OK


def _make_embedder(graph, kind: str):
    if kind == "http":
        return HttpTextEmbedder(graph.feature_dim)
    return HashTextEmbedder(graph.feature_dim)


def cmd_retrieve(args) -> int:
    graph = serialize.load_graph_file(args.graph)
    embedder = _make_embedder(graph, args.embedder)
    planner = LlmPlanner(ChatClient()) if args.planner == "llm" else GrammarPlanner()
    result = retrieve(
        args.command, graph, embedder, planner=planner, top_k=args.top_k, ref_top_k=args.ref_top_k
    )
    if not result.items:
        print("no matches", file=sys.stderr)
        return EXIT_EMPTY
    for node_id, score in result.items:
        node = graph.node_by_id(node_id)
        print(f"{node_id}\t{score:.4f}\t{node.caption}\t({node.center[0]:.3f}, {node.center[1]:.3f}, {node.center[2]:.3f})")
    return EXIT_OK


def cmd_plan(args) -> int:
    graph = serialize.load_graph_file(args.graph)
    req = PlanRequest(
        start=_parse_xyz(args.start),
        goal=_parse_xyz(args.goal),
        grid_res=args.res,
        agent_half_extents=_parse_xyz(args.agent) if args.agent else (0.0, 0.0, 0.0),
        mode="slice" if args.mode == "slice" else "full3d",
    )
    result = run_plan(graph, req)
    if result.status != "success":
        print(result.status, file=sys.stderr)
        return EXIT_EMPTY
    print(f"cost: {result.cost:.4f}", file=sys.stderr)
    for x, y, z in result.waypoints:
        print(f"{x:.4f} {y:.4f} {z:.4f}")
    return EXIT_OK


def cmd_eor(args) -> int:
    cfg = _load_config(args.config)
    result = build_scene(args.bundle, cfg)
    samples = args.samples or cfg.eor_samples
    print("node_id\tcaption\tmode\teor\toctree_bytes")
    values = []
    for node, inst in zip(result.graph.nodes, result.instances.instances):
        if args.mode == "classic":
            tree = build_octree(
                inst.points, cfg.max_depth, cfg.expand_margin, mode="classic",
                min_leaf_points=cfg.min_leaf_points, prune_full_nodes=cfg.prune_full_nodes,
            )
        else:
            tree = node.octree
        report = tree_eor(tree, inst.points, cfg.dilation_radius, samples, seed=cfg.seed)
        values.append(report.eor)
        print(f"{node.id}\t{node.caption}\t{args.mode}\t{report.eor:.6f}\t{storage_size(tree)}")
    mean = float(np.mean(values)) if values else 0.0
    print(f"mEOR ({args.mode}): {mean:.6f}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="octoscene",
        description="Build, inspect, and query octree scene graphs from point-cloud bundles.",
    )
    sub = parser.add_subparsers(dest="command_name", required=True)

    p = sub.add_parser("gen", help="generate a synthetic bundle with ground truth")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--out", required=True, help="output manifest path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("build", help="build a scene graph from a bundle")
    p.add_argument("--bundle", required=True, help="bundle manifest path")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True, help="output graph file")
    p.add_argument("--eor-samples", type=int, default=0, help="override Monte Carlo samples")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("stats", help="per-node occupancy and storage report")
    p.add_argument("--graph", required=True)
    p.add_argument("--bundle", required=True, help="bundle the graph was built from")
    p.add_argument("--config", help="config override for the rebuild")
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--csv", help="write the table here instead of stdout")
    p.add_argument("--figures", help="directory for rendered PNG figures")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("export-graph", help="re-export a graph as binary or text")
    p.add_argument("--graph", required=True)
    p.add_argument("--format", choices=("binary", "text"), default="text")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("occupied", help="point occupancy query")
    p.add_argument("--graph", required=True)
    p.add_argument("--point", required=True, help="x,y,z")
    p.set_defaults(func=cmd_occupied)

    p = sub.add_parser("retrieve", help="natural-language object retrieval")
    p.add_argument("command", help="e.g. 'Find the vase on the table.'")
    p.add_argument("--graph", required=True)
    p.add_argument("--planner", choices=("grammar", "llm"), default="grammar")
    p.add_argument("--embedder", choices=("hash", "http"), default="hash",
                   help=f"http uses ${EMBED_ENDPOINT_VAR}")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--ref-top-k", type=int, default=1)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("plan", help="grid path planning")
    p.add_argument("--graph", required=True)
    p.add_argument("--start", required=True, help="x,y,z")
    p.add_argument("--goal", required=True, help="x,y,z")
    p.add_argument("--res", type=float, default=0.1)
    p.add_argument("--agent", help="half extents hx,hy,hz")
    p.add_argument("--mode", choices=("3d", "slice"), default="3d")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("eor", help="occupancy-ratio report for a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--config")
    p.add_argument("--mode", choices=("adaptive", "classic"), default="adaptive")
    p.add_argument("--samples", type=int, default=0)
    p.set_defaults(func=cmd_eor)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CorruptFile, TruncatedFile) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (BadBundle, BadSpec, BadFeatureDim, UnparsableCommand, NoSuchRelation,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NoOccupiedLeaves, EmptyGraph, EmptyOperand) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except OctosceneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
