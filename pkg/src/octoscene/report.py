"""Stats reporting: delimited per-node tables plus rendered figures.

The stats path compares each node's adaptive octree against a classic
(cubic) rebuild at the same depth: occupancy ratio of both, serialized size,
and point counts. Rows go out as CSV; when a figures directory is given the
same rows are rendered with matplotlib (occupancy comparison bars and a
storage breakdown) as PNG files next to the data.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .cgsm import MergedSegment
from .config import PipelineConfig
from .graph import SceneGraph
from .octree import build as build_octree
from .octree import eor, storage_size

STATS_COLUMNS = (
    "node_id",
    "caption",
    "point_count",
    "octree_bytes",
    "eor_adaptive",
    "eor_classic",
)


@dataclass
class NodeStats:
    node_id: int
    caption: str
    point_count: int
    octree_bytes: int
    eor_adaptive: float
    eor_classic: float


@dataclass
class SceneStats:
    rows: list[NodeStats]
    total_octree_bytes: int
    total_point_bytes: int
    mean_eor_adaptive: float
    mean_eor_classic: float


def compute_stats(
    graph: SceneGraph, instances: list[MergedSegment], cfg: PipelineConfig
) -> SceneStats:
    """Per-node and scene-level stats. Instances supply the point clouds the
    graph file intentionally does not store; order must match node order."""
    rows: list[NodeStats] = []
    for node, inst in zip(graph.nodes, instances):
        adaptive_eor = eor(
            node.octree, inst.points, cfg.dilation_radius, cfg.eor_samples, seed=cfg.seed
        ).eor
        classic_tree = build_octree(
            inst.points,
            max_depth=cfg.max_depth,
            expand_margin=cfg.expand_margin,
            mode="classic",
            min_leaf_points=cfg.min_leaf_points,
            prune_full_nodes=cfg.prune_full_nodes,
        )
        classic_eor = eor(
            classic_tree, inst.points, cfg.dilation_radius, cfg.eor_samples, seed=cfg.seed
        ).eor
        rows.append(
            NodeStats(
                node_id=node.id,
                caption=node.caption,
                point_count=inst.points.shape[0],
                octree_bytes=storage_size(node.octree),
                eor_adaptive=adaptive_eor,
                eor_classic=classic_eor,
            )
        )
    total_points = sum(r.point_count for r in rows)
    return SceneStats(
        rows=rows,
        total_octree_bytes=sum(r.octree_bytes for r in rows),
        total_point_bytes=total_points * 12,  # xyz float32
        mean_eor_adaptive=float(np.mean([r.eor_adaptive for r in rows])) if rows else 0.0,
        mean_eor_classic=float(np.mean([r.eor_classic for r in rows])) if rows else 0.0,
    )


def stats_csv(stats: SceneStats) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(STATS_COLUMNS)
    for r in stats.rows:
        writer.writerow(
            [r.node_id, r.caption, r.point_count, r.octree_bytes,
             f"{r.eor_adaptive:.6f}", f"{r.eor_classic:.6f}"]
        )
    return buf.getvalue()


def render_figures(stats: SceneStats, out_dir: str | Path) -> list[Path]:
    """Render the occupancy and storage comparison figures as PNGs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if not stats.rows:
        return written

    labels = [f"{r.node_id}:{r.caption}" for r in stats.rows]
    x = np.arange(len(stats.rows))

    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(x) + 2), 4.0))
    width = 0.38
    ax.bar(x - width / 2, [r.eor_adaptive for r in stats.rows], width, label="adaptive")
    ax.bar(x + width / 2, [r.eor_classic for r in stats.rows], width, label="classic")
    ax.axhline(stats.mean_eor_adaptive, color="C0", ls="--", lw=1,
               label=f"mean adaptive {stats.mean_eor_adaptive:.4f}")
    ax.axhline(stats.mean_eor_classic, color="C1", ls="--", lw=1,
               label=f"mean classic {stats.mean_eor_classic:.4f}")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("effective occupancy ratio")
    ax.set_title("Occupancy fidelity per node")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "eor_comparison.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(x) + 2), 4.0))
    ax.bar(x, [r.octree_bytes for r in stats.rows], color="C2", label="octree bytes")
    ax.bar(x, [r.point_count * 12 for r in stats.rows], color="C3", alpha=0.35,
           label="raw xyz float32 bytes")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("bytes (log scale)")
    ax.set_title(
        f"Storage: {stats.total_octree_bytes} octree bytes vs "
        f"{stats.total_point_bytes} point bytes"
    )
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "storage_comparison.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)
    return written
