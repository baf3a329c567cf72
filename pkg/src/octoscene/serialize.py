"""Versioned binary graph files, plus a lossless text export.

Layout (all little-endian):

    magic "OGRF" | u32 version | u32 config_len | config JSON (UTF-8)
    | u32 feature_dim | u32 node_count | node records
    | u32 edge_count  | edge records  | u32 CRC32

    node: u32 id | u16 caption_len | caption UTF-8 | f32[D] feature
          | f64[3] center | f64[6] aabb | u32 point_count | octree blob
    edge: u32 source | u32 target | u8 relation | f64 distance | f64[3] vector

The CRC covers every byte before it, so any single corrupted byte is
detected. Serialization is canonical: saving a loaded graph reproduces the
input bytes exactly.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import CorruptFile, TruncatedFile
from .geometry import Aabb
from .graph import RELATIONS, GraphEdge, GraphNode, SceneGraph
from .octree import deserialize_tree, serialize_tree

MAGIC = b"OGRF"
VERSION = 1

_REL_CODE = {name: code for code, name in enumerate(RELATIONS)}
_REL_NAME = dict(enumerate(RELATIONS))


def save_graph(graph: SceneGraph) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    config_bytes = graph.config.to_json().encode("utf-8")
    out += struct.pack("<I", len(config_bytes))
    out += config_bytes
    out += struct.pack("<II", graph.feature_dim, len(graph.nodes))
    for node in graph.nodes:
        caption = node.caption.encode("utf-8")
        out += struct.pack("<IH", node.id, len(caption))
        out += caption
        feature = np.asarray(node.feature, dtype="<f4")
        if feature.shape != (graph.feature_dim,):
            raise ValueError(f"node {node.id} feature shape {feature.shape} != ({graph.feature_dim},)")
        out += feature.tobytes()
        out += struct.pack("<3d", *node.center)
        out += struct.pack("<6d", *node.aabb.b_min, *node.aabb.b_max)
        out += struct.pack("<I", node.point_count)
        out += serialize_tree(node.octree)
    out += struct.pack("<I", len(graph.edges))
    for edge in graph.edges:
        out += struct.pack(
            "<IIBd3d", edge.source, edge.target, _REL_CODE[edge.relation], edge.distance, *edge.vector
        )
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def load_graph(data: bytes) -> SceneGraph:
    if len(data) < len(MAGIC) + 8:
        raise TruncatedFile(f"file of {len(data)} bytes is too short")
    if data[:4] != MAGIC:
        raise CorruptFile(f"bad magic {data[:4]!r}")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    payload = data[:-4]
    if zlib.crc32(payload) != stored_crc:
        raise CorruptFile("checksum mismatch")

    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data) - 4:
            raise TruncatedFile("record extends past end of file")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise CorruptFile(f"unsupported version {version}")
    (config_len,) = take("<I")
    if pos + config_len > len(data) - 4:
        raise TruncatedFile("config block extends past end of file")
    try:
        config = PipelineConfig.from_json(data[pos : pos + config_len].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"bad config block: {exc}") from exc
    pos += config_len

    feature_dim, node_count = take("<II")
    nodes: list[GraphNode] = []
    for _ in range(node_count):
        node_id, caption_len = take("<IH")
        if pos + caption_len > len(data) - 4:
            raise TruncatedFile("caption extends past end of file")
        caption = data[pos : pos + caption_len].decode("utf-8")
        pos += caption_len
        feat_bytes = 4 * feature_dim
        if pos + feat_bytes > len(data) - 4:
            raise TruncatedFile("feature extends past end of file")
        feature = np.frombuffer(data, dtype="<f4", count=feature_dim, offset=pos).copy()
        pos += feat_bytes
        center = take("<3d")
        box = take("<6d")
        (point_count,) = take("<I")
        tree, pos = deserialize_tree(payload, pos)
        nodes.append(
            GraphNode(
                id=node_id,
                caption=caption,
                feature=feature,
                center=center,
                octree=tree,
                aabb=Aabb(box[:3], box[3:]),
                point_count=point_count,
            )
        )

    (edge_count,) = take("<I")
    edges: list[GraphEdge] = []
    for _ in range(edge_count):
        src, dst, rel_code, dist, vx, vy, vz = take("<IIBd3d")
        if rel_code not in _REL_NAME:
            raise CorruptFile(f"unknown relation code {rel_code}")
        edges.append(GraphEdge(src, dst, _REL_NAME[rel_code], dist, (vx, vy, vz)))

    if pos != len(data) - 4:
        raise CorruptFile(f"{len(data) - 4 - pos} unexpected trailing bytes")
    return SceneGraph(nodes=nodes, edges=edges, config=config, feature_dim=feature_dim)


def save_graph_file(graph: SceneGraph, path: str | Path) -> int:
    blob = save_graph(graph)
    Path(path).write_bytes(blob)
    return len(blob)


def load_graph_file(path: str | Path) -> SceneGraph:
    return load_graph(Path(path).read_bytes())


def _tree_to_dict(node) -> dict:
    return {
        "depth": node.depth,
        "center": list(node.center),
        "half_extents": list(node.half_extents),
        "occupied": node.occupied,
        "children": {str(code): _tree_to_dict(child) for code, child in sorted(node.children.items())},
    }


def export_text(graph: SceneGraph) -> str:
    """Lossless JSON rendering of the same fields, for debugging."""
    doc = {
        "format": "octoscene-graph",
        "version": VERSION,
        "config": graph.config.to_dict(),
        "feature_dim": graph.feature_dim,
        "nodes": [
            {
                "id": n.id,
                "caption": n.caption,
                "feature": [float(x) for x in n.feature],
                "center": list(n.center),
                "aabb": {"min": list(n.aabb.b_min), "max": list(n.aabb.b_max)},
                "point_count": n.point_count,
                "octree": {
                    "bbox": {"min": list(n.octree.bbox.b_min), "max": list(n.octree.bbox.b_max)},
                    "expand_margin": n.octree.expand_margin,
                    "max_depth": n.octree.max_depth,
                    "point_count": n.octree.point_count,
                    "mode": n.octree.mode,
                    "root": _tree_to_dict(n.octree.root),
                },
            }
            for n in graph.nodes
        ],
        "edges": [
            {
                "source": e.source,
                "target": e.target,
                "relation": e.relation,
                "distance": e.distance,
                "vector": list(e.vector),
            }
            for e in graph.edges
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True)
