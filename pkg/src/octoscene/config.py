"""Pipeline configuration: one auditable record of every knob.

Defaults follow the published operating point where one exists; the rest are
engineering choices documented next to each field. A config round-trips
through JSON and is embedded in every graph file for provenance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


@dataclass
class PipelineConfig:
    # geometry
    voxel_size: float = 0.025           # voxel hash resolution for set ops, meters
    # ingest filters
    min_mask_pixels: int = 25           # drop 2D proposals smaller than this
    min_segment_points: int = 50        # drop lifted segments smaller than this (post-denoise)
    denoise_eps: float = 0.05           # DBSCAN radius for segment denoising, meters
    denoise_min_pts: int = 10           # DBSCAN min neighborhood size
    border_fraction: float = 0.4        # drop masks whose border contact exceeds this share of their perimeter
    # segment merging
    group_interval: int = 200           # frames per chronological group
    containment_ratio: float = 0.8      # directed overlap ratio that counts as "contained"
    undersegment_variance: float = 0.01 # population variance of contained-segment similarities that flags an under-segment
    merge_theta_start: float = 2.4      # similarity threshold at the first merge pass
    merge_theta_end: float = 1.6        # similarity threshold at the last merge pass
    merge_decay_steps: int = 5          # number of passes per group (linear decay)
    # feature aggregation
    neighbor_cos_threshold: float = 0.7 # instances whose centers are at least this similar count as neighbors
    feature_cluster_eps: float = 0.15   # cosine-distance radius for the major feature cluster
    feature_cluster_min_pts: int = 2
    softmax_temperature: float = 1.0    # inf reproduces plain averaging
    neighbor_mean_mode: bool = False    # average (rather than sum) the neighbor penalty
    visibility_fraction: float = 0.3    # share of projected points that must land in-frame
    depth_tolerance: float = 0.05       # reprojected depth agreement, meters
    # adaptive octree
    expand_margin: float = 0.01         # bounding-box expansion so boundary points stay inside, meters
    max_depth: int = 4
    min_leaf_points: int = 1
    prune_full_nodes: bool = False      # collapse fully-occupied interior nodes
    dilation_radius: float = 0.005      # point-cloud dilation for occupancy-ratio stats, meters
    eor_samples: int = 200_000          # Monte Carlo samples per occupancy-ratio estimate
    # scene graph
    edge_distance_threshold: float = 3.0  # max center distance for an edge, meters
    vertical_dominance_ratio: float = 1.0 # how dominant the up-axis must be to call above/below
    containment_margin: float = 0.01      # box containment slack, meters
    world_up: str = "z"                   # up axis: "z" or "y"
    # planning
    grid_resolution: float = 0.1
    # determinism
    seed: int = 0

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be > 0")
        if self.group_interval < 1:
            raise ValueError("group_interval must be >= 1")
        if self.merge_decay_steps < 1:
            raise ValueError("merge_decay_steps must be >= 1")
        if self.merge_theta_start < self.merge_theta_end:
            raise ValueError("merge_theta_start must be >= merge_theta_end")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.world_up not in ("z", "y"):
            raise ValueError("world_up must be 'z' or 'y'")
        if self.grid_resolution <= 0:
            raise ValueError("grid_resolution must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")
