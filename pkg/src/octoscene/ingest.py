"""Scene bundle parsing, mask lifting, and segment filtering.

A bundle is a UTF-8 manifest (one JSON record per line) plus a sidecar binary
blob of little-endian float32 values. The first record is a header:

    {"type": "header", "feature_dim": D, "blob": "name.bin"}

then one record per frame, in capture order:

    {"type": "frame", "t": 3,
     "pose": [16 row-major floats] | null,
     "intrinsics": [fx, fy, cx, cy] | null,
     "size": [width, height] | null,
     "depth": {"offset": o, "rows": r, "cols": c} | null,   # full-frame depth
     "segments": [ ... ]}

Each segment entry carries either pre-lifted world points or a mask+depth
grid pair, plus feature references and a caption:

    {"pixel_count": 120 | null,
     "points": {"offset": o, "count": n} | null,
     "mask":  {"offset": o, "rows": r, "cols": c} | null,
     "depth": {"offset": o, "rows": r, "cols": c} | null,
     "f_v": {"offset": o}, "f_c": {"offset": o},
     "caption": "mug"}

Offsets count float32 elements from the start of the blob. Points are xyz
triples; masks are stored as 0.0/1.0; grids are row-major with mask[v][u]
for pixel (u, v). Parsing is deterministic: re-reading the same bytes yields
identical segments with identical ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import BadBundle, BadFeatureDim, MissingPose, ShapeMismatch
from .geometry import VoxelKey, as_cloud, dbscan_points, largest_cluster_mask, voxelize


@dataclass
class RawSegment:
    pixel_count: int | None
    points: np.ndarray | None          # (N, 3) world frame, or None
    mask: np.ndarray | None            # (H, W) bool, or None
    depth: np.ndarray | None           # (H, W) meters, or None
    visual_feature: np.ndarray         # (D,)
    caption_feature: np.ndarray        # (D,)
    caption: str


@dataclass
class Frame:
    t: int
    pose: np.ndarray | None            # (4, 4) camera-to-world
    intrinsics: tuple[float, float, float, float] | None  # fx, fy, cx, cy
    size: tuple[int, int] | None       # (width, height)
    depth: np.ndarray | None           # full-frame depth, (H, W)
    segments: list[RawSegment] = field(default_factory=list)


@dataclass
class SceneBundle:
    frames: list[Frame]
    feature_dim: int


@dataclass
class Segment:
    """One surviving, denoised, world-space segment with attached features."""

    id: int
    t: int
    points: np.ndarray
    voxels: frozenset[VoxelKey]
    f_v: np.ndarray
    f_c: np.ndarray
    caption: str


def _check_pose(pose: np.ndarray) -> np.ndarray:
    rot = pose[:3, :3]
    if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
        raise BadBundle("frame pose rotation block is not orthonormal")
    return pose


def load_bundle(manifest_path: str | Path) -> SceneBundle:
    manifest_path = Path(manifest_path)
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise BadBundle(f"empty manifest: {manifest_path}")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise BadBundle("first manifest record must be the header")
    feature_dim = int(header["feature_dim"])
    blob_path = manifest_path.parent / header["blob"]
    blob = np.fromfile(blob_path, dtype="<f4") if blob_path.exists() else np.empty(0, dtype="<f4")

    def read(offset: int, count: int) -> np.ndarray:
        if offset < 0 or offset + count > blob.size:
            raise BadBundle(f"blob reference [{offset}, {offset + count}) outside blob of {blob.size}")
        return blob[offset : offset + count]

    def read_grid(ref: dict) -> np.ndarray:
        rows, cols = int(ref["rows"]), int(ref["cols"])
        return read(int(ref["offset"]), rows * cols).reshape(rows, cols).astype(np.float64)

    frames: list[Frame] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("type") != "frame":
            raise BadBundle(f"unexpected record type {rec.get('type')!r}")
        pose = None
        if rec.get("pose") is not None:
            pose = _check_pose(np.array(rec["pose"], dtype=np.float64).reshape(4, 4))
        intr = tuple(float(v) for v in rec["intrinsics"]) if rec.get("intrinsics") else None
        size = tuple(int(v) for v in rec["size"]) if rec.get("size") else None
        frame_depth = read_grid(rec["depth"]) if rec.get("depth") else None
        segments = []
        for seg in rec.get("segments", []):
            points = None
            if seg.get("points") is not None:
                ref = seg["points"]
                count = int(ref["count"])
                points = read(int(ref["offset"]), 3 * count).reshape(count, 3).astype(np.float64)
            mask = read_grid(seg["mask"]) > 0.5 if seg.get("mask") else None
            depth = read_grid(seg["depth"]) if seg.get("depth") else None
            f_v = read(int(seg["f_v"]["offset"]), feature_dim).astype(np.float32)
            f_c = read(int(seg["f_c"]["offset"]), feature_dim).astype(np.float32)
            if not (np.all(np.isfinite(f_v)) and np.all(np.isfinite(f_c))):
                raise BadBundle("non-finite feature vector")
            segments.append(
                RawSegment(
                    pixel_count=None if seg.get("pixel_count") is None else int(seg["pixel_count"]),
                    points=points,
                    mask=mask,
                    depth=depth,
                    visual_feature=f_v,
                    caption_feature=f_c,
                    caption=str(seg.get("caption", "")),
                )
            )
        frames.append(Frame(t=int(rec["t"]), pose=pose, intrinsics=intr, size=size,
                            depth=frame_depth, segments=segments))
    frames.sort(key=lambda f: f.t)
    return SceneBundle(frames=frames, feature_dim=feature_dim)


def lift_mask(frame: Frame, seg: RawSegment) -> np.ndarray:
    """Back-project a mask+depth grid into world points.

    Pixel (u, v) with depth d maps to ((u-cx)d/fx, (v-cy)d/fy, d) in the
    camera frame, then through the camera-to-world pose. Zero-depth pixels
    are skipped.
    """
    if frame.pose is None or frame.intrinsics is None:
        raise MissingPose(f"frame {frame.t} lacks pose or intrinsics")
    if seg.mask is None or seg.depth is None:
        raise ShapeMismatch("segment has no mask/depth grids to lift")
    if seg.mask.shape != seg.depth.shape:
        raise ShapeMismatch(f"mask {seg.mask.shape} vs depth {seg.depth.shape}")
    fx, fy, cx, cy = frame.intrinsics
    vs, us = np.nonzero(seg.mask)
    d = seg.depth[vs, us]
    keep = d > 0
    us, vs, d = us[keep], vs[keep], d[keep]
    if us.size == 0:
        return np.empty((0, 3), dtype=np.float64)
    cam = np.stack([(us - cx) * d / fx, (vs - cy) * d / fy, d], axis=1)
    homo = np.concatenate([cam, np.ones((cam.shape[0], 1))], axis=1)
    world = homo @ frame.pose.T
    return world[:, :3]


def _border_contact_fraction(mask: np.ndarray) -> float:
    """Share of the mask's boundary pixels that lie on the image border."""
    inside = np.zeros_like(mask)
    inside[1:-1, 1:-1] = (
        mask[1:-1, 1:-1]
        & mask[:-2, 1:-1]
        & mask[2:, 1:-1]
        & mask[1:-1, :-2]
        & mask[1:-1, 2:]
    )
    boundary = mask & ~inside
    total = int(boundary.sum())
    if total == 0:
        return 0.0
    border = np.zeros_like(mask)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    on_border = int((boundary & border).sum())
    return on_border / total


def filter_and_build(bundle: SceneBundle, cfg: PipelineConfig) -> list[Segment]:
    """Apply size filters, lift, denoise, and assign monotone segment ids.

    Drops proposals under cfg.min_mask_pixels (when a pixel count is known),
    masks with excessive image-border contact (when mask grids are present),
    and lifted clouds under cfg.min_segment_points after DBSCAN denoising
    keeps only the largest cluster. Ids increase strictly in (frame, index)
    order over the survivors.
    """
    out: list[Segment] = []
    next_id = 0
    for frame in bundle.frames:
        for seg in frame.segments:
            if seg.visual_feature.shape[0] != bundle.feature_dim:
                raise BadFeatureDim(
                    f"visual feature has dim {seg.visual_feature.shape[0]}, bundle says {bundle.feature_dim}"
                )
            if seg.caption_feature.shape[0] != bundle.feature_dim:
                raise BadFeatureDim(
                    f"caption feature has dim {seg.caption_feature.shape[0]}, bundle says {bundle.feature_dim}"
                )
            if seg.pixel_count is not None and seg.pixel_count < cfg.min_mask_pixels:
                continue
            if seg.mask is not None and _border_contact_fraction(seg.mask) > cfg.border_fraction:
                continue
            if seg.points is not None:
                points = as_cloud(seg.points)
            else:
                points = lift_mask(frame, seg)
            if points.shape[0] > 0:
                labels = dbscan_points(points, cfg.denoise_eps, cfg.denoise_min_pts)
                keep = largest_cluster_mask(labels)
                points = points[keep]
            if points.shape[0] < cfg.min_segment_points:
                continue
            out.append(
                Segment(
                    id=next_id,
                    t=frame.t,
                    points=points,
                    voxels=voxelize(points, cfg.voxel_size),
                    f_v=seg.visual_feature,
                    f_c=seg.caption_feature,
                    caption=seg.caption,
                )
            )
            next_id += 1
    return out


# -- bundle writing (used by the synthetic generator and tests) ---------------

class BundleWriter:
    """Accumulates frames and float32 payloads, then writes manifest + blob."""

    def __init__(self, feature_dim: int):
        self.feature_dim = feature_dim
        self._chunks: list[np.ndarray] = []
        self._offset = 0
        self._frames: list[dict] = []

    def _push(self, arr: np.ndarray) -> int:
        flat = np.ascontiguousarray(arr, dtype="<f4").ravel()
        off = self._offset
        self._chunks.append(flat)
        self._offset += flat.size
        return off

    def ref_points(self, points: np.ndarray) -> dict:
        pts = np.asarray(points, dtype=np.float64)
        return {"offset": self._push(pts), "count": int(pts.shape[0])}

    def ref_grid(self, grid: np.ndarray) -> dict:
        g = np.asarray(grid, dtype=np.float64)
        return {"offset": self._push(g), "rows": int(g.shape[0]), "cols": int(g.shape[1])}

    def ref_feature(self, vec: np.ndarray) -> dict:
        v = np.asarray(vec, dtype=np.float32)
        if v.shape != (self.feature_dim,):
            raise BadFeatureDim(f"feature shape {v.shape} != ({self.feature_dim},)")
        return {"offset": self._push(v)}

    def add_frame(self, t: int, segments: list[dict], pose=None, intrinsics=None,
                  size=None, depth_ref=None) -> None:
        self._frames.append(
            {
                "type": "frame",
                "t": int(t),
                "pose": None if pose is None else [float(v) for v in np.asarray(pose).ravel()],
                "intrinsics": None if intrinsics is None else [float(v) for v in intrinsics],
                "size": None if size is None else [int(v) for v in size],
                "depth": depth_ref,
                "segments": segments,
            }
        )

    def write(self, manifest_path: str | Path) -> None:
        manifest_path = Path(manifest_path)
        blob_name = manifest_path.stem + ".bin"
        records = [{"type": "header", "feature_dim": self.feature_dim, "blob": blob_name}]
        records.extend(self._frames)
        text = "\n".join(json.dumps(rec, sort_keys=True) for rec in records) + "\n"
        manifest_path.write_text(text, encoding="utf-8")
        blob = (
            np.concatenate(self._chunks)
            if self._chunks
            else np.empty(0, dtype="<f4")
        )
        blob.astype("<f4").tofile(manifest_path.parent / blob_name)
