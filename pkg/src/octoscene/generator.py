"""Synthetic scene bundles with ground truth, for tests and acceptance runs.

A generated scene places box and rod objects on a loose grid, observes every
object in every frame as one or more jittered surface-sample segments
(over-segmentation is simulated by slicing each view into spatially disjoint
pieces), and optionally plants under-segments: a single proposal covering two
neighboring objects plus the dense slab joining them, with its feature biased
toward one of the two so the pooled semantics are visibly mixed.

Everything is driven by one RNG seeded from the spec, so identical specs
produce byte-identical bundles. The truth sidecar records, per emitted
segment in (frame, position) order, the owning object id or the planted
under-segment marker; that order matches the ids assigned at ingest as long
as the ingest filters keep every segment, which the generator guarantees by
construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadSpec
from .features import hash_embed
from .ingest import BundleWriter

VOCAB = (
    "vase", "chair", "table", "sofa", "lamp", "shelf", "monitor", "plant",
    "cabinet", "mug", "book", "rug", "door", "bin", "stool", "crate",
)


@dataclass
class SceneSpec:
    objects: int = 6
    shapes: tuple[str, ...] = ("box", "rod")
    points_per_object: int = 2000
    jitter_sigma: float = 0.005
    splits: int = 1
    under_segment_rate: float = 0.0
    frames: int = 6
    feature_dim: int = 64
    feature_noise: float = 0.02
    spacing: float = 2.2
    seed: int = 0

    def __post_init__(self):
        if self.objects < 0:
            raise BadSpec("objects must be >= 0")
        if self.frames < 1:
            raise BadSpec("frames must be >= 1")
        if self.splits < 1:
            raise BadSpec("splits must be >= 1")
        if not 0.0 <= self.under_segment_rate <= 1.0:
            raise BadSpec("under_segment_rate must be in [0, 1]")
        if self.points_per_object < 50:
            raise BadSpec("points_per_object must be >= 50")
        bad = set(self.shapes) - {"box", "rod"}
        if bad:
            raise BadSpec(f"unknown shapes: {sorted(bad)}")
        if not self.shapes:
            raise BadSpec("shapes must not be empty")

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        if "shapes" in data:
            data = dict(data, shapes=tuple(data["shapes"]))
        try:
            return cls(**data)
        except TypeError as exc:
            raise BadSpec(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "SceneSpec":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (json.JSONDecodeError, OSError) as exc:
            raise BadSpec(str(exc)) from exc


def _box_surface(rng: np.random.Generator, half: np.ndarray, n: int) -> np.ndarray:
    """Uniform-ish samples on a box surface centered at the origin."""
    areas = np.array(
        [half[1] * half[2], half[0] * half[2], half[0] * half[1]], dtype=np.float64
    )
    face_axis = rng.choice(3, size=n, p=areas / areas.sum())
    side = rng.choice((-1.0, 1.0), size=n)
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    pts[np.arange(n), face_axis] = side * half[face_axis]
    return pts

def _rod_points(rng: np.random.Generator, length: float, axis: int, n: int) -> np.ndarray:
    pts = np.zeros((n, 3))
    pts[:, axis] = rng.uniform(-length / 2.0, length / 2.0, size=n)
    return pts


@dataclass
class ObjectTruth:
    id: int
    shape: str
    caption: str
    center: list[float]
    size: list[float]


@dataclass
class SegmentTruth:
    segment_id: int
    t: int
    object_id: int | None
    under_segment: bool = False
    pair: list[int] | None = None


@dataclass
class SceneTruth:
    objects: list[ObjectTruth] = field(default_factory=list)
    segments: list[SegmentTruth] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "objects": [asdict(o) for o in self.objects],
            "segments": [asdict(s) for s in self.segments],
        }


def generate(spec: SceneSpec, manifest_path: str | Path) -> SceneTruth:
    """Write a bundle (manifest + blob) and return its ground truth.

    The truth is also written next to the manifest as <stem>.truth.json.
    """
    rng = np.random.default_rng(spec.seed)
    writer = BundleWriter(spec.feature_dim)
    truth = SceneTruth()

    side = max(1, int(np.ceil(np.sqrt(max(spec.objects, 1)))))
    base_points: list[np.ndarray] = []
    captions: list[str] = []
    for obj_id in range(spec.objects):
        shape = spec.shapes[obj_id % len(spec.shapes)]
        gx, gy = obj_id % side, obj_id // side
        center = np.array(
            [
                (gx + 0.5) * spec.spacing + rng.uniform(-0.2, 0.2),
                (gy + 0.5) * spec.spacing + rng.uniform(-0.2, 0.2),
                0.0,
            ]
        )
        if shape == "box":
            # sizes keep surface density high enough to survive denoising
            half = rng.uniform(0.10, 0.18, size=3)
            pts = _box_surface(rng, half, spec.points_per_object)
            center[2] = half[2]  # sit on the floor
            size = (2 * half).tolist()
        else:
            length = rng.uniform(1.2, 2.0)
            axis = int(rng.integers(0, 2))  # horizontal rods
            pts = _rod_points(rng, length, axis, spec.points_per_object)
            center[2] = rng.uniform(0.2, 0.8)
            size = [length if ax == axis else 0.0 for ax in range(3)]
        # unique captions keep distinct objects semantically separable
        caption = f"{VOCAB[obj_id % len(VOCAB)]} {obj_id}"
        base_points.append(pts + center)
        captions.append(caption)
        truth.objects.append(
            ObjectTruth(obj_id, shape, caption, center.tolist(), size)
        )

    feats = {c: hash_embed(c, spec.feature_dim) for c in captions}

    def noisy(vec: np.ndarray) -> np.ndarray:
        out = vec.astype(np.float64) + rng.normal(0.0, spec.feature_noise, size=vec.shape)
        return (out / np.linalg.norm(out)).astype(np.float32)

    # under-segments join two grounded (box) objects through a floor slab so
    # the proposal survives denoising as one cluster
    n_under = int(round(spec.under_segment_rate * spec.objects))
    box_ids = [o.id for o in truth.objects if o.shape == "box"]
    candidate_pairs = list(zip(box_ids, box_ids[1:]))
    under_pairs: list[tuple[int, int, int]] = []  # (frame, obj_a, obj_b)
    if n_under and candidate_pairs:
        for _ in range(n_under):
            a, b = candidate_pairs[int(rng.integers(0, len(candidate_pairs)))]
            frame = int(rng.integers(0, spec.frames))
            under_pairs.append((frame, a, b))

    segment_id = 0
    for t in range(spec.frames):
        segments = []
        frame_pieces: dict[int, list[np.ndarray]] = {}
        for obj_id in range(spec.objects):
            pts = base_points[obj_id]
            jittered = pts + rng.normal(0.0, spec.jitter_sigma, size=pts.shape)
            axis = int(rng.integers(0, 3))
            order = np.argsort(jittered[:, axis], kind="stable")
            pieces = np.array_split(order, spec.splits)
            frame_pieces[obj_id] = [jittered[idx] for idx in pieces if idx.size > 0]
            for piece in frame_pieces[obj_id]:
                vec = feats[captions[obj_id]]
                segments.append(
                    {
                        "pixel_count": int(piece.shape[0]) // 2,
                        "points": writer.ref_points(piece),
                        "mask": None,
                        "depth": None,
                        "f_v": writer.ref_feature(noisy(vec)),
                        "f_c": writer.ref_feature(noisy(vec)),
                        "caption": captions[obj_id],
                    }
                )
                truth.segments.append(SegmentTruth(segment_id, t, obj_id))
                segment_id += 1
        for frame, a, b in under_pairs:
            if frame != t:
                continue
            ca = np.array(truth.objects[a].center)
            cb = np.array(truth.objects[b].center)
            direction = cb - ca
            span = np.linalg.norm(direction[:2])
            width = 0.5
            n_slab = max(1500, int(2400 * span * width))
            u = rng.random(n_slab)
            w = rng.uniform(-width / 2.0, width / 2.0, size=n_slab)
            axis_dir = direction / max(span, 1e-9)
            perp = np.array([-axis_dir[1], axis_dir[0], 0.0])
            slab = ca + u[:, None] * direction + w[:, None] * perp
            slab[:, 2] = np.abs(rng.normal(0.0, 0.01, size=n_slab))
            merged = np.concatenate(
                frame_pieces[a] + frame_pieces[b] + [slab], axis=0
            )
            mix = 0.85 * feats[captions[a]].astype(np.float64) + 0.15 * feats[
                captions[b]
            ].astype(np.float64)
            mix = mix / np.linalg.norm(mix)
            segments.append(
                {
                    "pixel_count": int(merged.shape[0]) // 2,
                    "points": writer.ref_points(merged),
                    "mask": None,
                    "depth": None,
                    "f_v": writer.ref_feature(noisy(mix.astype(np.float32))),
                    "f_c": writer.ref_feature(noisy(mix.astype(np.float32))),
                    "caption": f"{captions[a]} and {captions[b]}",
                }
            )
            truth.segments.append(SegmentTruth(segment_id, t, None, under_segment=True, pair=[a, b]))
            segment_id += 1
        writer.add_frame(t, segments)

    manifest_path = Path(manifest_path)
    writer.write(manifest_path)
    truth_path = manifest_path.parent / (manifest_path.stem + ".truth.json")
    truth_path.write_text(json.dumps(truth.to_dict(), sort_keys=True, indent=1), encoding="utf-8")
    return truth
