"""Datasets: COCO-schema keypoint ingestion, synthetic stick figures, splits.

Every dataset, including generated synthetic ones, lives on disk as a
directory of PNGs plus one ``annotations.json`` in the COCO keypoint schema
(``images``, ``annotations`` with ``keypoints`` triplets / ``area`` /
``bbox`` / ``iscrowd``, ``categories``), so all downstream code speaks one
format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import DatasetParseError, InvalidParameterError
from .geometry import JointState, KeypointSet
from .metrics import OksConfig
from .rng import RandomStream

__all__ = [
    "Profile",
    "PROFILES",
    "Sample",
    "DatasetIndex",
    "SynthConfig",
    "save_png",
    "load_png",
    "parse_coco_keypoints",
    "write_coco_annotations",
    "generate_synthetic",
    "write_synthetic_dataset",
    "split_labeled_unlabeled",
    "load_sample_image",
]

CROP_PADDING = 0.25  # fraction of bbox width/height added on each side


@dataclass(frozen=True)
class Profile:
    """Dataset family: joint count, OKS falloffs, geometric budget."""

    name: str
    num_joints: int
    oks: OksConfig
    fisheye: bool = False


PROFILES: dict[str, Profile] = {
    "body17": Profile("body17", 17, OksConfig.coco_body17()),
    "hand21": Profile("hand21", 21, OksConfig.uniform(21)),
    "synth13": Profile("synth13", 13, OksConfig.uniform(13)),
    "fisheye-body": Profile("fisheye-body", 17, OksConfig.coco_body17(), fisheye=True),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise InvalidParameterError(
            f"unknown profile {name!r}; valid: {', '.join(sorted(PROFILES))}"
        ) from None


@dataclass
class Sample:
    """One person instance: an image (path or in-memory) plus optional labels."""

    image_id: int
    image_path: Path | None = None
    image: np.ndarray | None = None
    keypoints: KeypointSet | None = None
    bbox: tuple[float, float, float, float] | None = None  # x, y, w, h
    area: float | None = None
    head_size: float | None = None
    crop: tuple[float, float, float, float] | None = None  # padded crop rect
    annotation_id: int | None = None
    image_missing: bool = False

    @property
    def labeled(self) -> bool:
        return self.keypoints is not None

    @property
    def bbox_diag(self) -> float | None:
        if self.bbox is None:
            return None
        return math.hypot(self.bbox[2], self.bbox[3])


@dataclass
class DatasetIndex:
    samples: list[Sample]
    profile: Profile
    skipped_crowd: int = 0
    skipped_unlabeled: int = 0

    def __len__(self) -> int:
        return len(self.samples)


def save_png(path: str | Path, img: np.ndarray) -> None:
    """8-bit PNG; real values rounded half-up."""
    arr = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_png(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def _parse_triplets(raw, k: int, ann_id) -> KeypointSet:
    if len(raw) != 3 * k:
        raise DatasetParseError(
            f"annotation {ann_id}: 'keypoints' has {len(raw)} values, expected {3 * k}"
        )
    xy = np.empty((k, 2), dtype=np.float64)
    state = np.empty(k, dtype=np.int8)
    for j in range(k):
        x, y, v = raw[3 * j], raw[3 * j + 1], raw[3 * j + 2]
        xy[j] = (x, y)
        state[j] = JointState.INVISIBLE if v == 0 else JointState.LABELED
    return KeypointSet(xy, state, np.zeros(k))


def parse_coco_keypoints(annotation_file: str | Path, profile: str | Profile = "body17") -> DatasetIndex:
    """Index a COCO keypoint annotation file.

    One sample per non-crowd annotation with at least one labeled joint;
    visibility 0 maps to INVISIBLE, 1 and 2 both map to LABELED.  Person
    crops are the annotation bbox padded by 25% on every side.  Samples
    whose image file is absent are indexed but flagged.
    """
    profile = get_profile(profile) if isinstance(profile, str) else profile
    path = Path(annotation_file)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    for key in ("images", "annotations"):
        if key not in doc:
            raise DatasetParseError(f"{path}: missing top-level field {key!r}")

    image_files: dict[int, Path] = {}
    for entry in doc["images"]:
        try:
            image_files[entry["id"]] = path.parent / entry["file_name"]
        except KeyError as exc:
            raise DatasetParseError(f"{path}: image entry missing field {exc}") from exc

    index = DatasetIndex([], profile)
    for ann in doc["annotations"]:
        ann_id = ann.get("id")
        if ann.get("iscrowd", 0):
            index.skipped_crowd += 1
            continue
        try:
            kps = _parse_triplets(ann["keypoints"], profile.num_joints, ann_id)
            bbox = tuple(float(v) for v in ann["bbox"])
            area = float(ann["area"])
            image_id = ann["image_id"]
        except KeyError as exc:
            raise DatasetParseError(f"{path}: annotation {ann_id}: missing field {exc}") from exc
        if not kps.visible_mask.any():
            index.skipped_unlabeled += 1
            continue
        if image_id not in image_files:
            raise DatasetParseError(f"{path}: annotation {ann_id}: unknown image_id {image_id}")
        x, y, w, h = bbox
        crop = (x - CROP_PADDING * w, y - CROP_PADDING * h, x + (1 + CROP_PADDING) * w, y + (1 + CROP_PADDING) * h)
        img_path = image_files[image_id]
        index.samples.append(
            Sample(
                image_id=image_id,
                image_path=img_path,
                keypoints=kps,
                bbox=bbox,
                area=area,
                head_size=float(ann["head_size"]) if "head_size" in ann else None,
                crop=crop,
                annotation_id=ann_id,
                image_missing=not img_path.exists(),
            )
        )
    return index


def write_coco_annotations(index: DatasetIndex, path: str | Path) -> None:
    """Serialize an index back to the COCO keypoint schema."""
    images, annotations, seen = [], [], set()
    for sample in index.samples:
        if sample.image_id not in seen:
            seen.add(sample.image_id)
            if sample.image is not None:
                height, width = sample.image.shape[:2]
            elif sample.image_path is not None and sample.image_path.exists():
                with PILImage.open(sample.image_path) as im:
                    width, height = im.size
            else:
                height = width = 0
            images.append(
                dict(id=sample.image_id, file_name=sample.image_path.name if sample.image_path else "", height=height, width=width)
            )
        if sample.keypoints is None:
            continue
        kps = sample.keypoints
        triplets = []
        for j in range(kps.num_joints):
            visible = kps.state[j] != JointState.INVISIBLE
            triplets.extend([float(kps.xy[j, 0]), float(kps.xy[j, 1]), 2 if visible else 0])
        ann = dict(
            id=sample.annotation_id,
            image_id=sample.image_id,
            category_id=1,
            keypoints=triplets,
            area=sample.area,
            bbox=list(sample.bbox) if sample.bbox else None,
            iscrowd=0,
        )
        if sample.head_size is not None:
            ann["head_size"] = sample.head_size
        annotations.append(ann)
    doc = dict(
        images=images,
        annotations=annotations,
        categories=[dict(id=1, name="figure", keypoints=[f"j{i}" for i in range(index.profile.num_joints)])],
    )
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


# --- synthetic stick figures -------------------------------------------------

# 13 joints: head plus left/right shoulder, elbow, wrist, hip, knee, ankle.
JOINT_NAMES = (
    "head",
    "l_shoulder", "r_shoulder",
    "l_elbow", "r_elbow",
    "l_wrist", "r_wrist",
    "l_hip", "r_hip",
    "l_knee", "r_knee",
    "l_ankle", "r_ankle",
)

_LEFT = (1, 3, 5, 7, 9, 11)
_RIGHT = (2, 4, 6, 8, 10, 12)

# Limb tints disambiguate body sides at desk scale.
_COLOR_LEFT = np.array([0.55, 1.0, 0.75])
_COLOR_RIGHT = np.array([1.0, 0.7, 0.55])
_COLOR_AXIS = np.array([0.95, 0.95, 0.88])


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic dataset knobs; every sample is deterministic per seed.

    ``rotation_deg`` is the whole-figure orientation range: poses are
    uniformly rotated in ``(-rotation_deg, +rotation_deg)``, which makes
    orientation a genuine axis of variation in the data distribution.
    """

    height: int = 64
    width: int = 48
    noise: float = 0.08
    seed: int = 0
    margin: int = 3
    limb_radius: float = 1.4
    rotation_deg: float = 50.0


def _dir(angle_rad: float) -> np.ndarray:
    # Angle measured from straight down (y+), positive towards x+.
    return np.array([math.sin(angle_rad), math.cos(angle_rad)])


def _sample_pose(rng: RandomStream, rotation_deg: float) -> tuple[np.ndarray, float]:
    """Joint positions in canonical units plus the head radius."""
    u = lambda a, b: float(rng.uniform(a, b))
    torso = math.radians(u(-25, 25))
    torso_len = u(14, 18)
    shoulder_w = u(5, 7)
    hip_w = u(4, 6)
    head_len = u(4, 6)
    head_r = u(2.0, 3.0)

    neck = np.zeros(2)
    down = _dir(torso)
    perp = np.array([down[1], -down[0]])  # 90 deg counter-clockwise in y-down
    pelvis = neck + torso_len * down
    head = neck - (head_len + head_r) * down

    joints = np.zeros((13, 2))
    joints[0] = head
    joints[1] = neck - shoulder_w * perp
    joints[2] = neck + shoulder_w * perp
    joints[7] = pelvis - hip_w * perp
    joints[8] = pelvis + hip_w * perp

    upper_arm = u(7, 10)
    forearm = u(6, 9)
    for sh, el, wr, side in ((1, 3, 5, -1.0), (2, 4, 6, 1.0)):
        a1 = torso + math.radians(u(-80, 80)) + side * math.radians(u(0, 15))
        joints[el] = joints[sh] + upper_arm * _dir(a1)
        a2 = a1 + side * math.radians(u(5, 110))
        joints[wr] = joints[el] + forearm * _dir(a2)

    thigh = u(9, 12)
    shin = u(8, 11)
    for hp, kn, an, side in ((7, 9, 11, -1.0), (8, 10, 12, 1.0)):
        a1 = torso + math.radians(u(-35, 35))
        joints[kn] = joints[hp] + thigh * _dir(a1)
        a2 = a1 - side * math.radians(u(0, 60))
        joints[an] = joints[kn] + shin * _dir(a2)

    # Whole-figure orientation, applied about the joint centroid.
    theta = math.radians(u(-rotation_deg, rotation_deg))
    c, s = math.cos(theta), math.sin(theta)
    centroid = joints.mean(axis=0)
    rel = joints - centroid
    joints = centroid + rel @ np.array([[c, s], [-s, c]])

    return joints, head_r


def _segments(joints: np.ndarray) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    neck = (joints[1] + joints[2]) / 2.0
    pelvis = (joints[7] + joints[8]) / 2.0
    segs = [
        (joints[0], neck, _COLOR_AXIS),
        (neck, pelvis, _COLOR_AXIS),
        (joints[1], joints[2], _COLOR_AXIS),
        (joints[7], joints[8], _COLOR_AXIS),
    ]
    for a, b in ((1, 3), (3, 5), (7, 9), (9, 11)):
        segs.append((joints[a], joints[b], _COLOR_LEFT))
    for a, b in ((2, 4), (4, 6), (8, 10), (10, 12)):
        segs.append((joints[a], joints[b], _COLOR_RIGHT))
    return segs


def _render_figure(cfg: SynthConfig, joints: np.ndarray, head_r: float, rng: RandomStream) -> np.ndarray:
    h, w = cfg.height, cfg.width
    img = cfg.noise * rng.uniform(0.0, 1.0, size=(h, w, 3))
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    aa = 1.0

    def paint(dist: np.ndarray, radius: float, color: np.ndarray, gain: float) -> None:
        cov = np.clip((radius + aa / 2.0 - dist) / aa, 0.0, 1.0)
        layer = cov[:, :, None] * (gain * color)[None, None, :]
        np.maximum(img, layer, out=img)

    for a, b, color in _segments(joints):
        ab = b - a
        denom = float(ab @ ab)
        if denom < 1e-12:
            t = np.zeros_like(xs)
        else:
            t = np.clip(((xs - a[0]) * ab[0] + (ys - a[1]) * ab[1]) / denom, 0.0, 1.0)
        dx = xs - (a[0] + t * ab[0])
        dy = ys - (a[1] + t * ab[1])
        gain = float(rng.uniform(0.82, 1.0))
        paint(np.sqrt(dx * dx + dy * dy), cfg.limb_radius, color, gain)

    head_gain = float(rng.uniform(0.88, 1.0))
    d_head = np.sqrt((xs - joints[0, 0]) ** 2 + (ys - joints[0, 1]) ** 2)
    paint(d_head, head_r, _COLOR_AXIS, head_gain)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(cfg: SynthConfig, count: int) -> DatasetIndex:
    """Generate ``count`` in-memory stick-figure samples with exact labels."""
    if count <= 0:
        raise InvalidParameterError(f"count must be positive, got {count}")
    profile = PROFILES["synth13"]
    index = DatasetIndex([], profile)
    root = RandomStream(cfg.seed, "synth")
    h, w, margin = cfg.height, cfg.width, cfg.margin
    for i in range(count):
        rng = root.split("sample", i)
        joints, head_r = _sample_pose(rng.split("pose"), cfg.rotation_deg)

        pad = cfg.limb_radius + head_r
        lo = joints.min(axis=0) - pad
        hi = joints.max(axis=0) + pad
        span = hi - lo
        fit = min((w - 2 * margin) / span[0], (h - 2 * margin) / span[1])
        scale = fit * float(rng.split("fit").uniform(0.8, 1.0))
        joints = (joints - lo) * scale
        head_r *= scale
        span *= scale
        slack = np.array([w, h]) - span - 2 * margin
        offset = margin + slack * rng.split("place").uniform(0.0, 1.0, size=2)
        joints += offset

        img = _render_figure(cfg, joints, head_r, rng.split("render"))
        kps = KeypointSet.labeled(joints)
        x0, y0 = joints.min(axis=0)
        x1, y1 = joints.max(axis=0)
        bbox = (float(x0), float(y0), float(x1 - x0), float(y1 - y0))
        index.samples.append(
            Sample(
                image_id=i,
                image=img,
                keypoints=kps,
                bbox=bbox,
                area=float(bbox[2] * bbox[3]),
                head_size=float(2.0 * head_r),
                annotation_id=i,
            )
        )
    return index


def write_synthetic_dataset(cfg: SynthConfig, count: int, out_dir: str | Path) -> DatasetIndex:
    """Generate and persist a synthetic dataset (PNGs + annotations.json)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = generate_synthetic(cfg, count)
    for sample in index.samples:
        name = f"img_{sample.image_id:06d}.png"
        save_png(out / name, sample.image)
        sample.image_path = out / name
    write_coco_annotations(index, out / "annotations.json")
    return index


def load_dataset(root: str | Path, profile: str | Profile = "synth13") -> DatasetIndex:
    return parse_coco_keypoints(Path(root) / "annotations.json", profile)


def load_sample_image(sample: Sample) -> np.ndarray:
    if sample.image is not None:
        return sample.image
    if sample.image_path is None or sample.image_missing:
        raise InvalidParameterError(f"sample {sample.image_id} has no image data")
    return load_png(sample.image_path)


def split_labeled_unlabeled(
    index: DatasetIndex, labeled_count: int, seed: int | None = None, shuffled: bool = False
) -> tuple[DatasetIndex, DatasetIndex]:
    """Deterministic prefix split; the unlabeled half is stripped of labels.

    The default takes the first ``labeled_count`` samples in index order;
    ``shuffled=True`` permutes with ``seed`` first.
    """
    if labeled_count > len(index.samples):
        raise InvalidParameterError(
            f"labeled_count {labeled_count} exceeds dataset size {len(index.samples)}"
        )
    order = list(range(len(index.samples)))
    if shuffled:
        order = list(RandomStream(0 if seed is None else seed, "split").permutation(len(order)))
    labeled = [index.samples[i] for i in order[:labeled_count]]
    unlabeled = [
        replace(index.samples[i], keypoints=None, bbox=None, area=None, head_size=None)
        for i in order[labeled_count:]
    ]
    return (
        DatasetIndex(labeled, index.profile),
        DatasetIndex(unlabeled, index.profile),
    )
