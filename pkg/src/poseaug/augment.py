"""Hard augmentations for consistency training.

Basic ops
---------
==== ====================================================================
A30  random rotation in (-30, 30) deg, random scale in [0.75, 1.25]
A60  as A30 with rotation range (-60, 60); A90 widens to (-90, 90)
CO   cutout: 5 zero-valued 20x20 patches at random positions
CM   cutmix: 2 20x20 patches copied from a donor image
MU   mixup: convex pixel blend with a donor image
JC   joint cutout: 5 zero 20x20 patches centered near predicted joints
JO   joint cut-occlude: 2 donor patches pasted near predicted joints
==== ====================================================================

Patch ops log every rectangle they touch (:class:`PatchRecord`), so tests
can account for changed pixels exactly.  :func:`build_hard_view` runs a
pipeline's patch ops on an easy view and finishes with one sampled outer
affine; the combination validator flags pipelines that stack ops known to
fight each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError, InvalidParameterError
from .geometry import AffineMap, JointState, KeypointSet, make_affine, warp_image
from .rng import RandomStream

__all__ = [
    "AugOp",
    "AugPipeline",
    "AugmentedView",
    "PatchRecord",
    "ComboReport",
    "Violation",
    "AFFINE_TAGS",
    "PIPELINE_PRESETS",
    "basic_op",
    "get_pipeline",
    "apply_cutout",
    "apply_cutmix",
    "apply_mixup",
    "apply_joint_cutout",
    "apply_joint_cutocclude",
    "sample_affine",
    "build_hard_view",
    "validate_combination",
]

AFFINE_TAGS = frozenset({"A30", "A60", "A90"})
PATCH_TAGS = frozenset({"CO", "CM", "JC", "JO"})
_ALL_TAGS = AFFINE_TAGS | PATCH_TAGS | {"MU"}

_ROTATION_RANGES = {"A30": 30.0, "A60": 60.0, "A90": 90.0}
_PATCH_DEFAULTS = {"CO": 5, "CM": 2, "JC": 5, "JO": 2}  # patch counts at size 20
DEFAULT_PATCH_SIZE = 20
DEFAULT_SCALE_RANGE = (0.75, 1.25)
DEFAULT_MIX_LAMBDA_RANGE = (0.3, 0.7)


@dataclass(frozen=True)
class AugOp:
    """One augmentation op with its hyper-parameters."""

    tag: str
    n_patches: int = 0
    patch_size: int = 0
    rotation_range_deg: float = 0.0
    scale_range: tuple[float, float] = DEFAULT_SCALE_RANGE
    mix_lambda_range: tuple[float, float] = DEFAULT_MIX_LAMBDA_RANGE

    def __post_init__(self):
        if self.tag not in _ALL_TAGS:
            raise InvalidParameterError(f"unknown op tag {self.tag!r}; known: {sorted(_ALL_TAGS)}")

    @property
    def is_affine(self) -> bool:
        return self.tag in AFFINE_TAGS


def basic_op(tag: str, **overrides) -> AugOp:
    """The op named ``tag`` with its stock hyper-parameters."""
    if tag in _ROTATION_RANGES:
        params = dict(rotation_range_deg=_ROTATION_RANGES[tag])
    elif tag in _PATCH_DEFAULTS:
        params = dict(n_patches=_PATCH_DEFAULTS[tag], patch_size=DEFAULT_PATCH_SIZE)
    elif tag == "MU":
        params = {}
    else:
        raise InvalidParameterError(f"unknown op tag {tag!r}; known: {sorted(_ALL_TAGS)}")
    params.update(overrides)
    return AugOp(tag, **params)


@dataclass(frozen=True)
class AugPipeline:
    """An ordered op list; affine ops may appear only first and/or last."""

    name: str
    ops: tuple[AugOp, ...]

    def __post_init__(self):
        ops = tuple(self.ops)
        object.__setattr__(self, "ops", ops)
        for i, op in enumerate(ops):
            if op.is_affine and i not in (0, len(ops) - 1):
                raise InvalidParameterError(
                    f"pipeline {self.name!r}: affine op at position {i}; affines may "
                    "only lead or trail"
                )
        if sum(op.is_affine for op in ops) > 2:
            raise InvalidParameterError(f"pipeline {self.name!r}: too many affine ops")

    @property
    def patch_ops(self) -> tuple[AugOp, ...]:
        return tuple(op for op in self.ops if not op.is_affine)


def _preset(name: str, *tags: str) -> AugPipeline:
    return AugPipeline(name, tuple(basic_op(t) for t in tags))


PIPELINE_PRESETS: dict[str, AugPipeline] = {
    # "A60" carries no patch ops: its difficulty is purely geometric and is
    # realized by the shared inner affine plus the sampled outer affine.
    "A60": _preset("A60"),
    "CO": _preset("CO", "CO"),
    "CM": _preset("CM", "CM"),
    "MU": _preset("MU", "MU"),
    "JC": _preset("JC", "JC"),
    "JO": _preset("JO", "JO"),
    "JOCO": _preset("JOCO", "JO", "CO"),
    "JCCM": _preset("JCCM", "JC", "CM"),
}


def get_pipeline(name: str) -> AugPipeline:
    try:
        return PIPELINE_PRESETS[name]
    except KeyError:
        raise InvalidParameterError(
            f"unknown pipeline {name!r}; valid presets: {', '.join(sorted(PIPELINE_PRESETS))}"
        ) from None


def with_patch_size(pipeline: AugPipeline, size: int) -> AugPipeline:
    """The same pipeline with every patch op resized to ``size`` pixels.

    The stock 20 px patches assume 256x192 inputs; desk-scale experiments
    shrink them proportionally to their input raster.
    """
    ops = tuple(
        replace(op, patch_size=size) if op.tag in PATCH_TAGS else op for op in pipeline.ops
    )
    return AugPipeline(pipeline.name, ops)


@dataclass(frozen=True)
class PatchRecord:
    """One rectangle touched by a patch op.

    ``dest``/``source`` are half-open ``(x0, y0, x1, y1)`` pixel rects after
    clipping; ``center`` is the pre-clip patch center for joint-seeded ops.
    """

    op: str
    dest: tuple[int, int, int, int]
    source: tuple[int, int, int, int] | None = None
    center: tuple[float, float] | None = None
    joint_index: int | None = None
    fallback: bool = False


@dataclass(frozen=True)
class AugmentedView:
    """A hard view plus everything needed to align a teacher signal to it."""

    image: np.ndarray
    relative_affine: AffineMap  # easy frame -> this view's frame
    patch_log: tuple[PatchRecord, ...] = ()
    mix_partner: tuple[int, float] | None = None  # (donor index, lambda)


def _zero_rect(img: np.ndarray, rect: tuple[int, int, int, int]) -> None:
    x0, y0, x1, y1 = rect
    img[y0:y1, x0:x1, :] = 0.0


def _clip_rect(x0: int, y0: int, size: int, w: int, h: int) -> tuple[int, int, int, int]:
    return (max(0, x0), max(0, y0), min(w, x0 + size), min(h, y0 + size))


def _corner(rng: RandomStream, limit: int) -> int:
    # Uniform over valid top-left corners; degenerate when the patch is
    # larger than the image, in which case it pins to 0 and clips.
    return int(rng.integers(0, max(limit, 0) + 1))


def apply_cutout(
    img: np.ndarray, rng: RandomStream, n: int, size: int
) -> tuple[np.ndarray, list[PatchRecord]]:
    """Zero ``n`` random ``size`` x ``size`` rectangles."""
    if n < 0 or size <= 0:
        raise InvalidParameterError(f"need n >= 0 and size > 0, got n={n} size={size}")
    h, w = img.shape[:2]
    out = img.copy()
    log = []
    for _ in range(n):
        x0 = _corner(rng, w - size)
        y0 = _corner(rng, h - size)
        rect = _clip_rect(x0, y0, size, w, h)
        _zero_rect(out, rect)
        log.append(PatchRecord("CO", rect))
    return out, log


def apply_cutmix(
    img: np.ndarray, donor: np.ndarray, rng: RandomStream, n: int, size: int
) -> tuple[np.ndarray, list[PatchRecord]]:
    """Copy ``n`` random donor rectangles to random destinations."""
    if img.shape != donor.shape:
        raise InvalidInputError(f"donor shape {donor.shape} != image shape {img.shape}")
    if n < 0 or size <= 0:
        raise InvalidParameterError(f"need n >= 0 and size > 0, got n={n} size={size}")
    h, w = img.shape[:2]
    out = img.copy()
    log = []
    for _ in range(n):
        sx = _corner(rng, w - size)
        sy = _corner(rng, h - size)
        dx = _corner(rng, w - size)
        dy = _corner(rng, h - size)
        src = _clip_rect(sx, sy, size, w, h)
        dst = _clip_rect(dx, dy, size, w, h)
        pw = min(src[2] - src[0], dst[2] - dst[0])
        ph = min(src[3] - src[1], dst[3] - dst[1])
        src = (src[0], src[1], src[0] + pw, src[1] + ph)
        dst = (dst[0], dst[1], dst[0] + pw, dst[1] + ph)
        out[dst[1] : dst[3], dst[0] : dst[2], :] = donor[src[1] : src[3], src[0] : src[2], :]
        log.append(PatchRecord("CM", dst, source=src))
    return out, log


def apply_mixup(img: np.ndarray, donor: np.ndarray, lam: float) -> np.ndarray:
    """Pixel-wise blend ``lam * img + (1 - lam) * donor``."""
    if img.shape != donor.shape:
        raise InvalidInputError(f"donor shape {donor.shape} != image shape {img.shape}")
    if not 0.0 <= lam <= 1.0:
        raise InvalidParameterError(f"lambda must be in [0, 1], got {lam}")
    return lam * img + (1.0 - lam) * donor


def _placeable_joints(joints: KeypointSet | None) -> np.ndarray:
    if joints is None:
        return np.empty(0, dtype=np.int64)
    return np.flatnonzero(joints.visible_mask)


def _pick_joints(rng: RandomStream, pool: np.ndarray, n: int) -> np.ndarray:
    # Without replacement while the pool lasts, with replacement otherwise.
    if len(pool) >= n:
        return pool[rng.choice(len(pool), size=n, replace=False)]
    return pool[rng.choice(len(pool), size=n, replace=True)]


def _jittered_rect(
    rng: RandomStream, joint_xy: np.ndarray, size: int, w: int, h: int
) -> tuple[tuple[int, int, int, int], tuple[float, float]]:
    jitter = rng.uniform(-size / 4.0, size / 4.0, size=2)
    cx, cy = float(joint_xy[0] + jitter[0]), float(joint_xy[1] + jitter[1])
    x0 = int(math.floor(cx - size / 2.0 + 0.5))
    y0 = int(math.floor(cy - size / 2.0 + 0.5))
    return _clip_rect(x0, y0, size, w, h), (cx, cy)


def apply_joint_cutout(
    img: np.ndarray, joints: KeypointSet | None, rng: RandomStream, n: int, size: int
) -> tuple[np.ndarray, list[PatchRecord]]:
    """Zero ``n`` rectangles centered near visible/predicted joints.

    Falls back to plain cutout (and marks the records) when no joints are
    placeable.
    """
    pool = _placeable_joints(joints)
    if len(pool) == 0:
        out, log = apply_cutout(img, rng, n, size)
        return out, [
            PatchRecord("JC", r.dest, fallback=True) for r in log
        ]
    if n < 0 or size <= 0:
        raise InvalidParameterError(f"need n >= 0 and size > 0, got n={n} size={size}")
    h, w = img.shape[:2]
    out = img.copy()
    log = []
    picked = _pick_joints(rng, pool, n)
    for j in picked:
        rect, center = _jittered_rect(rng, joints.xy[j], size, w, h)
        _zero_rect(out, rect)
        log.append(PatchRecord("JC", rect, center=center, joint_index=int(j)))
    return out, log


def apply_joint_cutocclude(
    img: np.ndarray,
    joints: KeypointSet | None,
    donor: np.ndarray,
    donor_joints: KeypointSet | None,
    rng: RandomStream,
    n: int,
    size: int,
) -> tuple[np.ndarray, list[PatchRecord]]:
    """Paste ``n`` donor patches cropped around donor joints onto rectangles
    centered near this image's joints.

    Source and destination windows are clipped consistently so pasted pixels
    always correspond 1:1 to donor pixels.  Falls back to plain cutmix when
    either joint set is empty.
    """
    if img.shape != donor.shape:
        raise InvalidInputError(f"donor shape {donor.shape} != image shape {img.shape}")
    dst_pool = _placeable_joints(joints)
    src_pool = _placeable_joints(donor_joints)
    if len(src_pool) == 0 or len(dst_pool) == 0:
        out, log = apply_cutmix(img, donor, rng, n, size)
        return out, [
            PatchRecord("JO", r.dest, source=r.source, fallback=True) for r in log
        ]
    if n < 0 or size <= 0:
        raise InvalidParameterError(f"need n >= 0 and size > 0, got n={n} size={size}")
    h, w = img.shape[:2]
    out = img.copy()
    log = []
    dst_joints = _pick_joints(rng, dst_pool, n)
    for j_dst in dst_joints:
        j_src = int(src_pool[rng.choice(len(src_pool), size=1)[0]])
        src_rect, _ = _jittered_rect(rng, donor_joints.xy[j_src], size, w, h)
        dst_rect, center = _jittered_rect(rng, joints.xy[j_dst], size, w, h)
        pw = min(src_rect[2] - src_rect[0], dst_rect[2] - dst_rect[0])
        ph = min(src_rect[3] - src_rect[1], dst_rect[3] - dst_rect[1])
        src_rect = (src_rect[0], src_rect[1], src_rect[0] + pw, src_rect[1] + ph)
        dst_rect = (dst_rect[0], dst_rect[1], dst_rect[0] + pw, dst_rect[1] + ph)
        out[dst_rect[1] : dst_rect[3], dst_rect[0] : dst_rect[2], :] = donor[
            src_rect[1] : src_rect[3], src_rect[0] : src_rect[2], :
        ]
        log.append(
            PatchRecord(
                "JO", dst_rect, source=src_rect, center=center, joint_index=int(j_dst)
            )
        )
    return out, log


def sample_affine(
    kind: str | AugOp, rng: RandomStream, center: tuple[float, float]
) -> AffineMap:
    """Draw rotation then scale uniformly from the kind's ranges."""
    op = basic_op(kind) if isinstance(kind, str) else kind
    if not op.is_affine:
        raise InvalidParameterError(f"{op.tag!r} is not an affine op kind")
    rot = float(rng.uniform(-op.rotation_range_deg, op.rotation_range_deg))
    scale = float(rng.uniform(op.scale_range[0], op.scale_range[1]))
    return make_affine(rot, scale, center)


def image_center(img: np.ndarray) -> tuple[float, float]:
    h, w = img.shape[:2]
    return ((w - 1) / 2.0, (h - 1) / 2.0)


def build_hard_view(
    easy_img: np.ndarray,
    easy_joints: KeypointSet | None,
    donor: tuple[np.ndarray, KeypointSet | None],
    pipeline: AugPipeline,
    rng: RandomStream,
    *,
    fisheye: bool = False,
    donor_index: int | None = None,
) -> AugmentedView:
    """Run a pipeline's patch ops on an easy view, then one outer affine.

    The returned ``relative_affine`` is exactly that outer affine (easy frame
    to hard frame), which is what aligns a teacher heatmap with this view.
    The outer draw defaults to A30 so that together with the shared inner
    A30 the hard view covers the A60 geometric budget; under a fisheye
    profile it widens to A60 for a total budget of A90.  A trailing affine
    op in the pipeline overrides the outer kind; a leading one adds an extra
    sampled warp before the patch ops.
    """
    donor_img, donor_joints = donor
    img = easy_img
    log: list[PatchRecord] = []
    mix_partner = None
    outer_kind: str | AugOp = "A60" if fisheye else "A30"

    ops = list(pipeline.ops)
    if ops and ops[0].is_affine and len(ops) > 1:
        lead = sample_affine(ops[0], rng.split("lead"), image_center(img))
        img = warp_image(img, lead, img.shape[:2])
        ops = ops[1:]
    if ops and ops[-1].is_affine:
        outer_kind = ops[-1]
        ops = ops[:-1]

    for idx, op in enumerate(ops):
        op_rng = rng.split("op", idx)
        if op.tag == "CO":
            img, recs = apply_cutout(img, op_rng, op.n_patches, op.patch_size)
        elif op.tag == "CM":
            img, recs = apply_cutmix(img, donor_img, op_rng, op.n_patches, op.patch_size)
        elif op.tag == "JC":
            img, recs = apply_joint_cutout(img, easy_joints, op_rng, op.n_patches, op.patch_size)
        elif op.tag == "JO":
            img, recs = apply_joint_cutocclude(
                img, easy_joints, donor_img, donor_joints, op_rng, op.n_patches, op.patch_size
            )
        elif op.tag == "MU":
            lam = float(op_rng.uniform(*op.mix_lambda_range))
            img = apply_mixup(img, donor_img, lam)
            mix_partner = (donor_index if donor_index is not None else -1, lam)
            recs = []
        else:  # pragma: no cover - guarded by AugPipeline validation
            raise InvalidParameterError(f"affine op {op.tag!r} inside pipeline body")
        log.extend(recs)

    outer = sample_affine(outer_kind, rng.split("outer"), image_center(img))
    view = warp_image(img, outer, img.shape[:2])
    return AugmentedView(view, outer, tuple(log), mix_partner)


@dataclass(frozen=True)
class Violation:
    principle: str  # "P1" | "P2" | "P3"
    pipeline: str
    message: str


@dataclass(frozen=True)
class ComboReport:
    verdict: str  # "recommended" | "warned"
    violations: tuple[Violation, ...] = ()


# Op pairs that stack the same kind of perturbation: two joint-seeded ops,
# a joint-seeded op with its area-random sibling, or both area-random ops.
_P2_PAIRS = (
    frozenset({"JC", "JO"}),
    frozenset({"JC", "CO"}),
    frozenset({"JO", "CM"}),
    frozenset({"CM", "CO"}),
)


def validate_combination(pipelines: list[AugPipeline]) -> ComboReport:
    """Check a multi-path pipeline set against the combination principles.

    P1: a pixel-blend (MU) stacked with any patch op; P2: two ops of the
    same perturbation family in one pipeline; P3: three or more patch ops
    in one pipeline.
    """
    violations: list[Violation] = []
    for pipe in pipelines:
        tags = [op.tag for op in pipe.patch_ops]
        tag_set = set(tags)
        if "MU" in tag_set and len(tags) >= 2:
            violations.append(
                Violation(
                    "P1",
                    pipe.name,
                    f"{pipe.name}: global pixel blending (MU) combined with "
                    f"{sorted(tag_set - {'MU'})} cancels out their occlusion signal",
                )
            )
        for pair in _P2_PAIRS:
            if pair <= tag_set:
                a, b = sorted(pair)
                violations.append(
                    Violation(
                        "P2",
                        pipe.name,
                        f"{pipe.name}: {a}+{b} stack the same perturbation family",
                    )
                )
        if len(tags) >= 3:
            violations.append(
                Violation(
                    "P3",
                    pipe.name,
                    f"{pipe.name}: {len(tags)} stacked patch ops over-corrupt the image",
                )
            )
    verdict = "recommended" if not violations else "warned"
    return ComboReport(verdict, tuple(violations))
