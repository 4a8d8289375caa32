"""Consistency training: losses, view construction, and the train loops.

Each unlabeled image is warped once by a shared inner affine into an *easy*
view.  The network's prediction on the easy view (computed without
gradients) is the teacher signal; every consistency path re-augments the
easy view with its own patch ops and outer affine, and the teacher heatmap
is carried into that path's frame by the same outer affine.  Losses from
all paths are optimized jointly; gradients never flow through teacher
signals, which is what keeps the training from collapsing onto constant
heatmaps.

Dual mode trains two independently initialized networks on the same views
and swaps their teacher signals, so each network learns from the other's
easy-view predictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as mdl
from .augment import (
    AugPipeline,
    AugmentedView,
    build_hard_view,
    get_pipeline,
    image_center,
    sample_affine,
    with_patch_size,
)
from .data import DatasetIndex, Sample, load_sample_image
from .errors import ContractError, InvalidInputError, InvalidParameterError, ShapeError
from .geometry import (
    AffineMap,
    Heatmap,
    JointState,
    KeypointSet,
    apply_to_points,
    decode_heatmaps,
    render_heatmaps,
    warp_heatmap,
    warp_image,
    warp_points,
)
from .metrics import EvalPair, ImageEval, average_precision, pck
from .parallel import ordered_map
from .rng import RandomStream

__all__ = [
    "TeacherSignal",
    "UnsupMode",
    "TrainConfig",
    "EvalConfig",
    "ConsistencyBatch",
    "supervised_loss",
    "consistency_loss",
    "multipath_unsup_loss",
    "build_consistency_batch",
    "train_step_single",
    "train_step_dual",
    "run_training",
    "evaluate",
    "rank_augmentations",
]


# --- losses -------------------------------------------------------------


@dataclass(frozen=True)
class TeacherSignal:
    """A heatmap batch marked as gradient-free teacher output."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def _mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    loss = float((diff * diff).mean())
    return loss, (2.0 / diff.size) * diff


def supervised_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return _mse(pred, target)


def consistency_loss(teacher: TeacherSignal, student: np.ndarray) -> tuple[float, np.ndarray]:
    """MSE between a teacher signal and a student prediction.

    The gradient is w.r.t. the student only; passing a bare array as the
    teacher raises :class:`ContractError` because the no-gradient marker is
    part of the contract.
    """
    if not isinstance(teacher, TeacherSignal):
        raise ContractError("teacher must be wrapped in TeacherSignal (stop-gradient marker)")
    student = np.asarray(student, dtype=np.float64)
    if student.shape != teacher.values.shape:
        raise ShapeError(f"student shape {student.shape} != teacher shape {teacher.values.shape}")
    return _mse(student, teacher.values)


@dataclass(frozen=True)
class UnsupMode:
    """How multi-path consistency terms are combined.

    ``multi-loss`` sums per-path MSEs; ``confidence-mask`` keeps only
    channels whose teacher peak exceeds ``tau`` (mean over survivors);
    ``heatmap-fusion`` averages student heatmaps before a single MSE.
    """

    tag: str = "multi-loss"
    tau: float = 0.5

    _ALIASES = {
        "ml": "multi-loss", "multi-loss": "multi-loss",
        "cm": "confidence-mask", "confidence-mask": "confidence-mask",
        "hf": "heatmap-fusion", "heatmap-fusion": "heatmap-fusion",
    }

    def __post_init__(self):
        try:
            object.__setattr__(self, "tag", self._ALIASES[self.tag])
        except KeyError:
            raise InvalidParameterError(
                f"unknown unsup mode {self.tag!r}; valid: multi-loss (ml), "
                "confidence-mask (cm), heatmap-fusion (hf)"
            ) from None
        if not 0.0 < self.tau < 1.0:
            raise InvalidParameterError(f"tau must be in (0, 1), got {self.tau}")


@dataclass
class MultipathLoss:
    total: float
    per_path: tuple[float, ...]
    student_grads: list[np.ndarray]


def _as_teacher_list(teacher, n: int) -> list[TeacherSignal]:
    teachers = list(teacher) if isinstance(teacher, (list, tuple)) else [teacher] * n
    if len(teachers) != n:
        raise InvalidInputError(f"{len(teachers)} teachers for {n} students")
    for t in teachers:
        if not isinstance(t, TeacherSignal):
            raise ContractError("teacher must be wrapped in TeacherSignal (stop-gradient marker)")
    return teachers


def multipath_unsup_loss(teacher, students: list[np.ndarray], mode: UnsupMode) -> MultipathLoss:
    """Combine ``n`` easy-hard consistency terms under the given mode.

    ``teacher`` is a single :class:`TeacherSignal` shared by every path or a
    sequence with one per path (warped teachers differ per path whenever the
    paths drew different outer affines).
    """
    if not students:
        raise InvalidInputError("at least one student prediction is required")
    n = len(students)
    teachers = _as_teacher_list(teacher, n)
    students = [np.asarray(s, dtype=np.float64) for s in students]
    for t, s in zip(teachers, students):
        if s.shape != t.values.shape:
            raise ShapeError(f"student shape {s.shape} != teacher shape {t.values.shape}")

    if mode.tag == "multi-loss":
        per_path, grads = [], []
        for t, s in zip(teachers, students):
            loss, g = _mse(s, t.values)
            per_path.append(loss)
            grads.append(g)
        return MultipathLoss(float(sum(per_path)), tuple(per_path), grads)

    if mode.tag == "confidence-mask":
        # Channel (b, c) of path i participates iff its teacher peak > tau.
        masks = [t.values.max(axis=(-2, -1)) > mode.tau for t in teachers]
        included = int(sum(m.sum() for m in masks))
        per_path, grads = [], []
        if included == 0:
            return MultipathLoss(0.0, tuple(0.0 for _ in students), [np.zeros_like(s) for s in students])
        for t, s, m in zip(teachers, students, masks):
            diff = s - t.values
            pixels = diff.shape[-2] * diff.shape[-1]
            channel_mse = (diff * diff).sum(axis=(-2, -1)) / pixels
            per_path.append(float(channel_mse[m].sum() / included))
            g = (2.0 / (pixels * included)) * diff * m[..., None, None]
            grads.append(g)
        return MultipathLoss(float(sum(per_path)), tuple(per_path), grads)

    # heatmap-fusion: one MSE against the averaged student heatmaps, with
    # the gradient split equally across paths.
    fused_teacher = np.mean([t.values for t in teachers], axis=0)
    fused_student = np.mean(students, axis=0)
    loss, g = _mse(fused_student, fused_teacher)
    grads = [g / n for _ in students]
    return MultipathLoss(loss, tuple(loss / n for _ in students), grads)


# --- consistency batches -------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs besides the datasets themselves."""

    paths: tuple[str, ...] = ("JOCO", "JC", "JCCM", "JO")
    lambda_u: float = 1.0
    epochs: int = 40
    batch_size: int = 10
    lr_schedule: tuple[tuple[int, float], ...] = ((0, 1e-3),)
    network_mode: str = "single"
    unsup_mode: UnsupMode = UnsupMode()
    warmup_frac: float = 0.1
    stride: int = 4
    sigma: float = 2.0
    joint_confidence: float = 0.3
    patch_size: int | None = None  # None: scale the stock 20 px to the input raster
    fisheye: bool = False

    def __post_init__(self):
        if self.network_mode not in ("single", "dual"):
            raise InvalidParameterError(f"network_mode must be single|dual, got {self.network_mode!r}")
        if self.lambda_u < 0:
            raise InvalidParameterError("lambda_u must be >= 0")
        object.__setattr__(self, "paths", tuple(self.paths))
        object.__setattr__(self, "lr_schedule", tuple((int(e), float(r)) for e, r in self.lr_schedule))

    def pipelines(self, image_size: tuple[int, int] | None = None) -> tuple[AugPipeline, ...]:
        """Path pipelines, with patch ops rescaled for the input raster.

        The stock 20 px patches are proportioned for 256x192 inputs; for a
        different raster the same fraction of the image is patched.
        """
        pipes = tuple(get_pipeline(name) for name in self.paths)
        size = self.patch_size
        if size is None and image_size is not None:
            size = max(2, round(20 * min(image_size[0] / 256.0, image_size[1] / 192.0)))
        if size is not None:
            pipes = tuple(with_patch_size(p, size) for p in pipes)
        return pipes

    @property
    def warmup_epochs(self) -> int:
        return int(self.epochs * self.warmup_frac)


@dataclass
class ConsistencyBatch:
    """One easy view per image plus ``n`` hard views and aligned teachers."""

    easy_images: np.ndarray  # (N, H, W, 3)
    inner_affines: list[AffineMap]
    teacher_heatmaps: list[TeacherSignal]  # per path, each (N, k, h, w)
    hard_images: list[np.ndarray]  # per path, each (N, H, W, 3)
    views: list[list[AugmentedView]]  # [path][sample]
    pipelines: tuple[AugPipeline, ...]
    fallback_patches: int
    teacher_forwards: int


@dataclass
class _EasyPhase:
    images: np.ndarray
    inner: list[AffineMap]
    joints: list[KeypointSet]
    heatmaps: list[np.ndarray]  # one (N, k, h, w) array per network


def _easy_phase(images: np.ndarray, nets, rng: RandomStream, cfg: TrainConfig) -> _EasyPhase:
    n = images.shape[0]
    size = images.shape[1:3]
    center = ((size[1] - 1) / 2.0, (size[0] - 1) / 2.0)
    inner = [sample_affine("A30", rng.split("inner", i), center) for i in range(n)]
    easy = np.stack([warp_image(images[i], inner[i], size) for i in range(n)])

    heatmaps = [mdl.forward(net, easy).heatmaps for net in nets]  # no grads kept
    mean_hm = np.mean(heatmaps, axis=0)
    joints = []
    for i in range(n):
        kps = decode_heatmaps(Heatmap(mean_hm[i], cfg.stride))
        state = np.where(
            kps.confidence >= cfg.joint_confidence, kps.state, JointState.INVISIBLE
        ).astype(np.int8)
        joints.append(kps.with_state(state))
    return _EasyPhase(easy, inner, joints, heatmaps)


def _build_views(
    easy: _EasyPhase, pipelines, rng: RandomStream, cfg: TrainConfig
) -> list[list[AugmentedView]]:
    n = easy.images.shape[0]

    def one(args):
        p, i = args
        donor = (i + 1) % n
        return build_hard_view(
            easy.images[i],
            easy.joints[i],
            (easy.images[donor], easy.joints[donor]),
            pipelines[p],
            rng.split("path", p, "sample", i),
            fisheye=cfg.fisheye,
            donor_index=donor,
        )

    flat = ordered_map(one, [(p, i) for p in range(len(pipelines)) for i in range(n)])
    return [flat[p * n : (p + 1) * n] for p in range(len(pipelines))]


def _warp_teacher(heatmaps: np.ndarray, views: list[AugmentedView], stride: int) -> TeacherSignal:
    warped = [
        warp_heatmap(Heatmap(heatmaps[i], stride), views[i].relative_affine).values
        for i in range(len(views))
    ]
    return TeacherSignal(np.stack(warped))


def build_consistency_batch(
    images: np.ndarray,
    net: mdl.TinyPoseNet,
    pipelines,
    rng: RandomStream,
    cfg: TrainConfig | None = None,
) -> ConsistencyBatch:
    """Two-phase view construction for a batch of unlabeled images.

    Phase 1 draws one inner A30 per image, runs a single teacher forward on
    the easy views and decodes joints (confidence >= the configured
    threshold) to seed the joint-aware patch ops.  Phase 2 builds each
    path's hard view with an independent outer affine, and warps the one
    easy prediction into each path's frame.
    """
    cfg = cfg or TrainConfig()
    pipelines = tuple(get_pipeline(p) if isinstance(p, str) else p for p in pipelines)
    if not pipelines:
        raise InvalidInputError("at least one pipeline path is required")
    easy = _easy_phase(np.asarray(images, dtype=np.float64), [net], rng, cfg)
    views = _build_views(easy, pipelines, rng, cfg)
    teachers = [_warp_teacher(easy.heatmaps[0], path_views, cfg.stride) for path_views in views]
    hard = [np.stack([v.image for v in path_views]) for path_views in views]
    fallbacks = sum(
        rec.fallback for path_views in views for v in path_views for rec in v.patch_log
    )
    return ConsistencyBatch(
        easy.images, easy.inner, teachers, hard, views, pipelines, int(fallbacks), 1
    )


# --- train steps ---------------------------------------------------------


@dataclass
class StepReport:
    loss_sup: float
    unsup_per_path: tuple[float, ...]
    loss_unsup: float
    lambda_u: float

    @property
    def total(self) -> float:
        return self.loss_sup + self.lambda_u * self.loss_unsup


def prepare_supervised_batch(
    images: np.ndarray, keypoints: list[KeypointSet], rng: RandomStream, cfg: TrainConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Easy-augment labeled images and render their target heatmaps."""
    n = images.shape[0]
    size = images.shape[1:3]
    center = ((size[1] - 1) / 2.0, (size[0] - 1) / 2.0)
    out_images, targets = [], []
    for i in range(n):
        a = sample_affine("A30", rng.split("sup", i), center)
        out_images.append(warp_image(images[i], a, size))
        kps = warp_points(keypoints[i], a, size)
        targets.append(render_heatmaps(kps, size, cfg.stride, cfg.sigma).values)
    return np.stack(out_images), np.stack(targets)


def frozen_teacher_loss(
    net: mdl.TinyPoseNet,
    labeled_images: np.ndarray,
    labeled_targets: np.ndarray,
    cbatch: ConsistencyBatch | None,
    cfg: TrainConfig,
    lambda_u: float,
) -> float:
    """Total step loss as a pure function of the parameters.

    Teacher heatmaps inside ``cbatch`` stay fixed, so finite differences of
    this function probe exactly the gradient the step is supposed to take
    (the stop-gradient contract).
    """
    fwd = mdl.forward(net, labeled_images)
    loss, _ = supervised_loss(fwd.heatmaps, labeled_targets)
    if cbatch is not None and lambda_u > 0:
        students = [mdl.forward(net, imgs).heatmaps for imgs in cbatch.hard_images]
        unsup = multipath_unsup_loss(cbatch.teacher_heatmaps, students, cfg.unsup_mode)
        loss += lambda_u * unsup.total
    return loss


def _step_grads(
    net: mdl.TinyPoseNet,
    labeled_images: np.ndarray,
    labeled_targets: np.ndarray,
    cbatch: ConsistencyBatch | None,
    teachers: list[TeacherSignal] | None,
    cfg: TrainConfig,
    lambda_u: float,
) -> tuple[StepReport, dict[str, np.ndarray]]:
    fwd = mdl.forward(net, labeled_images)
    loss_sup, dout = supervised_loss(fwd.heatmaps, labeled_targets)
    grads = mdl.backward(net, fwd.cache, dout)

    per_path: tuple[float, ...] = ()
    loss_unsup = 0.0
    if cbatch is not None and lambda_u > 0:
        passes = [mdl.forward(net, imgs) for imgs in cbatch.hard_images]
        unsup = multipath_unsup_loss(
            teachers if teachers is not None else cbatch.teacher_heatmaps,
            [p.heatmaps for p in passes],
            cfg.unsup_mode,
        )
        for fp, g in zip(passes, unsup.student_grads):
            grads = mdl.accumulate_grads(grads, mdl.backward(net, fp.cache, lambda_u * g))
        per_path = unsup.per_path
        loss_unsup = unsup.total
    return StepReport(loss_sup, per_path, loss_unsup, lambda_u), grads


def _effective_lambda(cfg: TrainConfig, epoch: int) -> float:
    return 0.0 if epoch < cfg.warmup_epochs else cfg.lambda_u


def train_step_single(
    net: mdl.TinyPoseNet,
    state: mdl.AdamState,
    labeled: tuple[np.ndarray, list[KeypointSet]],
    unlabeled_images: np.ndarray,
    cfg: TrainConfig,
    rng: RandomStream,
    epoch: int = 0,
):
    """One optimizer step of single-network consistency training.

    Returns ``(net, state, report)``.  With an effective lambda of zero the
    unlabeled half is skipped entirely, making the update bit-identical to
    a purely supervised step.
    """
    images, keypoints = labeled
    if images.shape[0] != unlabeled_images.shape[0]:
        raise InvalidInputError(
            f"labeled/unlabeled counts differ: {images.shape[0]} vs {unlabeled_images.shape[0]}"
        )
    lam = _effective_lambda(cfg, epoch)
    sup_images, sup_targets = prepare_supervised_batch(images, keypoints, rng, cfg)
    cbatch = None
    if lam > 0:
        pipelines = cfg.pipelines(unlabeled_images.shape[1:3])
        cbatch = build_consistency_batch(unlabeled_images, net, pipelines, rng.split("unsup"), cfg)
    report, grads = _step_grads(net, sup_images, sup_targets, cbatch, None, cfg, lam)
    state.epoch = epoch
    net, state = mdl.adam_step(state, net, grads)
    return net, state, report


def train_step_dual(
    net_a: mdl.TinyPoseNet,
    net_b: mdl.TinyPoseNet,
    state_a: mdl.AdamState,
    state_b: mdl.AdamState,
    labeled: tuple[np.ndarray, list[KeypointSet]],
    unlabeled_images: np.ndarray,
    cfg: TrainConfig,
    rng: RandomStream,
    epoch: int = 0,
):
    """One cross-teaching step: B's teacher trains A's students and vice versa.

    Both networks see the same labeled batch and the same hard views; only
    the teacher signals are swapped.  Returns
    ``(net_a, net_b, state_a, state_b, report_a, report_b)``.
    """
    images, keypoints = labeled
    if images.shape[0] != unlabeled_images.shape[0]:
        raise InvalidInputError(
            f"labeled/unlabeled counts differ: {images.shape[0]} vs {unlabeled_images.shape[0]}"
        )
    lam = _effective_lambda(cfg, epoch)
    sup_images, sup_targets = prepare_supervised_batch(images, keypoints, rng, cfg)

    cbatch_a = cbatch_b = None
    teachers_a = teachers_b = None
    if lam > 0:
        # Joints for the joint-aware ops come from the mean of both easy
        # predictions, which keeps the construction symmetric in (A, B).
        pipelines = cfg.pipelines(unlabeled_images.shape[1:3])
        easy = _easy_phase(np.asarray(unlabeled_images, dtype=np.float64), [net_a, net_b], rng.split("unsup"), cfg)
        views = _build_views(easy, pipelines, rng.split("unsup"), cfg)
        hard = [np.stack([v.image for v in path_views]) for path_views in views]
        warped = [
            [_warp_teacher(hm, path_views, cfg.stride) for path_views in views]
            for hm in easy.heatmaps
        ]
        fallbacks = sum(r.fallback for pv in views for v in pv for r in v.patch_log)
        cbatch_a = ConsistencyBatch(
            easy.images, easy.inner, warped[1], hard, views, pipelines, fallbacks, 2
        )
        cbatch_b = ConsistencyBatch(
            easy.images, easy.inner, warped[0], hard, views, pipelines, fallbacks, 2
        )
        teachers_a, teachers_b = warped[1], warped[0]  # swapped teacher signals

    report_a, grads_a = _step_grads(net_a, sup_images, sup_targets, cbatch_a, teachers_a, cfg, lam)
    report_b, grads_b = _step_grads(net_b, sup_images, sup_targets, cbatch_b, teachers_b, cfg, lam)
    state_a.epoch = epoch
    state_b.epoch = epoch
    net_a, state_a = mdl.adam_step(state_a, net_a, grads_a)
    net_b, state_b = mdl.adam_step(state_b, net_b, grads_b)
    return net_a, net_b, state_a, state_b, report_a, report_b


# --- data plumbing and the epoch loop ------------------------------------


def _crop_resize_affine(crop: tuple[float, float, float, float], out_hw: tuple[int, int]) -> AffineMap:
    x0, y0, x1, y1 = crop
    sx = out_hw[1] / max(x1 - x0, 1e-9)
    sy = out_hw[0] / max(y1 - y0, 1e-9)
    matrix = np.array([[sx, 0.0, -sx * x0], [0.0, sy, -sy * y0]])
    return AffineMap.from_matrix(matrix)


def materialize(index: DatasetIndex, image_size: tuple[int, int]):
    """Load every sample as a fixed-size array plus its transformed labels."""
    images, keypoints = [], []
    for sample in index.samples:
        img = load_sample_image(sample)
        kps = sample.keypoints
        if sample.crop is not None:
            a = _crop_resize_affine(sample.crop, image_size)
            img = warp_image(img, a, image_size)
            kps = warp_points(kps, a, image_size) if kps is not None else None
        elif img.shape[:2] != tuple(image_size):
            crop = (0.0, 0.0, float(img.shape[1]), float(img.shape[0]))
            a = _crop_resize_affine(crop, image_size)
            img = warp_image(img, a, image_size)
            kps = warp_points(kps, a, image_size) if kps is not None else None
        images.append(img)
        keypoints.append(kps)
    return np.stack(images), keypoints


@dataclass
class TrainResult:
    nets: list[mdl.TinyPoseNet]
    states: list[mdl.AdamState]
    loss_rows: list[list]
    loss_header: list[str]
    eval_rows: list[list]  # (epoch, model, value)
    final_metric: float | None


@dataclass(frozen=True)
class EvalConfig:
    metric: str = "pck"  # pck | pckh | oks
    alpha: float = 0.2

    def __post_init__(self):
        if self.metric not in ("pck", "pckh", "oks"):
            raise InvalidParameterError(f"unknown metric {self.metric!r}; valid: pck, pckh, oks")


@dataclass
class EvalReport:
    metric: str
    rows: list[tuple[str, float]]  # (model name, value); last row is the mean for >1 net
    features: dict[str, np.ndarray]

    @property
    def mean(self) -> float:
        return self.rows[-1][1]


def _instance_score(kps: KeypointSet) -> float:
    return float(kps.confidence.mean())


def evaluate(
    nets,
    index: DatasetIndex,
    eval_cfg: EvalConfig,
    image_size: tuple[int, int],
    batch_size: int = 64,
    names: tuple[str, ...] | None = None,
    _materialized=None,
) -> EvalReport:
    """Per-model metrics on clean (un-augmented) images, plus their mean.

    Also returns each model's pooled feature vectors for spectrum analysis.
    """
    nets = list(nets)
    names = names or tuple(f"net_{chr(ord('a') + i)}" for i in range(len(nets)))
    images, keypoints = _materialized if _materialized else materialize(index, image_size)
    samples = index.samples

    rows: list[tuple[str, float]] = []
    features: dict[str, np.ndarray] = {}
    for net, name in zip(nets, names):
        batches = [
            mdl.forward(net, images[i : i + batch_size])
            for i in range(0, images.shape[0], batch_size)
        ]
        heatmaps = np.concatenate([b.heatmaps for b in batches])
        features[name] = np.concatenate([b.features for b in batches])

        if eval_cfg.metric == "oks":
            groups = []
            for i, sample in enumerate(samples):
                pred = decode_heatmaps(Heatmap(heatmaps[i], 4))
                pair = EvalPair(pred, keypoints[i], area=_materialized_area(sample, keypoints[i]), score=_instance_score(pred))
                groups.append(ImageEval((pair,), ((keypoints[i], pair.area),)))
            value, _ = average_precision(groups, index.profile.oks)
        else:
            rates = []
            for i, sample in enumerate(samples):
                pred = decode_heatmaps(Heatmap(heatmaps[i], 4))
                pair = EvalPair(pred, keypoints[i], head_size=_materialized_head(sample, keypoints[i]))
                if eval_cfg.metric == "pckh":
                    _, rate = pck(pair, 0.5, "head")
                else:
                    _, rate = pck(pair, eval_cfg.alpha, "bbox-diag", bbox_diag=_materialized_diag(keypoints[i]))
                rates.append(rate)
            value = float(np.mean(rates))
        rows.append((name, value))
    if len(nets) > 1:
        rows.append(("mean", float(np.mean([v for _, v in rows]))))
    return EvalReport(eval_cfg.metric, rows, features)


def _materialized_diag(kps: KeypointSet | None) -> float | None:
    if kps is None:
        return None
    vis = kps.visible_mask
    if not vis.any():
        return None
    xy = kps.xy[vis]
    span = xy.max(axis=0) - xy.min(axis=0)
    return float(math.hypot(span[0], span[1]))


def _materialized_area(sample: Sample, kps: KeypointSet | None) -> float | None:
    # Area of the visible-joint bounding box in the materialized frame; the
    # original annotation area is in source-image pixels, not crop pixels.
    if kps is None:
        return sample.area
    vis = kps.visible_mask
    if not vis.any():
        return sample.area
    xy = kps.xy[vis]
    span = xy.max(axis=0) - xy.min(axis=0)
    return float(max(span[0] * span[1], 1.0))


def _materialized_head(sample: Sample, kps: KeypointSet | None) -> float | None:
    return sample.head_size


def run_training(
    labeled: DatasetIndex,
    unlabeled: DatasetIndex,
    val: DatasetIndex | None,
    cfg: TrainConfig,
    eval_cfg: EvalConfig,
    seed: int,
    image_size: tuple[int, int],
    eval_every: int = 1,
) -> TrainResult:
    """The full epoch loop for single or dual mode.

    An epoch is one shuffled pass over the labeled set; unlabeled images are
    drawn cyclically from their own shuffled order so every batch pairs
    equal numbers of labeled and unlabeled samples.
    """
    k = labeled.profile.num_joints
    dual = cfg.network_mode == "dual"
    nets = [mdl.init_params(seed, k, name) for name in (("A", "B") if dual else ("",))]
    states = [mdl.AdamState.for_net(net, cfg.lr_schedule) for net in nets]

    lab_images, lab_kps = materialize(labeled, image_size)
    if len(unlabeled) == 0:
        # No unlabeled data: the run degenerates to supervised training.
        cfg = replace(cfg, lambda_u=0.0)
        unl_images = lab_images
    else:
        unl_images, _ = materialize(unlabeled, image_size)
    val_cache = materialize(val, image_size) if val is not None else None
    root = RandomStream(seed, "train")

    n_lab, n_unl = lab_images.shape[0], unl_images.shape[0]
    steps_per_epoch = max(1, math.ceil(n_lab / cfg.batch_size))

    if dual:
        loss_header = ["step", "loss_sup_a", "loss_sup_b"]
        loss_header += [f"loss_u_a_{p}" for p in cfg.paths] + [f"loss_u_b_{p}" for p in cfg.paths]
        loss_header += ["loss_unsup_a", "loss_unsup_b", "total_a", "total_b"]
    else:
        loss_header = ["step", "loss_sup"] + [f"loss_u_{p}" for p in cfg.paths] + ["loss_unsup", "total"]

    loss_rows: list[list] = []
    eval_rows: list[list] = []
    unl_cursor = 0
    unl_order = np.arange(n_unl)
    step = 0
    for epoch in range(cfg.epochs):
        lab_order = root.split("order", "sup", epoch).permutation(n_lab)
        for s in range(steps_per_epoch):
            sel = lab_order[s * cfg.batch_size : (s + 1) * cfg.batch_size]
            batch_images = lab_images[sel]
            batch_kps = [lab_kps[i] for i in sel]
            take = len(sel)
            unl_sel = []
            while len(unl_sel) < take:
                if unl_cursor == 0:
                    unl_order = root.split("order", "unsup", epoch, s).permutation(n_unl)
                grab = min(take - len(unl_sel), n_unl - unl_cursor)
                unl_sel.extend(unl_order[unl_cursor : unl_cursor + grab])
                unl_cursor = (unl_cursor + grab) % n_unl
            batch_unl = unl_images[np.asarray(unl_sel)]

            rng = root.split("epoch", epoch, "step", s)
            if dual:
                nets[0], nets[1], states[0], states[1], rep_a, rep_b = train_step_dual(
                    nets[0], nets[1], states[0], states[1], (batch_images, batch_kps), batch_unl, cfg, rng, epoch
                )
                pad = lambda r: list(r.unsup_per_path) or [0.0] * len(cfg.paths)
                loss_rows.append(
                    [step, rep_a.loss_sup, rep_b.loss_sup]
                    + pad(rep_a) + pad(rep_b)
                    + [rep_a.loss_unsup, rep_b.loss_unsup, rep_a.total, rep_b.total]
                )
            else:
                nets[0], states[0], rep = train_step_single(
                    nets[0], states[0], (batch_images, batch_kps), batch_unl, cfg, rng, epoch
                )
                per = list(rep.unsup_per_path) or [0.0] * len(cfg.paths)
                loss_rows.append([step, rep.loss_sup] + per + [rep.loss_unsup, rep.total])
            step += 1
        if val is not None and eval_every and (epoch + 1) % eval_every == 0:
            report = evaluate(nets, val, eval_cfg, image_size, _materialized=val_cache)
            for name, value in report.rows:
                eval_rows.append([epoch, name, value])

    final = None
    if val is not None:
        final = evaluate(nets, val, eval_cfg, image_size, _materialized=val_cache).mean
    return TrainResult(nets, states, loss_rows, loss_header, eval_rows, final)


def rank_augmentations(
    candidates: list[str],
    labeled: DatasetIndex,
    unlabeled: DatasetIndex,
    val: DatasetIndex,
    cfg: TrainConfig,
    eval_cfg: EvalConfig,
    seed: int,
    image_size: tuple[int, int],
):
    """Train one single-path run per candidate under identical settings.

    Returns ``(ranking, curves)``: ranking rows ``(rank, candidate, best)``
    ordered by best validation metric (ties keep input order), and curve
    rows ``(candidate, epoch, value)``.
    """
    curves: list[tuple[str, int, float]] = []
    best: list[tuple[str, float]] = []
    for name in candidates:
        run_cfg = TrainConfig(
            paths=(name,),
            lambda_u=cfg.lambda_u,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            lr_schedule=cfg.lr_schedule,
            network_mode="single",
            unsup_mode=cfg.unsup_mode,
            warmup_frac=cfg.warmup_frac,
            stride=cfg.stride,
            sigma=cfg.sigma,
            joint_confidence=cfg.joint_confidence,
            fisheye=cfg.fisheye,
        )
        result = run_training(labeled, unlabeled, val, run_cfg, eval_cfg, seed, image_size)
        per_epoch = [(row[0], row[2]) for row in result.eval_rows if row[1] in ("net_a", "mean")]
        for epoch, value in per_epoch:
            curves.append((name, epoch, value))
        best.append((name, max((v for _, v in per_epoch), default=0.0)))
    order = sorted(range(len(best)), key=lambda i: (-best[i][1], i))
    ranking = [(rank + 1, best[i][0], best[i][1]) for rank, i in enumerate(order)]
    return ranking, curves
