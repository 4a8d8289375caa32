"""Keypoint evaluation: OKS similarity, OKS-threshold mAP, and PCK/PCKh."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, ShapeError, UndefinedMetricError
from .geometry import JointState, KeypointSet

__all__ = [
    "OksConfig",
    "EvalPair",
    "ImageEval",
    "COCO_BODY17_KAPPAS",
    "oks",
    "average_precision",
    "pck",
    "OKS_THRESHOLDS",
]

# Per-joint falloff constants for the 17-joint body profile (nose, eyes,
# ears, shoulders, elbows, wrists, hips, knees, ankles), defined so that a
# displacement d scores exp(-d^2 / (2 * area * kappa^2)).
COCO_BODY17_KAPPAS = tuple(
    2.0 * s
    for s in (
        0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
        0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
    )
)

OKS_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
_RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class OksConfig:
    """Falloff constants per joint; ``uniform`` builds κ_j = kappa for all."""

    kappas: tuple[float, ...]

    def __post_init__(self):
        if any(k <= 0 for k in self.kappas):
            raise InvalidParameterError("all falloff constants must be positive")

    @classmethod
    def uniform(cls, num_joints: int, kappa: float = 0.1) -> "OksConfig":
        return cls((kappa,) * num_joints)

    @classmethod
    def coco_body17(cls) -> "OksConfig":
        return cls(COCO_BODY17_KAPPAS)


@dataclass(frozen=True)
class EvalPair:
    """One predicted/ground-truth instance pair.

    ``area`` must be positive for OKS; ``head_size`` must be positive for
    PCKh.  ``score`` is the instance-level detection score used to order
    predictions during AP matching.
    """

    predicted: KeypointSet
    truth: KeypointSet
    area: float | None = None
    head_size: float | None = None
    score: float = 1.0


@dataclass(frozen=True)
class ImageEval:
    """All predictions and ground truths of a single image."""

    predictions: tuple[EvalPair, ...] = ()  # each pair's .truth is unused here
    truths: tuple[tuple[KeypointSet, float], ...] = ()  # (keypoints, area)


def oks(pair: EvalPair, cfg: OksConfig) -> float:
    """Mean over labeled-visible joints of ``exp(-d^2 / (2 area kappa^2))``."""
    return _oks_arrays(pair.predicted, pair.truth, pair.area, cfg)


def _oks_arrays(pred: KeypointSet, truth: KeypointSet, area: float | None, cfg: OksConfig) -> float:
    labeled = np.asarray(truth.state) != JointState.INVISIBLE
    if not labeled.any():
        raise UndefinedMetricError("OKS undefined: ground truth has no labeled joints")
    if area is None or area <= 0:
        raise UndefinedMetricError("OKS requires a positive instance area")
    if pred.num_joints != truth.num_joints:
        raise ShapeError("prediction/truth joint counts differ")
    kappas = np.asarray(cfg.kappas, dtype=np.float64)
    if kappas.shape[0] != truth.num_joints:
        raise ShapeError("falloff constant count does not match joint count")
    d2 = ((pred.xy - truth.xy) ** 2).sum(axis=1)
    scores = np.exp(-d2 / (2.0 * area * kappas**2))
    return float(scores[labeled].mean())


def _match_image(image: ImageEval, threshold: float, cfg: OksConfig):
    """Greedy score-ordered matching; each GT is claimed at most once.

    Returns (scores, tp_flags) for this image's predictions.
    """
    order = sorted(
        range(len(image.predictions)),
        key=lambda i: (-image.predictions[i].score, i),
    )
    taken = [False] * len(image.truths)
    scores, flags = [], []
    for i in order:
        pred = image.predictions[i]
        best_j, best_oks = -1, 0.0
        for j, (gt, area) in enumerate(image.truths):
            if taken[j]:
                continue
            value = _oks_arrays(pred.predicted, gt, area, cfg)
            if value >= threshold and value > best_oks:
                best_j, best_oks = j, value
        if best_j >= 0:
            taken[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
        scores.append(pred.score)
    return scores, flags


def _ap_from_flags(scores: np.ndarray, flags: np.ndarray, num_gt: int) -> float:
    if num_gt == 0:
        return 0.0
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = flags[order].astype(np.float64)
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / num_gt
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-12)
    # 101-point interpolation: precision at each recall point is the best
    # precision achieved at that recall or beyond.
    p_interp = np.zeros_like(_RECALL_POINTS)
    running_max = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, _RECALL_POINTS, side="left")
    valid = idx < len(recall)
    p_interp[valid] = running_max[idx[valid]]
    return float(p_interp.mean())


def average_precision(
    images: list[ImageEval],
    cfg: OksConfig,
    thresholds: tuple[float, ...] = OKS_THRESHOLDS,
) -> tuple[float, dict[float, float]]:
    """mAP over OKS thresholds with 101-point interpolated AP per threshold."""
    num_gt = sum(len(img.truths) for img in images)
    per_threshold: dict[float, float] = {}
    for thr in thresholds:
        all_scores, all_flags = [], []
        for img in images:
            scores, flags = _match_image(img, thr, cfg)
            all_scores.extend(scores)
            all_flags.extend(flags)
        per_threshold[thr] = _ap_from_flags(np.asarray(all_scores), np.asarray(all_flags), num_gt)
    mean_ap = float(np.mean(list(per_threshold.values()))) if per_threshold else 0.0
    return mean_ap, per_threshold


def pck(
    pair: EvalPair,
    alpha: float,
    normalizer: str = "bbox-diag",
    bbox_diag: float | None = None,
) -> tuple[np.ndarray, float]:
    """Per-joint hit flags and hit rate at tolerance ``alpha * normalizer``.

    ``normalizer`` is ``"head"`` (PCKh, uses ``pair.head_size``) or
    ``"bbox-diag"`` (uses ``bbox_diag``).  A joint displaced by exactly the
    tolerance counts as a hit.
    """
    if normalizer == "head":
        length = pair.head_size
    elif normalizer == "bbox-diag":
        length = bbox_diag
    else:
        raise InvalidParameterError(f"unknown normalizer {normalizer!r}")
    if length is None or length <= 0:
        raise UndefinedMetricError(f"missing or non-positive {normalizer} normalizer")
    labeled = np.asarray(pair.truth.state) != JointState.INVISIBLE
    if not labeled.any():
        raise UndefinedMetricError("PCK undefined: no labeled joints")
    d = np.sqrt(((pair.predicted.xy - pair.truth.xy) ** 2).sum(axis=1))
    hits = (d <= alpha * length) & labeled
    rate = float(hits.sum() / labeled.sum())
    return hits, rate
