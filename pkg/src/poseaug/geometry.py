"""Affine geometry over images, keypoints and heatmaps.

Conventions used throughout the package:

* pixel coordinates are ``(x, y)`` with y pointing down, origin at the
  top-left, pixel centers at integer coordinates;
* images are ``(H, W, 3)`` float64 arrays with values in ``[0, 1]``;
* heatmaps are ``(k, h, w)`` float64 arrays at an integer stride ``s`` so
  that ``h = H / s`` and ``w = W / s`` exactly;
* interpolation is bilinear with zero fill outside the source raster.

An :class:`AffineMap` maps *source* pixels to *destination* pixels.  Warping
an image by a map produces the image seen in the destination frame (sampling
happens through the inverse map).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTransformError, InvalidParameterError, ShapeError

__all__ = [
    "AffineMap",
    "JointState",
    "KeypointSet",
    "Heatmap",
    "make_affine",
    "compose",
    "invert",
    "apply_to_points",
    "warp_image",
    "warp_points",
    "warp_heatmap",
    "render_heatmaps",
    "decode_heatmaps",
]

_MIN_DET = 1e-12


class JointState(enum.IntEnum):
    """Visibility / provenance of a joint coordinate."""

    INVISIBLE = 0
    LABELED = 1
    PREDICTED = 2


@dataclass(frozen=True)
class AffineMap:
    """Invertible 2x3 pixel transform plus the parameters that generated it.

    ``matrix`` maps a source pixel ``(x, y, 1)`` to a destination pixel.
    ``rotation_deg`` / ``scale`` / ``center`` describe the map as a
    rotation-scale about a pivot; for maps built by :func:`make_affine` the
    matrix equals ``translate(center) . rotate . scale . translate(-center)``
    exactly, for composed or inverted maps they are re-derived from the
    matrix.
    """

    matrix: np.ndarray
    rotation_deg: float
    scale: float
    center: tuple[float, float]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ShapeError(f"affine matrix must be 2x3, got {m.shape}")
        if abs(np.linalg.det(m[:, :2])) < _MIN_DET:
            raise DegenerateTransformError("affine 2x2 block is singular")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "AffineMap":
        """Wrap a raw 2x3 matrix, deriving rotation/scale/center from it.

        The derivation assumes a similarity transform (rotation + uniform
        scale), which is the only kind produced in this package.  The center
        is the fixed point when one exists, else ``(0, 0)``.
        """
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (2, 3):
            raise ShapeError(f"affine matrix must be 2x3, got {m.shape}")
        a = m[:, :2]
        det = np.linalg.det(a)
        if abs(det) < _MIN_DET:
            raise DegenerateTransformError("affine 2x2 block is singular")
        scale = math.sqrt(abs(det))
        rotation_deg = math.degrees(math.atan2(a[1, 0], a[0, 0]))
        eye_minus = np.eye(2) - a
        if abs(np.linalg.det(eye_minus)) > 1e-9:
            center = tuple(np.linalg.solve(eye_minus, m[:, 2]))
        else:
            center = (0.0, 0.0)
        return cls(m, rotation_deg, scale, (float(center[0]), float(center[1])))

    @classmethod
    def identity(cls) -> "AffineMap":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), 0.0, 1.0, (0.0, 0.0))


def make_affine(rotation_deg: float, scale: float, center: tuple[float, float]) -> AffineMap:
    """Rotation by ``rotation_deg`` and uniform ``scale`` about ``center``.

    With the y-down convention a positive angle rotates ``(1, 0)`` towards
    ``(0, 1)``.  Raises :class:`InvalidParameterError` for ``scale <= 0``.
    """
    if not scale > 0:
        raise InvalidParameterError(f"scale must be positive, got {scale}")
    theta = math.radians(rotation_deg)
    c, s = math.cos(theta), math.sin(theta)
    cx, cy = float(center[0]), float(center[1])
    a = scale * np.array([[c, -s], [s, c]])
    t = np.array([cx, cy]) - a @ np.array([cx, cy])
    matrix = np.column_stack([a, t])
    return AffineMap(matrix, float(rotation_deg), float(scale), (cx, cy))


def compose(second: AffineMap, first: AffineMap) -> AffineMap:
    """The map applying ``first`` then ``second``."""
    a = second.matrix[:, :2] @ first.matrix[:, :2]
    t = second.matrix[:, :2] @ first.matrix[:, 2] + second.matrix[:, 2]
    return AffineMap.from_matrix(np.column_stack([a, t]))


def invert(a: AffineMap) -> AffineMap:
    """Inverse map; raises :class:`DegenerateTransformError` when singular."""
    block = a.matrix[:, :2]
    if abs(np.linalg.det(block)) < _MIN_DET:
        raise DegenerateTransformError("cannot invert a singular affine map")
    inv = np.linalg.inv(block)
    t = -inv @ a.matrix[:, 2]
    return AffineMap.from_matrix(np.column_stack([inv, t]))


def apply_to_points(a: AffineMap, points: np.ndarray) -> np.ndarray:
    """Apply the map to an ``(..., 2)`` array of ``(x, y)`` points."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ a.matrix[:, :2].T + a.matrix[:, 2]


@dataclass(frozen=True)
class KeypointSet:
    """``k`` ordered joints with per-joint state and confidence.

    ``xy`` is ``(k, 2)`` in image pixels; ``confidence`` is meaningful only
    for joints in the PREDICTED state and is 0 elsewhere.
    """

    xy: np.ndarray
    state: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        xy = np.array(self.xy, dtype=np.float64)
        state = np.array(self.state, dtype=np.int8)
        conf = np.array(self.confidence, dtype=np.float64)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ShapeError(f"xy must be (k, 2), got {xy.shape}")
        if state.shape != (xy.shape[0],) or conf.shape != (xy.shape[0],):
            raise ShapeError("state/confidence must be (k,)")
        for arr in (xy, state, conf):
            arr.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "state", state)
        object.__setattr__(self, "confidence", conf)

    @classmethod
    def labeled(cls, xy: np.ndarray) -> "KeypointSet":
        """All joints labeled-visible."""
        xy = np.asarray(xy, dtype=np.float64)
        k = xy.shape[0]
        return cls(xy, np.full(k, JointState.LABELED), np.zeros(k))

    @classmethod
    def predicted(cls, xy: np.ndarray, confidence: np.ndarray) -> "KeypointSet":
        xy = np.asarray(xy, dtype=np.float64)
        k = xy.shape[0]
        return cls(xy, np.full(k, JointState.PREDICTED), confidence)

    @property
    def num_joints(self) -> int:
        return self.xy.shape[0]

    @property
    def visible_mask(self) -> np.ndarray:
        return np.asarray(self.state) != JointState.INVISIBLE

    def with_state(self, state: np.ndarray) -> "KeypointSet":
        return KeypointSet(self.xy, state, self.confidence)


@dataclass(frozen=True)
class Heatmap:
    """``k``-channel response maps at integer stride ``s``.

    ``values`` has shape ``(k, h, w)``; a heatmap paired with an ``(H, W)``
    image satisfies ``h = H / s`` and ``w = W / s`` exactly.
    """

    values: np.ndarray
    stride: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeError(f"heatmap values must be (k, h, w), got {v.shape}")
        if int(self.stride) < 1:
            raise InvalidParameterError(f"stride must be >= 1, got {self.stride}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "stride", int(self.stride))

    @property
    def num_channels(self) -> int:
        return self.values.shape[0]


def _bilinear_sample(channels: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample ``(C, H, W)`` channels at float coords, zero outside.

    A neighbor contributes only when it lies inside the raster, so warps
    never read out of bounds and the fill value is exactly 0.
    """
    _, h, w = channels.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    out = np.zeros((channels.shape[0],) + sx.shape, dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            xi_c = np.clip(xi, 0, w - 1)
            yi_c = np.clip(yi, 0, h - 1)
            out += channels[:, yi_c, xi_c] * (wgt * valid)
    return out


def _warp_channels(channels: np.ndarray, a: AffineMap, out_hw: tuple[int, int]) -> np.ndarray:
    oh, ow = out_hw
    inv = invert(a).matrix
    xs, ys = np.meshgrid(np.arange(ow, dtype=np.float64), np.arange(oh, dtype=np.float64))
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    return _bilinear_sample(channels, sx, sy)


def warp_image(img: np.ndarray, a: AffineMap, out_size: tuple[int, int]) -> np.ndarray:
    """Warp an ``(H, W, 3)`` image into an ``out_size = (H', W')`` raster."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"image must be (H, W, C), got {img.shape}")
    oh, ow = int(out_size[0]), int(out_size[1])
    if oh <= 0 or ow <= 0:
        raise InvalidParameterError(f"out_size must be positive, got {out_size}")
    warped = _warp_channels(np.moveaxis(img, 2, 0), a, (oh, ow))
    return np.moveaxis(warped, 0, 2)


def warp_points(kps: KeypointSet, a: AffineMap, out_size: tuple[int, int] | None = None) -> KeypointSet:
    """Transform joint coordinates; optionally mark off-raster joints invisible.

    With ``out_size = (H, W)`` given, joints landing outside ``[0, W-1] x
    [0, H-1]`` become INVISIBLE; other states are preserved.
    """
    xy = apply_to_points(a, kps.xy)
    state = np.array(kps.state, dtype=np.int8)
    if out_size is not None:
        oh, ow = out_size
        inside = (
            (xy[:, 0] >= 0.0)
            & (xy[:, 0] <= ow - 1.0)
            & (xy[:, 1] >= 0.0)
            & (xy[:, 1] <= oh - 1.0)
        )
        state[~inside] = JointState.INVISIBLE
    return KeypointSet(xy, state, kps.confidence)


def warp_heatmap(hm: Heatmap, a: AffineMap) -> Heatmap:
    """Warp every channel by ``a`` (expressed in image-pixel coordinates).

    The translation column is rescaled by ``1/stride`` so that the map acts
    on heatmap pixels consistently with its action on image pixels.
    """
    m = np.array(a.matrix, dtype=np.float64)
    m[:, 2] /= hm.stride
    scaled = AffineMap.from_matrix(m)
    out = _warp_channels(hm.values, scaled, hm.values.shape[1:])
    return Heatmap(out, hm.stride)


def render_heatmaps(
    kps: KeypointSet,
    out_size: tuple[int, int],
    stride: int = 4,
    sigma: float = 2.0,
) -> Heatmap:
    """Render one Gaussian per joint at ``out_size = (H, W)`` image scale.

    Each visible joint's channel holds ``exp(-(d^2) / (2 sigma^2))`` around
    the joint position quantized to the nearest heatmap pixel, truncated to
    a 6-sigma window, peak exactly 1.0.  Invisible joints (and joints whose
    quantized center falls off the heatmap) give all-zero channels.
    """
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    oh, ow = int(out_size[0]), int(out_size[1])
    if oh % stride or ow % stride:
        raise ShapeError(f"out_size {out_size} not divisible by stride {stride}")
    hh, hw = oh // stride, ow // stride
    values = np.zeros((kps.num_joints, hh, hw), dtype=np.float64)
    half = int(math.ceil(3.0 * sigma))
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1]
    kernel = np.exp(-(xs**2 + ys**2) / (2.0 * sigma**2))
    for j in range(kps.num_joints):
        if kps.state[j] == JointState.INVISIBLE:
            continue
        mx = int(math.floor(kps.xy[j, 0] / stride + 0.5))
        my = int(math.floor(kps.xy[j, 1] / stride + 0.5))
        if mx < 0 or mx >= hw or my < 0 or my >= hh:
            continue
        x0, x1 = max(0, mx - half), min(hw, mx + half + 1)
        y0, y1 = max(0, my - half), min(hh, my + half + 1)
        kx0, ky0 = x0 - (mx - half), y0 - (my - half)
        values[j, y0:y1, x0:x1] = kernel[ky0 : ky0 + (y1 - y0), kx0 : kx0 + (x1 - x0)]
    return Heatmap(values, stride)


def decode_heatmaps(hm: Heatmap) -> KeypointSet:
    """Per-channel argmax decoded to image pixels.

    Ties break to the smallest row-major index; confidence is the channel
    maximum and all joints come back in the PREDICTED state.
    """
    k, _, w = hm.values.shape
    flat = hm.values.reshape(k, -1)
    idx = np.argmax(flat, axis=1)
    conf = flat[np.arange(k), idx]
    ys, xs = np.divmod(idx, w)
    xy = np.stack([xs, ys], axis=1).astype(np.float64) * hm.stride
    return KeypointSet.predicted(xy, conf)
