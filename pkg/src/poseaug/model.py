"""A tiny convolutional heatmap regressor with hand-written gradients.

conv(3->16, 3x3, stride 2) - relu - conv(16->32, 3x3, stride 2) - relu -
conv(32->k, 1x1).  Output maps are input/4 on each side, matching the
default heatmap stride; the feature vector is the global average pool of
the second rectified layer (D = 32).  Everything runs in float64 so the
analytic gradients can be held to tight finite-difference tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, ShapeError
from .rng import RandomStream
from . import tensorio

__all__ = [
    "TinyPoseNet",
    "ForwardPass",
    "AdamState",
    "init_params",
    "forward",
    "backward",
    "adam_step",
    "save_checkpoint",
    "load_checkpoint",
]

FEATURE_DIM = 32
_HID1, _HID2 = 16, FEATURE_DIM

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "head_w", "head_b")


@dataclass(frozen=True)
class TinyPoseNet:
    """Parameter container; treat instances as immutable."""

    conv1_w: np.ndarray  # (16, 3, 3, 3)  as (out_c, in_c, kh, kw)
    conv1_b: np.ndarray  # (16,)
    conv2_w: np.ndarray  # (32, 16, 3, 3)
    conv2_b: np.ndarray  # (32,)
    head_w: np.ndarray  # (k, 32)
    head_b: np.ndarray  # (k,)

    @property
    def num_joints(self) -> int:
        return self.head_w.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def num_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def with_params(self, params: dict[str, np.ndarray]) -> "TinyPoseNet":
        return replace(self, **params)


def init_params(seed: int, num_joints: int, name: str = "") -> TinyPoseNet:
    """Fan-in-scaled uniform weights, zero biases; deterministic per seed.

    ``name`` disambiguates peer networks initialized from one seed (dual
    training uses "A" and "B").
    """
    rng = RandomStream(seed, "init", name) if name else RandomStream(seed, "init")

    def w(name, shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.split(name).uniform(-bound, bound, size=shape)

    return TinyPoseNet(
        conv1_w=w("conv1_w", (_HID1, 3, 3, 3), 3 * 9),
        conv1_b=np.zeros(_HID1),
        conv2_w=w("conv2_w", (_HID2, _HID1, 3, 3), _HID1 * 9),
        conv2_b=np.zeros(_HID2),
        head_w=w("head_w", (num_joints, _HID2), _HID2),
        head_b=np.zeros(num_joints),
    )


def _im2col(x: np.ndarray, stride: int) -> np.ndarray:
    # x: (N, C, H+2, W+2) already padded; 3x3 windows at the given stride,
    # returned as (N, H_out, W_out, C*9).
    win = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, C, H_out, W_out, 3, 3)
    win = win.transpose(0, 2, 3, 1, 4, 5)
    n, ho, wo = win.shape[:3]
    return win.reshape(n, ho, wo, -1)


def _conv3x3(x, w, b, stride=2):
    # x: (N, C, H, W); w: (O, C, 3, 3). Padding 1 keeps H_out = H/stride.
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col(xp, stride)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.transpose(0, 3, 1, 2), cols


def _conv3x3_backward(dout, cols, w, x_shape, stride=2):
    # dout: (N, O, H_out, W_out); returns (dx, dw, db).
    n, _, ho, wo = dout.shape
    dflat = dout.transpose(0, 2, 3, 1).reshape(-1, w.shape[0])
    dw = (dflat.T @ cols.reshape(-1, cols.shape[-1])).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(w.shape[0], -1)).reshape(n, ho, wo, -1)
    c = x_shape[1]
    dcols = dcols.reshape(n, ho, wo, c, 3, 3)
    dxp = np.zeros((n, c, x_shape[2] + 2, x_shape[3] + 2))
    for ki in range(3):
        for kj in range(3):
            dxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += (
                dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    return dxp[:, :, 1:-1, 1:-1], dw, db


@dataclass
class ForwardPass:
    heatmaps: np.ndarray  # (N, k, H/4, W/4)
    features: np.ndarray  # (N, 32)
    cache: dict


def forward(net: TinyPoseNet, images: np.ndarray) -> ForwardPass:
    """Run the network on an ``(N, H, W, 3)`` batch.

    Raises :class:`ShapeError` unless H and W are divisible by 4.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[3] != 3:
        raise ShapeError(f"expected (N, H, W, 3) batch, got {images.shape}")
    _, h, w, _ = images.shape
    if h % 4 or w % 4:
        raise ShapeError(f"input dims must be divisible by 4, got {h}x{w}")
    x = images.transpose(0, 3, 1, 2)

    z1, cols1 = _conv3x3(x, net.conv1_w, net.conv1_b)
    a1 = np.maximum(z1, 0.0)
    z2, cols2 = _conv3x3(a1, net.conv2_w, net.conv2_b)
    a2 = np.maximum(z2, 0.0)
    heatmaps = np.einsum("nchw,kc->nkhw", a2, net.head_w) + net.head_b[None, :, None, None]
    features = a2.mean(axis=(2, 3))

    cache = dict(net=net, x_shape=x.shape, a1_shape=a1.shape, cols1=cols1, cols2=cols2, z1=z1, z2=z2, a2=a2)
    return ForwardPass(heatmaps, features, cache)


def backward(net: TinyPoseNet, cache: dict, dheatmaps: np.ndarray) -> dict[str, np.ndarray]:
    """Analytic parameter gradients for the loss whose output-gradient is given.

    ``cache`` must come from a :func:`forward` on this exact ``net``;
    anything else raises :class:`ContractError`.
    """
    if cache.get("net") is not net:
        raise ContractError("stale forward cache: parameters changed since forward")
    dheatmaps = np.asarray(dheatmaps, dtype=np.float64)
    a2 = cache["a2"]
    if dheatmaps.shape != (a2.shape[0], net.num_joints, a2.shape[2], a2.shape[3]):
        raise ShapeError(f"output grad shape {dheatmaps.shape} does not match forward")

    dhead_w = np.einsum("nkhw,nchw->kc", dheatmaps, a2)
    dhead_b = dheatmaps.sum(axis=(0, 2, 3))
    da2 = np.einsum("nkhw,kc->nchw", dheatmaps, net.head_w)
    dz2 = da2 * (cache["z2"] > 0.0)
    da1, dconv2_w, dconv2_b = _conv3x3_backward(dz2, cache["cols2"], net.conv2_w, cache["a1_shape"])
    dz1 = da1 * (cache["z1"] > 0.0)
    _, dconv1_w, dconv1_b = _conv3x3_backward(dz1, cache["cols1"], net.conv1_w, cache["x_shape"])

    return dict(
        conv1_w=dconv1_w,
        conv1_b=dconv1_b,
        conv2_w=dconv2_w,
        conv2_b=dconv2_b,
        head_w=dhead_w,
        head_b=dhead_b,
    )


def accumulate_grads(total: dict[str, np.ndarray] | None, grads: dict[str, np.ndarray], weight: float = 1.0):
    """``total + weight * grads``, allocating on first use."""
    if total is None:
        return {k: weight * v for k, v in grads.items()}
    for k, v in grads.items():
        total[k] = total[k] + weight * v
    return total


@dataclass
class AdamState:
    """Adam moments plus a piecewise-constant learning-rate schedule.

    ``schedule`` maps epoch boundaries to rates, e.g. ``((0, 1e-3), (30,
    1e-4))``; :meth:`lr` returns the rate for the state's current epoch.
    """

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    schedule: tuple[tuple[int, float], ...] = ((0, 1e-3),)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: TinyPoseNet, schedule=((0, 1e-3),)) -> "AdamState":
        zeros = lambda: {k: np.zeros_like(p) for k, p in net.params().items()}
        return cls(m=zeros(), v=zeros(), schedule=tuple(schedule))

    def lr(self) -> float:
        rate = self.schedule[0][1]
        for boundary, value in self.schedule:
            if self.epoch >= boundary:
                rate = value
        return rate


def adam_step(state: AdamState, net: TinyPoseNet, grads: dict[str, np.ndarray]):
    """One bias-corrected Adam update; returns ``(new_net, new_state)``."""
    t = state.step + 1
    lr = state.lr()
    new_params, new_m, new_v = {}, {}, {}
    for name, p in net.params().items():
        g = grads[name]
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        mhat = m / (1.0 - state.beta1**t)
        vhat = v / (1.0 - state.beta2**t)
        new_params[name] = p - lr * mhat / (np.sqrt(vhat) + state.eps)
        new_m[name], new_v[name] = m, v
    new_state = AdamState(
        new_m, new_v, t, state.epoch, state.schedule, state.beta1, state.beta2, state.eps
    )
    return net.with_params(new_params), new_state


def save_checkpoint(path: str | Path, net: TinyPoseNet, state: AdamState | None = None) -> None:
    tensors = {f"param.{k}": v for k, v in net.params().items()}
    if state is not None:
        tensors.update({f"adam.m.{k}": v for k, v in state.m.items()})
        tensors.update({f"adam.v.{k}": v for k, v in state.v.items()})
        tensors["adam.step"] = np.float64(state.step)
        tensors["adam.epoch"] = np.float64(state.epoch)
        sched = np.array(state.schedule, dtype=np.float64).reshape(-1, 2)
        tensors["adam.schedule"] = sched
    tensorio.save_tensors(path, tensors)


def load_checkpoint(path: str | Path) -> tuple[TinyPoseNet, AdamState | None]:
    tensors = tensorio.load_tensors(path)
    net = TinyPoseNet(**{k: tensors[f"param.{k}"] for k in PARAM_NAMES})
    if "adam.step" not in tensors:
        return net, None
    schedule = tuple((int(b), float(r)) for b, r in tensors["adam.schedule"])
    state = AdamState(
        m={k: tensors[f"adam.m.{k}"] for k in PARAM_NAMES},
        v={k: tensors[f"adam.v.{k}"] for k in PARAM_NAMES},
        step=int(tensors["adam.step"]),
        epoch=int(tensors["adam.epoch"]),
        schedule=schedule,
    )
    return net, state
