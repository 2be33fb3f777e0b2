"""Backward warping, bilinear sampling and occlusion masks.

Shared by the losses, the evaluation metrics and the alignment module. A
flow field at frame n stores per-pixel displacements mapping frame-n
coordinates into the neighbouring frame: position_in_neighbour = x + flow(x).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class FlowField:
    """Per-pixel 2-vector displacement (du, dv) in pixels, plus occlusion."""

    flow: np.ndarray  # [H,W,2]
    occluded: np.ndarray = field(default=None)  # [H,W] bool

    def __post_init__(self):
        self.flow = np.ascontiguousarray(self.flow, dtype=np.float64)
        if self.flow.ndim != 3 or self.flow.shape[2] != 2:
            raise ShapeError(f"flow must be [H,W,2], got {self.flow.shape}")
        if not np.isfinite(self.flow).all():
            raise ValueError("flow contains non-finite entries")
        if self.occluded is None:
            self.occluded = np.zeros(self.flow.shape[:2], dtype=bool)
        self.occluded = np.asarray(self.occluded, dtype=bool)
        if self.occluded.shape != self.flow.shape[:2]:
            raise ShapeError("occlusion mask shape does not match flow")

    @property
    def shape(self) -> tuple[int, int]:
        return self.flow.shape[:2]

    @staticmethod
    def zeros(h: int, w: int) -> "FlowField":
        return FlowField(np.zeros((h, w, 2)))

    def downsample(self, factor: int) -> "FlowField":
        """Block-average the flow to 1/factor resolution, rescaling displacements."""
        h, w = self.shape
        if h % factor or w % factor:
            raise ShapeError(f"flow {self.shape} not divisible by {factor}")
        f = self.flow.reshape(h // factor, factor, w // factor, factor, 2)
        small = f.mean(axis=(1, 3)) / factor
        occ = self.occluded.reshape(h // factor, factor, w // factor, factor).any(axis=(1, 3))
        return FlowField(small, occ)


def _target_coords(flow: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = flow.shape[:2]
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return uu + flow[..., 0], vv + flow[..., 1]


def warp_backward(src, flow) -> Tensor:
    """Resample ``src`` at x + flow(x): out(x) = bilinear(src, x + flow(x)).

    ``src`` may be a Tensor (differentiable) or ndarray; ``flow`` a FlowField
    or a raw [H,W,2] array. Out-of-bounds samples clamp to the border.
    """
    src = T.as_tensor(src)
    f = flow.flow if isinstance(flow, FlowField) else np.asarray(flow, dtype=np.float64)
    if src.ndim != 3 or f.shape[:2] != src.shape[1:]:
        raise ShapeError(f"flow {f.shape} does not match source {src.shape}")
    u, v = _target_coords(f)
    return T.grid_sample(src, u, v)


def warp_backward_np(src: np.ndarray, flow) -> np.ndarray:
    """Pure-numpy warp for metrics and masks (no graph involvement)."""
    src = np.asarray(src, dtype=np.float64)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[None]
    out = warp_backward(Tensor(src), flow).data
    return out[0] if squeeze else out


def occlusion_mask(f_n, f_prev_warped, beta: float = 50.0) -> np.ndarray:
    """M(x) = exp(-beta * ||f_n(x) - f_prev_warped(x)||^2), values in (0, 1].

    The squared L2 runs over channels. Computed on (normalized) guidance
    images, so it stays a constant weight with respect to the network.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    a = np.asarray(f_n, dtype=np.float64)
    b = np.asarray(f_prev_warped, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    d2 = ((a - b) ** 2).sum(axis=0, keepdims=True)
    return np.exp(-beta * d2)
