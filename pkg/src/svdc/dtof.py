"""Simulated sparse dToF sampling of ground-truth depth.

A uniform 30x40 grid inside a 70 degree sensor FOV is barrel-distorted,
randomly rotated and offset per frame, thinned by reflectance and random
dropout, and depth values are perturbed with multiplicative Gaussian noise.
The default noise level is calibrated so surviving samples have REL ~= 0.06
against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import Camera, DepthFrame


@dataclass
class DToFConfig:
    fov_deg: float = 70.0
    grid_rows: int = 30
    grid_cols: int = 40
    distortion_k1: float = 0.08
    rot_deg_max: float = 1.0
    offset_px_max: float = 2.0
    dropout_rate: float = 0.05
    reflectance_threshold: float = 0.05
    # sigma * sqrt(2/pi) = 0.06 -> sample REL matches the target sensor quality
    depth_noise_rel: float = 0.0752
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ValueError(f"dropout_rate {self.dropout_rate} outside [0, 1]")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("grid dims must be >= 1")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"sensor FOV {self.fov_deg} outside (0, 180)")


@dataclass
class SparseDepth:
    """Simulated dToF sample set for one frame."""

    samples: np.ndarray  # [N,3] columns (u, v, depth)
    frame_index: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return self.samples.shape[0]


def _frame_rng(seed: int, frame_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, frame_index)))


def sample_grid_coords(cfg: DToFConfig, frame_index: int, image_shape, camera: Camera | None = None) -> np.ndarray:
    """Sensor sample coordinates for one frame, as an [N,2] array of (u, v).

    Starts from the uniform grid centered in the frame and spanning the
    sensor FOV, applies radial barrel distortion about the image center
    (radius normalized to the half-diagonal), then a seeded per-frame
    rotation and offset. Coordinates outside the image are discarded.
    """
    H, W = image_shape
    cam = camera or Camera(W, H, 100.0)
    cx, cy = (W - 1) / 2.0, (H - 1) / 2.0

    half_w = cam.fx * np.tan(np.deg2rad(cfg.fov_deg) / 2.0)
    half_h = half_w * cfg.grid_rows / cfg.grid_cols
    us = cx - half_w + (np.arange(cfg.grid_cols) + 0.5) * (2 * half_w / cfg.grid_cols)
    vs = cy - half_h + (np.arange(cfg.grid_rows) + 0.5) * (2 * half_h / cfg.grid_rows)
    uu, vv = np.meshgrid(us, vs)
    pts = np.stack([uu.ravel() - cx, vv.ravel() - cy], axis=1)

    if cfg.distortion_k1 != 0.0:
        half_diag = np.hypot(cx, cy)
        r = np.linalg.norm(pts, axis=1) / half_diag
        pts = pts * (1.0 + cfg.distortion_k1 * r**2)[:, None]

    rng = _frame_rng(cfg.seed, frame_index)
    theta = np.deg2rad(rng.uniform(-cfg.rot_deg_max, cfg.rot_deg_max))
    offset = rng.uniform(-cfg.offset_px_max, cfg.offset_px_max, size=2)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    pts = pts @ rot.T + offset

    coords = pts + np.array([cx, cy])
    inside = (
        (coords[:, 0] >= 0)
        & (coords[:, 0] < W)
        & (coords[:, 1] >= 0)
        & (coords[:, 1] < H)
    )
    return coords[inside]


def bilinear_depth(depth: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear read of a depth map at continuous pixel coordinates."""
    H, W = depth.shape
    uc = np.clip(u, 0.0, W - 1.0)
    vc = np.clip(v, 0.0, H - 1.0)
    i0 = np.minimum(np.floor(uc).astype(int), W - 2) if W > 1 else np.zeros_like(uc, dtype=int)
    j0 = np.minimum(np.floor(vc).astype(int), H - 2) if H > 1 else np.zeros_like(vc, dtype=int)
    fu, fv = uc - i0, vc - j0
    i1, j1 = np.minimum(i0 + 1, W - 1), np.minimum(j0 + 1, H - 1)
    return (
        (1 - fv) * (1 - fu) * depth[j0, i0]
        + (1 - fv) * fu * depth[j0, i1]
        + fv * (1 - fu) * depth[j1, i0]
        + fv * fu * depth[j1, i1]
    )


def simulate_dtof(depth: DepthFrame, guidance: np.ndarray, cfg: DToFConfig,
                  frame_index: int, camera: Camera | None = None) -> SparseDepth:
    """Degrade a ground-truth depth frame into noisy sparse dToF samples."""
    if not depth.valid.any():
        raise ValueError("depth frame has no valid pixels")
    H, W = depth.depth.shape
    coords = sample_grid_coords(cfg, frame_index, (H, W), camera)
    if len(coords) == 0:
        return SparseDepth(np.zeros((0, 3)), frame_index)

    rng = _frame_rng(cfg.seed, frame_index ^ 0x5A17)
    u, v = coords[:, 0], coords[:, 1]

    # reflectance proxy: Rec.601 luma of the guidance image at the sample
    luma = 0.299 * guidance[0] + 0.587 * guidance[1] + 0.114 * guidance[2]
    refl = bilinear_depth(luma, u, v)
    keep = refl >= cfg.reflectance_threshold

    if cfg.dropout_rate > 0.0:
        keep &= rng.random(len(coords)) >= cfg.dropout_rate

    u, v = u[keep], v[keep]
    d = bilinear_depth(depth.depth, u, v)
    if cfg.depth_noise_rel > 0.0:
        d = d * (1.0 + cfg.depth_noise_rel * rng.standard_normal(len(d)))
    d = np.maximum(d, 1e-6)
    return SparseDepth(np.stack([u, v, d], axis=1), frame_index)


def rasterize_sparse(sparse: SparseDepth, shape) -> np.ndarray:
    """Nearest-pixel scatter into a [1,H,W] map; 0 marks 'no measurement'.

    Colliding samples keep the nearer (smaller) depth.
    """
    H, W = shape
    grid = np.full((H, W), np.inf)
    if len(sparse):
        u = np.clip(np.rint(sparse.samples[:, 0]).astype(int), 0, W - 1)
        v = np.clip(np.rint(sparse.samples[:, 1]).astype(int), 0, H - 1)
        np.minimum.at(grid, (v, u), sparse.samples[:, 2])
    grid[~np.isfinite(grid)] = 0.0
    return grid[None]
