"""Evaluation metrics: RMSE, REL, delta-threshold accuracies, temporal
end-point error (TEPE) and the flow-warped consistency metric (OPW),
including the intra-window / cross-window split for stitched inference."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flow_ops import FlowField, occlusion_mask, warp_backward_np
from .scene import DepthFrame

DELTA_THRESHOLDS = (1.25, 1.25**2, 1.25**3)


def _masked(pred: np.ndarray, gt: DepthFrame | np.ndarray):
    if isinstance(gt, DepthFrame):
        gt_depth, valid = gt.depth, gt.valid
    else:
        gt_depth = np.asarray(gt, dtype=np.float64)
        valid = np.isfinite(gt_depth) & (gt_depth > 0)
    pred = np.asarray(pred, dtype=np.float64).reshape(gt_depth.shape)
    if not valid.any():
        raise ValueError("empty validity mask")
    return pred[valid], gt_depth[valid]


def rmse(pred, gt) -> float:
    p, g = _masked(pred, gt)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def rel(pred, gt) -> float:
    p, g = _masked(pred, gt)
    return float(np.mean(np.abs(p - g) / g))


def delta_acc(pred, gt, t: float) -> float:
    p, g = _masked(pred, gt)
    ratio = np.maximum(p / g, g / p)
    return float(np.mean(ratio < t))


def tepe(pred_i, pred_i1, gt_i: DepthFrame, gt_i1: DepthFrame, flow: FlowField) -> float:
    """Temporal end-point error in millimeters.

    ``flow`` lives on frame i+1's grid and maps it back onto frame i, so
    W(d_i) is d_i resampled onto frame i+1. Occluded and invalid pixels are
    excluded.
    """
    pred_i = np.asarray(pred_i, dtype=np.float64).reshape(gt_i.depth.shape)
    pred_i1 = np.asarray(pred_i1, dtype=np.float64).reshape(gt_i1.depth.shape)
    w_gt = warp_backward_np(gt_i.depth, flow)
    w_pred = warp_backward_np(pred_i, flow)
    valid = gt_i1.valid & ~flow.occluded
    w_valid = warp_backward_np(gt_i.valid.astype(np.float64), flow) > 0.999
    valid &= w_valid
    if not valid.any():
        raise ValueError("tepe: empty valid set")
    err = np.abs((w_gt - gt_i1.depth) - (w_pred - pred_i1))
    return float(err[valid].mean() * 1000.0)


def opw_pair(pred_n, pred_prev, guidance_n, guidance_prev, flow: FlowField,
             beta: float = 50.0) -> float:
    """Evaluation-mode OPW for one consecutive pair (mean over all pixels)."""
    pred_n = np.asarray(pred_n, dtype=np.float64)
    pred_prev = np.asarray(pred_prev, dtype=np.float64).reshape(pred_n.shape)
    warped_prev = warp_backward_np(pred_prev.reshape(flow.shape), flow)
    warped_guid = warp_backward_np(guidance_prev, flow)
    mask = occlusion_mask(guidance_n, warped_guid, beta)[0]
    diff = np.abs(pred_n.reshape(flow.shape) - warped_prev)
    return float((mask * diff).mean())


def opw_metric(preds, guidances, flows, beta: float = 50.0) -> float:
    """Mean OPW over all consecutive pairs of a sequence.

    ``flows[k]`` maps frame k onto frame k-1 (the backward flow of frame k).
    """
    if len(preds) < 2:
        raise ValueError("opw_metric needs at least two frames")
    vals = [
        opw_pair(preds[k], preds[k - 1], guidances[k], guidances[k - 1], flows[k], beta)
        for k in range(1, len(preds))
    ]
    return float(np.mean(vals))


def split_window_metrics(preds, gts, guidances, flows_bwd, window_of, beta: float = 50.0):
    """Frame-pair TEPE/OPW bucketed by whether the pair straddles windows.

    ``window_of[k]`` is the index of the window that produced frame k during
    stitched inference. Returns a dict with intra/cross/overall averages.
    """
    intra_t, cross_t, intra_o, cross_o = [], [], [], []
    for k in range(1, len(preds)):
        t = tepe(preds[k - 1], preds[k], gts[k - 1], gts[k], flows_bwd[k])
        o = opw_pair(preds[k], preds[k - 1], guidances[k], guidances[k - 1], flows_bwd[k], beta)
        if window_of[k] == window_of[k - 1]:
            intra_t.append(t)
            intra_o.append(o)
        else:
            cross_t.append(t)
            cross_o.append(o)
    mean = lambda xs: float(np.mean(xs)) if xs else float("nan")
    return {
        "tepe_intra": mean(intra_t),
        "tepe_cross": mean(cross_t),
        "tepe": mean(intra_t + cross_t),
        "opw_intra": mean(intra_o),
        "opw_cross": mean(cross_o),
        "opw": mean(intra_o + cross_o),
    }


@dataclass
class EvalReport:
    rmse: float
    rel: float
    delta1: float
    delta2: float
    delta3: float
    tepe: float
    opw: float
    tepe_intra: float = float("nan")
    tepe_cross: float = float("nan")
    opw_intra: float = float("nan")
    opw_cross: float = float("nan")
    per_frame: list = field(default_factory=list)  # rows of (frame, rmse, rel)

    def __post_init__(self):
        deltas = (self.delta1, self.delta2, self.delta3)
        if not all(0.0 <= d <= 1.0 for d in deltas):
            raise ValueError(f"delta accuracies outside [0,1]: {deltas}")
        if not (self.delta1 <= self.delta2 <= self.delta3):
            raise ValueError(f"delta accuracies not monotone: {deltas}")

    def scalars(self) -> dict:
        return {
            k: getattr(self, k)
            for k in (
                "rmse", "rel", "delta1", "delta2", "delta3",
                "tepe", "opw", "tepe_intra", "tepe_cross", "opw_intra", "opw_cross",
            )
        }

    def write(self, path) -> None:
        """Flat key=value text file, plus a CSV of per-frame rows alongside."""
        path = Path(path)
        with open(path, "w") as f:
            for k, v in self.scalars().items():
                f.write(f"{k}={v!r}\n")
        with open(path.with_suffix(".csv"), "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame", "rmse", "rel"])
            writer.writerows(self.per_frame)
