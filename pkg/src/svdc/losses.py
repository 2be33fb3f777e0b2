"""Loss stack: scale-invariant depth loss, flow-warped temporal consistency,
cross-window consistency, and their weighted total."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .flow_ops import FlowField, occlusion_mask, warp_backward, warp_backward_np
from .scene import DepthFrame
from .tensor import ShapeError, Tensor


@dataclass
class LossWeights:
    lambda_si: float = 0.85
    alpha_si: float = 10.0
    gamma_coarse: float = 0.25
    lambda_opw: float = 0.125
    beta_mask: float = 50.0

    def __post_init__(self):
        for name in ("lambda_si", "alpha_si", "gamma_coarse", "lambda_opw", "beta_mask"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def si_loss(pred: Tensor, gt, weights: LossWeights | None = None) -> Tensor:
    """Scale-invariant log-depth loss over the valid-pixel set.

    g = log(pred) - log(gt); loss = alpha * sqrt(mean(g^2) - (lambda/T^2) (sum g)^2)
    with T the valid-pixel count and the radicand floored at zero.
    """
    weights = weights or LossWeights()
    if isinstance(gt, DepthFrame):
        gt_depth, valid = gt.depth, gt.valid
    else:
        gt_t = T.as_tensor(gt)
        gt_depth, valid = gt_t.data, np.ones(gt_t.data.shape, dtype=bool)
        if gt_t.requires_grad:
            return _si_between(pred, gt_t, weights)
    gt_depth = gt_depth.reshape(pred.shape)
    valid = valid.reshape(pred.shape)
    n = int(valid.sum())
    if n == 0:
        raise ValueError("si_loss: empty valid mask")
    mask = Tensor(valid.astype(np.float64))
    log_gt = np.where(valid, np.log(np.maximum(gt_depth, 1e-6)), 0.0)
    g = T.mul(T.sub(T.log(T.clamp_min(pred, 1e-6)), Tensor(log_gt)), mask)
    mean_sq = T.scale(T.tsum(T.mul(g, g)), 1.0 / n)
    mean_term = T.scale(T.mul(T.tsum(g), T.tsum(g)), weights.lambda_si / n**2)
    return T.scale(T.sqrt_floored(T.sub(mean_sq, mean_term)), weights.alpha_si)


def _si_between(pred: Tensor, target: Tensor, weights: LossWeights) -> Tensor:
    """SI loss between two differentiable predictions, all pixels valid."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shapes differ: {pred.shape} vs {target.shape}")
    n = pred.size
    g = T.sub(T.log(T.clamp_min(pred, 1e-6)), T.log(T.clamp_min(target, 1e-6)))
    mean_sq = T.scale(T.tsum(T.mul(g, g)), 1.0 / n)
    mean_term = T.scale(T.mul(T.tsum(g), T.tsum(g)), weights.lambda_si / n**2)
    return T.scale(T.sqrt_floored(T.sub(mean_sq, mean_term)), weights.alpha_si)


def opw_loss(pred_n: Tensor, pred_prev: Tensor, guidance_n: np.ndarray,
             guidance_prev: np.ndarray, flow: FlowField,
             weights: LossWeights | None = None) -> Tensor:
    """Masked warped absolute depth difference between consecutive frames.

    The previous prediction is warped onto frame n by the backward flow; the
    occlusion mask is computed on the guidance images so mismatched content
    is discounted exponentially.
    """
    weights = weights or LossWeights()
    if pred_n.shape != pred_prev.shape:
        raise ShapeError(f"prediction shapes differ: {pred_n.shape} vs {pred_prev.shape}")
    warped_prev = warp_backward(pred_prev, flow)
    warped_guid = warp_backward_np(guidance_prev, flow)
    mask = occlusion_mask(guidance_n, warped_guid, weights.beta_mask)
    n_pix = pred_n.data[0].size
    diff = T.absolute(T.sub(pred_n, warped_prev))
    return T.scale(T.tsum(T.mul(Tensor(mask), diff)), 1.0 / n_pix)


def cross_window_loss(window_j: list[Tensor], window_j1: list[Tensor],
                      weights: LossWeights | None = None) -> Tensor:
    """SI penalty between the two windows' predictions of the shared frames.

    ``window_j`` holds coarse predictions for frames {n, n+1, n+2} and
    ``window_j1`` for {n+1, n+2, n+3}; the overlap is compared symmetrically
    (gradients flow into both windows).
    """
    weights = weights or LossWeights()
    if len(window_j) != len(window_j1):
        raise ShapeError("windows must have equal length")
    terms = []
    for a, b in zip(window_j[1:], window_j1[:-1]):
        if a.shape != b.shape:
            raise ShapeError(f"overlapping predictions differ in shape: {a.shape} vs {b.shape}")
        terms.append(_si_between(a, b, weights))
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return total


def total_loss(outputs_j, outputs_j1, frames, weights: LossWeights | None = None,
               use_cross: bool = True, use_opw: bool = True):
    """Eq.-style weighted total over two overlapping windows.

    ``outputs_*`` are per-frame (coarse, final) pairs; ``frames`` is the
    4-frame underlying sequence (window j = frames[0:3], j+1 = frames[1:4]).
    Returns (loss tensor, component breakdown dict of floats).
    """
    weights = weights or LossWeights()
    windows = ((outputs_j, frames[0:3]), (outputs_j1, frames[1:4]))

    si_final = None
    si_coarse = None
    for outputs, win_frames in windows:
        for (coarse, final), frame in zip(outputs, win_frames):
            sf = si_loss(final, frame.gt, weights)
            sc = si_loss(coarse, _downsample_gt(frame.gt, coarse.shape), weights)
            si_final = sf if si_final is None else T.add(si_final, sf)
            si_coarse = sc if si_coarse is None else T.add(si_coarse, sc)

    spatial = T.add(si_final, T.scale(si_coarse, weights.gamma_coarse))
    loss = spatial
    components = {
        "si_final": si_final.item(),
        "si_coarse": si_coarse.item(),
    }

    if use_cross:
        cross = cross_window_loss([c for c, _ in outputs_j], [c for c, _ in outputs_j1], weights)
        loss = T.add(loss, cross)
        components["cross"] = cross.item()
    else:
        components["cross"] = 0.0

    if use_opw:
        opw = None
        for outputs, win_frames in windows:
            for k in range(1, len(win_frames)):
                term = opw_loss(
                    outputs[k][1], outputs[k - 1][1],
                    win_frames[k].guidance, win_frames[k - 1].guidance,
                    win_frames[k].flow_bwd, weights,
                )
                opw = term if opw is None else T.add(opw, term)
        loss = T.add(loss, T.scale(opw, weights.lambda_opw))
        components["opw"] = opw.item()
    else:
        components["opw"] = 0.0

    components["total"] = loss.item()
    return loss, components


def _downsample_gt(gt: DepthFrame, shape) -> DepthFrame:
    """Block-average ground truth to the coarse prediction grid."""
    H, W = gt.depth.shape
    h, w = shape[1:]
    fh, fw = H // h, W // w
    d = gt.depth.reshape(h, fh, w, fw).mean(axis=(1, 3))
    v = gt.valid.reshape(h, fh, w, fw).all(axis=(1, 3))
    return DepthFrame(d.reshape(shape), v.reshape(shape))
