"""Windowed training with overlapping-window consistency supervision,
AdamW-style optimisation with a one-cycle schedule, and stitched evaluation."""

from __future__ import annotations

import csv
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import tensor as T
from .dtof import DToFConfig, rasterize_sparse, simulate_dtof
from .losses import LossWeights, total_loss
from .metrics import (
    DELTA_THRESHOLDS,
    EvalReport,
    delta_acc,
    rel,
    rmse,
    split_window_metrics,
)
from .net import FrameInput, ModelConfig, forward_window, init_params, save_params
from .scene import SceneConfig, build_scene, generate_scene
from .tensor import Tensor


@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 2
    lr_max: float = 5e-3
    warmup_frac: float = 0.3
    weight_decay: float = 1e-2
    grad_clip: float = 0.1
    window: int = 3
    seed: int = 0
    use_cross_loss: bool = True
    use_opw_loss: bool = True
    train_scenes: int = 40
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must be in (0, 1)")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


@dataclass
class WindowBatch:
    """Four consecutive frames: window j = frames[0:3], window j+1 = frames[1:4]."""

    frames: list  # list[FrameInput], length window + 1

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("overlapping windows need at least 2 frames")

    @property
    def window_j(self):
        return self.frames[:-1]

    @property
    def window_j1(self):
        return self.frames[1:]


def one_cycle_lr(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to lr_max, then cosine decay; strictly positive."""
    warm = max(int(round(cfg.warmup_frac * cfg.steps)), 1)
    lr_start = cfg.lr_max / 25.0
    lr_final = cfg.lr_max / 1e4
    if step <= warm:
        return lr_start + (cfg.lr_max - lr_start) * step / warm
    t = (step - warm) / max(cfg.steps - warm, 1)
    return lr_final + (cfg.lr_max - lr_final) * 0.5 * (1.0 + np.cos(np.pi * min(t, 1.0)))


class AdamW:
    """Adaptive-moment optimiser with decoupled weight decay.

    The decay shrinkage uses the fixed rate ``weight_decay * lr_max`` so it
    is independent of the instantaneous scheduled learning rate.
    """

    def __init__(self, params: "OrderedDict[str, Tensor]", cfg: TrainConfig,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.cfg = cfg
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> float:
        """Apply one clipped update; returns the largest applied gradient magnitude."""
        self.t += 1
        max_g = 0.0
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            g = np.clip(g, -self.cfg.grad_clip, self.cfg.grad_clip)
            max_g = max(max_g, float(np.abs(g).max()) if g.size else 0.0)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / (1 - self.beta1**self.t)
            vhat = self.v[k] / (1 - self.beta2**self.t)
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)
            p.data = p.data - (self.cfg.weight_decay * self.cfg.lr_max) * p.data
            if not np.isfinite(p.data).all() or not np.isfinite(self.v[k]).all():
                raise FloatingPointError(f"non-finite optimiser state for parameter {k!r}")
        return max_g


# -- data --------------------------------------------------------------------------


def build_corpus(scene_cfg: SceneConfig, dtof_cfg: DToFConfig, num_scenes: int,
                 seed_offset: int = 0) -> list[list[FrameInput]]:
    """Generate ``num_scenes`` procedural scenes as network-ready frame lists."""
    corpus = []
    for s in range(num_scenes):
        cfg = SceneConfig(
            resolution_h=scene_cfg.resolution_h,
            resolution_w=scene_cfg.resolution_w,
            num_frames=scene_cfg.num_frames,
            hfov_deg=scene_cfg.hfov_deg,
            num_spheres=scene_cfg.num_spheres,
            seed=scene_cfg.seed + seed_offset + s,
        )
        frames = generate_scene(cfg)
        cam = build_scene(cfg).camera
        dcfg = DToFConfig(**{**dtof_cfg.__dict__, "seed": dtof_cfg.seed + seed_offset + s})
        scene_inputs = []
        for i, fr in enumerate(frames):
            sp = simulate_dtof(fr.depth, fr.guidance, dcfg, i, cam)
            scene_inputs.append(
                FrameInput(
                    guidance=fr.guidance,
                    sparse_dense=rasterize_sparse(sp, fr.depth.depth.shape),
                    flow_fwd=fr.flow_fwd,
                    flow_bwd=fr.flow_bwd,
                    gt=fr.depth,
                )
            )
        corpus.append(scene_inputs)
    return corpus


def sample_window_batch(corpus, rng: np.random.Generator, window: int) -> WindowBatch:
    scene = corpus[rng.integers(len(corpus))]
    start = int(rng.integers(len(scene) - window))
    return WindowBatch(scene[start : start + window + 1])


# -- training ------------------------------------------------------------------------


def train_step(batches: list[WindowBatch], params, model_cfg: ModelConfig,
               optimizer: AdamW, step_index: int, weights: LossWeights,
               train_cfg: TrainConfig) -> dict:
    """Forward both overlapping windows per batch item, backprop the total
    loss, clip gradients elementwise and apply one optimiser update."""
    for p in params.values():
        p.zero_grad()
    agg: dict[str, float] = {}
    loss_total = None
    for wb in batches:
        out_j = forward_window(params, model_cfg, wb.window_j)
        out_j1 = forward_window(params, model_cfg, wb.window_j1)
        loss, comps = total_loss(
            out_j, out_j1, wb.frames, weights,
            use_cross=train_cfg.use_cross_loss, use_opw=train_cfg.use_opw_loss,
        )
        loss_total = loss if loss_total is None else T.add(loss_total, loss)
        for k, v in comps.items():
            agg[k] = agg.get(k, 0.0) + v / len(batches)
    loss_total = T.scale(loss_total, 1.0 / len(batches))
    if not np.isfinite(loss_total.data).all():
        raise FloatingPointError(
            f"non-finite loss at step {step_index}: components {agg}"
        )
    T.backward(loss_total)
    lr = one_cycle_lr(step_index, train_cfg)
    agg["lr"] = lr
    agg["max_grad"] = optimizer.step(lr)
    return agg


def run_training(train_cfg: TrainConfig, scene_cfg: SceneConfig, dtof_cfg: DToFConfig,
                 model_cfg: ModelConfig, out_dir=None, corpus=None,
                 log_every: int = 0) -> tuple["OrderedDict[str, Tensor]", list[dict]]:
    """Full training run; deterministic given the configured seeds.

    Returns the trained parameters and the per-step loss history. When
    ``out_dir`` is given, writes loss_curve.csv, periodic checkpoints and the
    final checkpoint.svdckpt.
    """
    if corpus is None:
        corpus = build_corpus(scene_cfg, dtof_cfg, train_cfg.train_scenes)
    params = init_params(model_cfg, seed=train_cfg.seed)
    optimizer = AdamW(params, train_cfg)
    weights = LossWeights()
    rng = np.random.default_rng(np.random.SeedSequence((train_cfg.seed, 0xBA7C)))
    history: list[dict] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for step in range(1, train_cfg.steps + 1):
        batches = [
            sample_window_batch(corpus, rng, train_cfg.window)
            for _ in range(train_cfg.batch)
        ]
        comps = train_step(batches, params, model_cfg, optimizer, step, weights, train_cfg)
        comps["step"] = step
        history.append(comps)
        if log_every and (step % log_every == 0 or step == 1):
            print(f"step {step:6d}  total {comps['total']:.4f}  lr {comps['lr']:.2e}")
        if out is not None and train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
            save_params(out / f"ckpt_{step:06d}.svdckpt", params)
    if out is not None:
        save_params(out / "checkpoint.svdckpt", params)
        fields = ["step", "total", "si_final", "si_coarse", "cross", "opw", "lr", "max_grad"]
        with open(out / "loss_curve.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            for row in history:
                writer.writerow({k: row[k] for k in fields})
    return params, history


# -- inference and evaluation -----------------------------------------------------------


def stitched_inference(params, model_cfg: ModelConfig, frames: list[FrameInput]):
    """Sliding-window stride-T inference; each frame predicted by one window.

    A short tail is covered by a final window ending at the last frame, which
    owns only the frames no earlier window predicted. Returns (final depth
    maps as [H,W] arrays, owning-window index per frame).
    """
    Tw = model_cfg.window
    n = len(frames)
    if n < Tw:
        raise ValueError(f"need at least {Tw} frames, got {n}")
    preds: list[np.ndarray | None] = [None] * n
    window_of = [0] * n
    starts = list(range(0, n - Tw + 1, Tw))
    if starts[-1] + Tw < n:
        starts.append(n - Tw)
    for w_idx, s in enumerate(starts):
        outputs = forward_window(params, model_cfg, frames[s : s + Tw])
        for k, (_, final) in enumerate(outputs):
            if preds[s + k] is None:
                preds[s + k] = final.data[0]
                window_of[s + k] = w_idx
    return preds, window_of


def nearest_sample_baseline(frame: FrameInput) -> np.ndarray:
    """Sparse-interpolation baseline: nearest-sample inpainting of the
    rasterized dToF map."""
    grid = frame.sparse_dense[0]
    have = grid > 0
    if not have.any():
        return np.full(grid.shape, grid.mean() if grid.mean() > 0 else 1.0)
    _, (ix, iy) = ndimage.distance_transform_edt(~have, return_indices=True)
    return grid[ix, iy]


def evaluate_predictions(scenes_preds, scenes_frames, scenes_window_of,
                         beta: float = 50.0) -> EvalReport:
    """Aggregate the full metric suite over per-scene stitched predictions."""
    per_frame = []
    rmses, rels, d1s, d2s, d3s = [], [], [], [], []
    buckets = {"tepe_intra": [], "tepe_cross": [], "opw_intra": [], "opw_cross": []}
    frame_no = 0
    for preds, frames, window_of in zip(scenes_preds, scenes_frames, scenes_window_of):
        gts = [f.gt for f in frames]
        guid = [f.guidance for f in frames]
        flows_bwd = [f.flow_bwd for f in frames]
        for p, g in zip(preds, gts):
            r = rmse(p, g)
            rmses.append(r)
            rels.append(rel(p, g))
            d1s.append(delta_acc(p, g, DELTA_THRESHOLDS[0]))
            d2s.append(delta_acc(p, g, DELTA_THRESHOLDS[1]))
            d3s.append(delta_acc(p, g, DELTA_THRESHOLDS[2]))
            per_frame.append((frame_no, r, rels[-1]))
            frame_no += 1
        split = split_window_metrics(preds, gts, guid, flows_bwd, window_of, beta)
        for k in buckets:
            if np.isfinite(split[k]):
                buckets[k].append(split[k])
    mean = lambda xs: float(np.mean(xs)) if xs else float("nan")
    ti, tc = mean(buckets["tepe_intra"]), mean(buckets["tepe_cross"])
    oi, oc = mean(buckets["opw_intra"]), mean(buckets["opw_cross"])
    all_t = buckets["tepe_intra"] + buckets["tepe_cross"]
    all_o = buckets["opw_intra"] + buckets["opw_cross"]
    return EvalReport(
        rmse=mean(rmses), rel=mean(rels),
        delta1=mean(d1s), delta2=mean(d2s), delta3=mean(d3s),
        tepe=mean(all_t), opw=mean(all_o),
        tepe_intra=ti, tepe_cross=tc, opw_intra=oi, opw_cross=oc,
        per_frame=per_frame,
    )


def run_eval(params, model_cfg: ModelConfig, eval_corpus: list[list[FrameInput]],
             beta: float = 50.0) -> tuple[EvalReport, EvalReport]:
    """Stitched evaluation of the model and the sparse-interpolation baseline."""
    preds, frames_all, windows = [], [], []
    base_preds = []
    for frames in eval_corpus:
        p, w = stitched_inference(params, model_cfg, frames)
        preds.append(p)
        windows.append(w)
        frames_all.append(frames)
        base_preds.append([nearest_sample_baseline(f) for f in frames])
    report = evaluate_predictions(preds, frames_all, windows, beta)
    baseline = evaluate_predictions(base_preds, frames_all, windows, beta)
    return report, baseline
