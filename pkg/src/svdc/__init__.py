"""Video depth completion from simulated sparse dToF, end to end on numpy."""

from .dtof import DToFConfig, SparseDepth, rasterize_sparse, sample_grid_coords, simulate_dtof
from .flow_ops import FlowField, occlusion_mask, warp_backward, warp_backward_np
from .losses import LossWeights, cross_window_loss, opw_loss, si_loss, total_loss
from .metrics import EvalReport, delta_acc, opw_metric, rel, rmse, split_window_metrics, tepe
from .net import FrameInput, ModelConfig, forward_window, init_params, load_params, save_params
from .scene import Camera, DepthFrame, Plane, Scene, SceneConfig, Sphere, build_scene, generate_scene
from .tensor import Tensor, ShapeError, backward
from .train import AdamW, TrainConfig, WindowBatch, run_eval, run_training, train_step

__all__ = [
    "AdamW", "Camera", "DToFConfig", "DepthFrame", "EvalReport", "FlowField",
    "FrameInput", "LossWeights", "ModelConfig", "Plane", "Scene", "SceneConfig",
    "ShapeError", "SparseDepth", "Sphere", "Tensor", "TrainConfig", "WindowBatch",
    "backward", "build_scene", "cross_window_loss", "delta_acc", "forward_window",
    "generate_scene", "init_params", "load_params", "occlusion_mask", "opw_loss",
    "opw_metric", "rasterize_sparse", "rel", "rmse", "run_eval", "run_training",
    "sample_grid_coords", "save_params", "si_loss", "simulate_dtof",
    "split_window_metrics", "tepe", "total_loss", "train_step", "warp_backward",
    "warp_backward_np",
]
