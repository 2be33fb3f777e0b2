#!/usr/bin/env python3
"""Generate a procedural RGB-D video, inspect its exact flow, and degrade the
depth into sparse dToF samples."""

import numpy as np

from svdc.dtof import DToFConfig, bilinear_depth, simulate_dtof
from svdc.scene import SceneConfig, build_scene, generate_scene

cfg = SceneConfig(resolution_h=48, resolution_w=64, num_frames=6, seed=7)
frames = generate_scene(cfg)
cam = build_scene(cfg).camera

print(f"rendered {len(frames)} frames at {cfg.resolution_h}x{cfg.resolution_w}")
f = frames[2]
print(f"depth range: {f.depth.depth.min():.2f} .. {f.depth.depth.max():.2f} m")
print(f"surfaces in view: {sorted(np.unique(f.surface_ids))}")

# the forward flow is exact: follow it and the scene re-raycasts consistently
live = ~f.flow_fwd.occluded
mag = np.hypot(f.flow_fwd.flow[..., 0], f.flow_fwd.flow[..., 1])
print(f"flow magnitude (visible px): mean {mag[live].mean():.3f}, max {mag[live].max():.3f} px")
print(f"occluded fraction: {f.flow_fwd.occluded.mean():.3%}")

# sparse dToF sampling: a distorted, jittered 30x40 grid with dropout + noise
dtof = DToFConfig(seed=7)
sp = simulate_dtof(f.depth, f.guidance, dtof, frame_index=2, camera=cam)
print(f"\ndToF samples: {len(sp)} of {dtof.grid_rows * dtof.grid_cols}")
gt = bilinear_depth(f.depth.depth, sp.samples[:, 0], sp.samples[:, 1])
rel = np.abs(sp.samples[:, 2] - gt) / gt
print(f"sample REL vs ground truth: {rel.mean():.4f} (calibrated ~0.06)")

# the noiseless configuration reads the depth map exactly
clean = DToFConfig(dropout_rate=0.0, reflectance_threshold=0.0, depth_noise_rel=0.0,
                   rot_deg_max=0.0, offset_px_max=0.0, distortion_k1=0.0, seed=7)
sp0 = simulate_dtof(f.depth, f.guidance, clean, 2, cam)
gt0 = bilinear_depth(f.depth.depth, sp0.samples[:, 0], sp0.samples[:, 1])
print(f"noiseless config: {len(sp0)} samples, max |error| = {np.abs(sp0.samples[:, 2] - gt0).max():.2e}")
