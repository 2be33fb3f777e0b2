"""On-disk formats for generated scenes.

Per scene directory: frame_%04d.pfm (little-endian PFM depth),
frame_%04d.ppm (P6 guidance), flow_%04d.flo (the conventional "PIEH"
float32 flow format, forward flow), and sparse_%04d.csv with header
"u,v,depth". An extra occ_%04d.npz keeps both flows and occlusion masks
exactly so a dumped corpus evaluates identically to an in-memory one.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dtof import SparseDepth
from .flow_ops import FlowField
from .scene import DepthFrame, FrameData


# -- PFM ----------------------------------------------------------------------


def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("PFM writer handles single-channel maps only")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        f.write(b"-1.0\n")  # negative scale -> little-endian
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * w * h), dtype=dtype).reshape(h, w)
    return np.flipud(data).astype(np.float64)


# -- PPM ----------------------------------------------------------------------


def write_ppm(path, rgb: np.ndarray) -> None:
    """rgb is [3,H,W] in [0,1]; stored as 8-bit binary P6."""
    arr = np.clip(np.asarray(rgb) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    _, h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(arr.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"P6":
            raise ValueError(f"{path}: not a binary PPM")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = map(int, line.split())
        maxval = int(f.readline())
        raw = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / maxval


# -- Middlebury .flo ------------------------------------------------------------


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow, dtype=np.float32)
    h, w, _ = flow.shape
    with open(path, "wb") as f:
        f.write(b"PIEH")
        f.write(struct.pack("<ii", w, h))
        f.write(flow.astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(4) != b"PIEH":
            raise ValueError(f"{path}: bad .flo magic")
        w, h = struct.unpack("<ii", f.read(8))
        data = np.frombuffer(f.read(8 * w * h), dtype="<f4")
    return data.reshape(h, w, 2).astype(np.float64)


# -- sparse CSV ------------------------------------------------------------------


def write_sparse_csv(path, sparse: SparseDepth) -> None:
    with open(path, "w") as f:
        f.write("u,v,depth\n")
        for u, v, d in sparse.samples:
            f.write(f"{float(u)!r},{float(v)!r},{float(d)!r}\n")


def read_sparse_csv(path, frame_index: int = 0) -> SparseDepth:
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != "u,v,depth":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in f:
            if line.strip():
                rows.append([float(x) for x in line.split(",")])
    return SparseDepth(np.asarray(rows).reshape(-1, 3), frame_index)


# -- scene directory dump/load ------------------------------------------------------


def dump_scene(out_dir, frames: list[FrameData], sparse: list[SparseDepth]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, (fr, sp) in enumerate(zip(frames, sparse)):
        write_pfm(out / f"frame_{i:04d}.pfm", fr.depth.depth)
        write_ppm(out / f"frame_{i:04d}.ppm", fr.guidance)
        write_flo(out / f"flow_{i:04d}.flo", fr.flow_fwd.flow)
        write_sparse_csv(out / f"sparse_{i:04d}.csv", sp)
        np.savez_compressed(
            out / f"occ_{i:04d}.npz",
            flow_fwd=fr.flow_fwd.flow,
            occ_fwd=fr.flow_fwd.occluded,
            flow_bwd=fr.flow_bwd.flow,
            occ_bwd=fr.flow_bwd.occluded,
        )


def load_scene(scene_dir) -> tuple[list[FrameData], list[SparseDepth]]:
    scene_dir = Path(scene_dir)
    depth_files = sorted(scene_dir.glob("frame_*.pfm"))
    if not depth_files:
        raise FileNotFoundError(f"no frames found in {scene_dir}")
    frames: list[FrameData] = []
    sparse: list[SparseDepth] = []
    for i, df in enumerate(depth_files):
        depth = read_pfm(df)
        guidance = read_ppm(scene_dir / f"frame_{i:04d}.ppm")
        aux = np.load(scene_dir / f"occ_{i:04d}.npz")
        frames.append(
            FrameData(
                guidance=guidance,
                depth=DepthFrame(depth),
                flow_fwd=FlowField(aux["flow_fwd"], aux["occ_fwd"]),
                flow_bwd=FlowField(aux["flow_bwd"], aux["occ_bwd"]),
                surface_ids=np.zeros(depth.shape, dtype=int),
            )
        )
        sparse.append(read_sparse_csv(scene_dir / f"sparse_{i:04d}.csv", i))
    return frames, sparse
