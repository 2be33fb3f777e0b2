"""Command-line entry point.

Subcommands: gen-data, train, eval, sim-dtof. Exit code 0 on success,
nonzero with a one-line cause on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, dump_config, load_config
from .dtof import simulate_dtof
from .net import FrameInput, load_params
from .scene import DepthFrame, SceneConfig, build_scene, generate_scene
from .sceneio import (
    dump_scene,
    load_scene,
    read_pfm,
    read_ppm,
    write_sparse_csv,
)
from .train import build_corpus, run_eval, run_training
from .dtof import DToFConfig, rasterize_sparse


def _cmd_gen_data(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in range(cfg.data.num_scenes):
        scfg = SceneConfig(**{**cfg.scene.__dict__, "seed": cfg.scene.seed + s})
        frames = generate_scene(scfg)
        cam = build_scene(scfg).camera
        dcfg = DToFConfig(**{**cfg.dtof.__dict__, "seed": cfg.dtof.seed + s})
        sparse = [
            simulate_dtof(fr.depth, fr.guidance, dcfg, i, cam)
            for i, fr in enumerate(frames)
        ]
        dump_scene(out / f"scene_{s:04d}", frames, sparse)
    (out / "config.txt").write_text(dump_config(cfg))
    print(f"wrote {cfg.data.num_scenes} scenes to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.no_cross_loss:
        cfg.train.use_cross_loss = False
    if args.no_opw_loss:
        cfg.train.use_opw_loss = False
    if args.no_csea:
        cfg.model.use_csea = False
    if args.fixed_kernel:
        cfg.model.fixed_kernel = args.fixed_kernel
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    run_training(cfg.train, cfg.scene, cfg.dtof, cfg.model, out_dir=out,
                 log_every=max(cfg.train.steps // 20, 1))
    print(f"training done; checkpoint and loss curve in {out}")
    return 0


def _load_eval_corpus(data_dir: Path):
    scene_dirs = sorted(d for d in data_dir.iterdir() if d.is_dir() and d.name.startswith("scene_"))
    if not scene_dirs:
        raise FileNotFoundError(f"no scene_* directories under {data_dir}")
    corpus = []
    for sd in scene_dirs:
        frames, sparse = load_scene(sd)
        inputs = [
            FrameInput(
                guidance=fr.guidance,
                sparse_dense=rasterize_sparse(sp, fr.depth.depth.shape),
                flow_fwd=fr.flow_fwd,
                flow_bwd=fr.flow_bwd,
                gt=fr.depth,
            )
            for fr, sp in zip(frames, sparse)
        ]
        corpus.append(inputs)
    return corpus


def _cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    cfg_path = Path(args.config) if args.config else ckpt.parent / "config.txt"
    if not cfg_path.exists():
        raise FileNotFoundError(f"model config not found at {cfg_path} (pass --config)")
    cfg = load_config(cfg_path)
    params = load_params(ckpt, cfg.model)
    corpus = _load_eval_corpus(Path(args.data))
    report, baseline = run_eval(params, cfg.model, corpus)
    report.write(args.report)
    with open(args.report, "a") as f:
        for k, v in baseline.scalars().items():
            f.write(f"baseline_{k}={v!r}\n")
    print(f"rmse={report.rmse:.4f} rel={report.rel:.4f} tepe={report.tepe:.2f}mm "
          f"opw={report.opw:.4f} (baseline rmse={baseline.rmse:.4f})")
    return 0


def _cmd_sim_dtof(args) -> int:
    depth = DepthFrame(read_pfm(args.depth))
    rgb = read_ppm(args.rgb)
    if rgb.shape[1:] != depth.depth.shape:
        raise ValueError(f"depth {depth.depth.shape} and rgb {rgb.shape[1:]} resolutions differ")
    cfg = load_config(args.config).dtof if args.config else RunConfig.defaults().dtof
    sparse = simulate_dtof(depth, rgb, cfg, args.frame_index)
    write_sparse_csv(args.out, sparse)
    print(f"wrote {len(sparse)} samples to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svdc", description="Video depth completion from sparse dToF samples")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic RGB-D + dToF dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="train the completion network")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--no-cross-loss", action="store_true")
    t.add_argument("--no-opw-loss", action="store_true")
    t.add_argument("--no-csea", action="store_true")
    t.add_argument("--fixed-kernel", choices=["small", "large"], default="")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a generated dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--config", default=None)
    e.set_defaults(func=_cmd_eval)

    s = sub.add_parser("sim-dtof", help="simulate sparse dToF samples for one frame")
    s.add_argument("--depth", required=True, help="ground-truth depth (PFM)")
    s.add_argument("--rgb", required=True, help="guidance image (PPM)")
    s.add_argument("--out", required=True, help="output CSV")
    s.add_argument("--config", default=None)
    s.add_argument("--frame-index", type=int, default=0)
    s.set_defaults(func=_cmd_sim_dtof)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # one-line cause, nonzero exit
        print(f"svdc: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
