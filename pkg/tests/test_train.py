from collections import OrderedDict

import numpy as np
import pytest

from svdc.checkpoint import load_checkpoint
from svdc.dtof import DToFConfig
from svdc.net import FrameInput, ModelConfig, init_params
from svdc.scene import SceneConfig
from svdc.tensor import Tensor
from svdc.train import (
    AdamW,
    TrainConfig,
    WindowBatch,
    build_corpus,
    nearest_sample_baseline,
    one_cycle_lr,
    run_eval,
    run_training,
    sample_window_batch,
    stitched_inference,
)

TINY_MODEL = ModelConfig(base_channels=4, guide_channels=2, num_bins=4, num_offsets=2)
TINY_SCENE = SceneConfig(resolution_h=16, resolution_w=16, num_frames=5, seed=3)
TINY_DTOF = DToFConfig(seed=3)


def tiny_train(**kw):
    base = dict(steps=10, batch=1, lr_max=1e-3, train_scenes=2, checkpoint_every=0)
    base.update(kw)
    return TrainConfig(**base)


# -- schedule ---------------------------------------------------------------------


def test_one_cycle_schedule_shape():
    cfg = TrainConfig(steps=100, warmup_frac=0.3, lr_max=1e-3)
    warm = 30
    assert one_cycle_lr(0, cfg) == pytest.approx(1e-3 / 25)
    assert one_cycle_lr(warm, cfg) == pytest.approx(1e-3)  # exactly lr_max at the boundary
    lrs = [one_cycle_lr(s, cfg) for s in range(0, 101)]
    assert all(b > a for a, b in zip(lrs[:warm], lrs[1 : warm + 1]))  # monotone warmup
    assert all(b < a for a, b in zip(lrs[warm:-1], lrs[warm + 1 :]))  # monotone decay
    assert min(lrs) > 0.0
    assert lrs[-1] == pytest.approx(1e-3 / 1e4, rel=1e-3)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(grad_clip=0.0)
    with pytest.raises(ValueError):
        TrainConfig(warmup_frac=1.0)
    with pytest.raises(ValueError):
        TrainConfig(steps=0)


# -- optimiser ---------------------------------------------------------------------


def test_adamw_clips_gradients():
    cfg = TrainConfig(grad_clip=0.1, weight_decay=0.0, lr_max=1e-2)
    p = Tensor(np.zeros(3), requires_grad=True)
    p.grad = np.array([50.0, -50.0, 0.05])
    opt = AdamW(OrderedDict([("p", p)]), cfg)
    max_g = opt.step(lr=1e-2)
    assert max_g == pytest.approx(0.1)
    # clipped step: |update| = lr * mhat / (sqrt(vhat) + eps) ~= lr
    assert np.abs(p.data).max() <= 1e-2 + 1e-9


def test_adamw_lr_zero_applies_only_decay_shrinkage():
    cfg = TrainConfig(weight_decay=1e-2, lr_max=1e-3)
    start = np.array([1.0, -2.0, 0.5])
    p = Tensor(start.copy(), requires_grad=True)
    p.grad = np.array([0.3, -0.2, 0.1])
    opt = AdamW(OrderedDict([("p", p)]), cfg)
    opt.step(lr=0.0)
    assert np.allclose(p.data, start * (1.0 - 1e-2 * 1e-3), atol=1e-15)


def test_adamw_rejects_nonfinite():
    cfg = TrainConfig()
    p = Tensor(np.ones(2), requires_grad=True)
    p.grad = np.array([np.nan, 0.0])
    opt = AdamW(OrderedDict([("p", p)]), cfg)
    with pytest.raises(FloatingPointError):
        opt.step(lr=1e-3)


def test_adamw_missing_grad_is_zero_update_plus_decay():
    cfg = TrainConfig(weight_decay=1e-2, lr_max=1e-3)
    p = Tensor(np.array([4.0]), requires_grad=True)
    opt = AdamW(OrderedDict([("p", p)]), cfg)
    opt.step(lr=5e-4)
    assert np.allclose(p.data, 4.0 * (1.0 - 1e-2 * 1e-3))


# -- data plumbing ------------------------------------------------------------------


def test_build_corpus_shapes():
    corpus = build_corpus(TINY_SCENE, TINY_DTOF, num_scenes=2)
    assert len(corpus) == 2
    for scene in corpus:
        assert len(scene) == TINY_SCENE.num_frames
        for f in scene:
            assert f.guidance.shape == (3, 16, 16)
            assert f.sparse_dense.shape == (1, 16, 16)
            assert (f.sparse_dense >= 0).all()
            assert f.gt.valid.all()
    # different per-scene seeds give different scenes
    assert not np.array_equal(corpus[0][0].guidance, corpus[1][0].guidance)


def test_sample_window_batch_bounds():
    corpus = build_corpus(TINY_SCENE, TINY_DTOF, num_scenes=1)
    rng = np.random.default_rng(0)
    for _ in range(20):
        wb = sample_window_batch(corpus, rng, window=3)
        assert len(wb.frames) == 4
        assert len(wb.window_j) == 3 and len(wb.window_j1) == 3
        assert wb.window_j[1:] == wb.window_j1[:-1]
    with pytest.raises(ValueError):
        WindowBatch([corpus[0][0]])


# -- training loop ------------------------------------------------------------------


def test_short_training_reduces_loss():
    cfg = tiny_train(steps=150, lr_max=1e-2, warmup_frac=0.2, train_scenes=1)
    _, history = run_training(cfg, TINY_SCENE, TINY_DTOF, TINY_MODEL)
    first = np.mean([h["total"] for h in history[:5]])
    last = np.mean([h["total"] for h in history[-5:]])
    assert last < 0.65 * first
    assert all(np.isfinite(h["total"]) for h in history)
    assert max(h["max_grad"] for h in history) <= cfg.grad_clip + 1e-12


def test_training_determinism():
    cfg = tiny_train(steps=4)
    p1, h1 = run_training(cfg, TINY_SCENE, TINY_DTOF, TINY_MODEL)
    p2, h2 = run_training(cfg, TINY_SCENE, TINY_DTOF, TINY_MODEL)
    for k in p1:
        assert np.array_equal(p1[k].data, p2[k].data)
    assert [h["total"] for h in h1] == [h["total"] for h in h2]


def test_training_seed_changes_result():
    p1, _ = run_training(tiny_train(steps=3, seed=0), TINY_SCENE, TINY_DTOF, TINY_MODEL)
    p2, _ = run_training(tiny_train(steps=3, seed=1), TINY_SCENE, TINY_DTOF, TINY_MODEL)
    assert any(not np.array_equal(p1[k].data, p2[k].data) for k in p1)


def test_training_artifacts_written(tmp_path):
    cfg = tiny_train(steps=4, checkpoint_every=2)
    run_training(cfg, TINY_SCENE, TINY_DTOF, TINY_MODEL, out_dir=tmp_path)
    assert (tmp_path / "checkpoint.svdckpt").exists()
    assert (tmp_path / "ckpt_000002.svdckpt").exists()
    assert (tmp_path / "ckpt_000004.svdckpt").exists()
    lines = (tmp_path / "loss_curve.csv").read_text().strip().splitlines()
    assert lines[0] == "step,total,si_final,si_coarse,cross,opw,lr,max_grad"
    assert len(lines) == 5
    # final periodic checkpoint matches the final checkpoint bit for bit
    a = load_checkpoint(tmp_path / "checkpoint.svdckpt")
    b = load_checkpoint(tmp_path / "ckpt_000004.svdckpt")
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_ablation_flags_change_history():
    base = tiny_train(steps=3)
    no_cross = tiny_train(steps=3, use_cross_loss=False)
    _, h1 = run_training(base, TINY_SCENE, TINY_DTOF, TINY_MODEL)
    _, h2 = run_training(no_cross, TINY_SCENE, TINY_DTOF, TINY_MODEL)
    assert h1[0]["cross"] > 0.0
    assert all(h["cross"] == 0.0 for h in h2)
    assert h2[0]["si_final"] == pytest.approx(h1[0]["si_final"])  # same init and data


# -- inference and evaluation -----------------------------------------------------------


def test_stitched_inference_coverage_and_ownership():
    params = init_params(TINY_MODEL, seed=0)
    corpus = build_corpus(
        SceneConfig(resolution_h=16, resolution_w=16, num_frames=7, seed=5), TINY_DTOF, 1
    )
    preds, window_of = stitched_inference(params, TINY_MODEL, corpus[0])
    assert all(p is not None and p.shape == (16, 16) for p in preds)
    # stride-3 windows plus a tail window that owns only the last frame
    assert window_of == [0, 0, 0, 1, 1, 1, 2]
    with pytest.raises(ValueError):
        stitched_inference(params, TINY_MODEL, corpus[0][:2])


def test_nearest_sample_baseline_interpolates():
    sparse = np.zeros((1, 6, 6))
    sparse[0, 1, 1] = 2.0
    sparse[0, 4, 4] = 5.0
    out = nearest_sample_baseline(FrameInput(guidance=np.zeros((3, 6, 6)), sparse_dense=sparse))
    assert out[1, 1] == 2.0 and out[4, 4] == 5.0
    assert out[0, 0] == 2.0  # nearest neighbour fill
    assert out[5, 5] == 5.0
    assert set(np.unique(out)) == {2.0, 5.0}
    empty = nearest_sample_baseline(FrameInput(guidance=np.zeros((3, 6, 6)), sparse_dense=np.zeros((1, 6, 6))))
    assert np.isfinite(empty).all() and (empty > 0).all()


def test_run_eval_reports():
    params = init_params(TINY_MODEL, seed=0)
    corpus = build_corpus(TINY_SCENE, TINY_DTOF, num_scenes=1)
    report, baseline = run_eval(params, TINY_MODEL, corpus)
    for rep in (report, baseline):
        assert np.isfinite(rep.rmse) and rep.rmse > 0
        assert 0 <= rep.delta1 <= rep.delta2 <= rep.delta3 <= 1
        assert np.isfinite(rep.tepe) and np.isfinite(rep.opw)
        assert len(rep.per_frame) == TINY_SCENE.num_frames
    # the noiseless-ish baseline interpolation should be a sane yardstick
    assert baseline.rmse < 5.0
