"""The multi-frame depth completion network.

Per-frame encoder to 1/4 resolution, flow-guided alignment (8 learned
residual flows merged by a 1x1 conv), channel-spatial enhancement attention
(CSEA), adaptive frequency-selective fusion (AFSF) blending a small-kernel
and a large-kernel path, a bin-based depth head, and feature-guided
sub-pixel upsampling back to full resolution.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .flow_ops import FlowField
from .scene import DepthFrame
from .tensor import ShapeError, Tensor


@dataclass
class ModelConfig:
    base_channels: int = 16
    guide_channels: int = 8
    num_bins: int = 16
    depth_min: float = 0.5
    depth_max: float = 8.0
    kernel_small: int = 1
    kernel_large: int = 3
    num_offsets: int = 8
    window: int = 3
    residual_clamp: float = 2.0
    use_csea: bool = True
    fixed_kernel: str = ""  # "", "small" or "large"

    def __post_init__(self):
        if self.kernel_small % 2 == 0 or self.kernel_large % 2 == 0:
            raise ValueError("fusion kernels must be odd")
        if self.kernel_small >= self.kernel_large:
            raise ValueError("kernel_small must be smaller than kernel_large")
        if self.num_bins < 1:
            raise ValueError("need at least one depth bin")
        if self.depth_min <= 0 or self.depth_max <= self.depth_min:
            raise ValueError(f"bad depth range [{self.depth_min}, {self.depth_max}]")
        if self.fixed_kernel not in ("", "small", "large"):
            raise ValueError(f"fixed_kernel must be '', 'small' or 'large', got {self.fixed_kernel!r}")


@dataclass
class FrameInput:
    """One frame of network input at full resolution."""

    guidance: np.ndarray  # [3,H,W] in [0,1]
    sparse_dense: np.ndarray  # [1,H,W], meters, 0 = no measurement
    flow_fwd: FlowField | None = None  # n -> n+1
    flow_bwd: FlowField | None = None  # n -> n-1
    gt: DepthFrame | None = None


def init_params(cfg: ModelConfig, seed: int = 0) -> "OrderedDict[str, Tensor]":
    """He-initialised trainable parameters; offset and residual heads start at zero."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    C, G, N = cfg.base_channels, cfg.guide_channels, cfg.num_bins
    Cb = max(C // 4, 1)
    ks, kl = cfg.kernel_small, cfg.kernel_large
    p: "OrderedDict[str, Tensor]" = OrderedDict()

    def conv(name, cout, cin, k, zero=False):
        if zero:
            w = np.zeros((cout, cin, k, k))
        else:
            w = rng.standard_normal((cout, cin, k, k)) * np.sqrt(2.0 / (cin * k * k))
        p[name + "_w"] = Tensor(w, requires_grad=True, name=name + "_w")
        p[name + "_b"] = Tensor(np.zeros(cout), requires_grad=True, name=name + "_b")

    conv("enc0", G, 4, 3)
    conv("enc1", C, G, 3)
    conv("enc2", C, C, 3)
    conv("align_off1", C, 2 * C + 2, 3)
    conv("align_off2", 2 * cfg.num_offsets, C, 3, zero=True)
    conv("align_merge", C, cfg.num_offsets * C, 1)
    conv("ce1", Cb, C, 1)
    conv("ce2", C, Cb, 1)
    conv("sa", 1, 2, 1)
    conv("afsf_s", C, 2 * C, ks)
    conv("afsf_l", C, 2 * C, kl)
    conv("res_b1", C, C, 3)
    conv("res_b2", C, C, 3)
    conv("res_f1", C, C, 3)
    conv("res_f2", C, C, 3)
    conv("bin1", C, C, 1)
    conv("bin2", N, C, 1)
    conv("prob", N, C, 1)
    conv("up1", C, 1 + 16 * G, 1)
    conv("up2", 16, C, 3, zero=True)
    return p


def save_params(path, params: "OrderedDict[str, Tensor]") -> None:
    save_checkpoint(path, params)


def load_params(path, cfg: ModelConfig, seed: int = 0) -> "OrderedDict[str, Tensor]":
    params = init_params(cfg, seed)
    stored = load_checkpoint(path)
    if set(stored) != set(params):
        missing = set(params) ^ set(stored)
        raise ShapeError(f"checkpoint does not match model config (mismatched keys: {sorted(missing)})")
    for name, arr in stored.items():
        if arr.shape != params[name].shape:
            raise ShapeError(f"checkpoint param {name} has shape {arr.shape}, model expects {params[name].shape}")
        params[name].data = np.ascontiguousarray(arr)
    return params


def _conv(p, name, x, stride=1, padding=None):
    w = p[name + "_w"]
    if padding is None:
        padding = w.shape[2] // 2
    return T.conv2d(x, w, p[name + "_b"], stride=stride, padding=padding)


# -- encoder -----------------------------------------------------------------------


def encode(params, cfg: ModelConfig, guidance: np.ndarray, sparse_dense: np.ndarray):
    """Full-res guide feature plus the 1/4-resolution frame feature."""
    H, W = guidance.shape[1:]
    if H % 4 or W % 4:
        raise ShapeError(f"input {H}x{W} not divisible by 4")
    x = Tensor(np.concatenate([guidance, sparse_dense / cfg.depth_max], axis=0))
    g0 = T.relu(_conv(params, "enc0", x))
    f1 = T.relu(_conv(params, "enc1", g0, stride=2))
    f2 = T.relu(_conv(params, "enc2", f1, stride=2))
    return f2, g0


# -- flow-guided alignment ------------------------------------------------------------


def flow_guided_align(params, cfg: ModelConfig, f_cur: Tensor, f_nb: Tensor,
                      coarse_flow: FlowField) -> Tensor:
    """Warp the neighbour feature onto the current grid.

    Predicts ``num_offsets`` residual flow pairs from the concatenated
    features and the coarse flow, warps the neighbour by each refined flow,
    and merges the candidates with a learned 1x1 conv.
    """
    h, w = f_cur.shape[1:]
    if f_nb.shape != f_cur.shape or coarse_flow.shape != (h, w):
        raise ShapeError(
            f"alignment resolution mismatch: {f_cur.shape} vs {f_nb.shape} vs flow {coarse_flow.shape}"
        )
    flow_c = np.ascontiguousarray(coarse_flow.flow.transpose(2, 0, 1))
    inp = T.concat([f_cur, f_nb, Tensor(flow_c)], axis=0)
    o = T.relu(_conv(params, "align_off1", inp))
    off = _conv(params, "align_off2", o)  # [2K,h,w]

    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    base_u = Tensor(uu + flow_c[0])
    base_v = Tensor(vv + flow_c[1])
    warped = []
    for k in range(cfg.num_offsets):
        du = T.reshape(T.narrow(off, 0, 2 * k, 1), (h, w))
        dv = T.reshape(T.narrow(off, 0, 2 * k + 1, 1), (h, w))
        warped.append(T.grid_sample(f_nb, T.add(base_u, du), T.add(base_v, dv)))
    return _conv(params, "align_merge", T.concat(warped, axis=0))


# -- CSEA --------------------------------------------------------------------------


def channel_enhance(params, F: Tensor) -> tuple[Tensor, Tensor]:
    """Channel attention from global avg/max statistics; returns (A_c * F, A_c)."""
    f_avg = T.pool_spatial(F, "avg")
    f_max = T.pool_spatial(F, "max")
    branch = lambda x: _conv(params, "ce2", T.relu(_conv(params, "ce1", x)))
    a_c = T.sigmoid(T.add(branch(f_avg), branch(f_max)))
    return T.mul(a_c, F), a_c


def spatial_attention(params, F: Tensor) -> Tensor:
    """Per-pixel attention from channel-avg and channel-max pooled maps."""
    pooled = T.concat([T.pool_channel(F, "avg"), T.pool_channel(F, "max")], axis=0)
    return T.sigmoid(_conv(params, "sa", pooled))


def csea(params, F: Tensor) -> tuple[Tensor, Tensor]:
    """Channel enhancement then spatial attention; returns (enhanced, attention map)."""
    f_ce, _ = channel_enhance(params, F)
    a = spatial_attention(params, f_ce)
    return T.mul(a, f_ce), a


# -- AFSF --------------------------------------------------------------------------


def afsf(params, features_cat: Tensor, A) -> Tensor:
    """Per-pixel convex blend of the small-kernel and large-kernel fusion paths."""
    f_s = _conv(params, "afsf_s", features_cat)
    f_l = _conv(params, "afsf_l", features_cat)
    a = T.as_tensor(A)
    one_minus = T.add(T.scale(a, -1.0), 1.0)
    return T.add(T.mul(a, f_s), T.mul(one_minus, f_l))


def _enhance(params, cfg: ModelConfig, F: Tensor) -> tuple[Tensor, Tensor]:
    """CSEA when enabled, otherwise the raw feature with a flat 0.5 map."""
    if cfg.use_csea:
        return csea(params, F)
    return F, Tensor(np.full((1,) + F.shape[1:], 0.5))


def _fusion_weight(cfg: ModelConfig, A: Tensor) -> Tensor:
    if cfg.fixed_kernel == "small":
        return Tensor(np.ones(A.shape))
    if cfg.fixed_kernel == "large":
        return Tensor(np.zeros(A.shape))
    return A


def _resblock(params, prefix: str, x: Tensor) -> Tensor:
    y = T.relu(_conv(params, prefix + "1", x))
    return T.add(x, _conv(params, prefix + "2", y))


def _fuse_step(params, cfg, prefix, f_cur: Tensor, f_nb_aligned: Tensor) -> Tensor:
    cur_enh, a = _enhance(params, cfg, f_cur)
    nb_enh, _ = _enhance(params, cfg, f_nb_aligned)
    fused = afsf(params, T.concat([cur_enh, nb_enh], axis=0), _fusion_weight(cfg, a))
    return _resblock(params, prefix, fused)


def bidirectional_propagate(params, cfg: ModelConfig, feats: list[Tensor],
                            flows_fwd: list[FlowField], flows_bwd: list[FlowField]) -> list[Tensor]:
    """Backward sweep over next-frame features, then a forward sweep over the
    refined states. Each step aligns the neighbour, enhances both streams
    with CSEA and fuses them with AFSF plus a residual block.

    Endpoints align a frame with itself under zero flow, which keeps the
    whole module an identical per-frame function on static scenes.
    """
    n = len(feats)
    zero = FlowField.zeros(*feats[0].shape[1:])
    h_bwd: list[Tensor] = [None] * n
    for i in reversed(range(n)):
        if i == n - 1:
            nb = flow_guided_align(params, cfg, feats[i], feats[i], zero)
        else:
            nb = flow_guided_align(params, cfg, feats[i], feats[i + 1], flows_fwd[i])
        h_bwd[i] = _fuse_step(params, cfg, "res_b", feats[i], nb)
    out: list[Tensor] = [None] * n
    for i in range(n):
        if i == 0:
            nb = flow_guided_align(params, cfg, h_bwd[i], h_bwd[i], zero)
        else:
            nb = flow_guided_align(params, cfg, h_bwd[i], h_bwd[i - 1], flows_bwd[i])
        out[i] = _fuse_step(params, cfg, "res_f", h_bwd[i], nb)
    return out


# -- depth head ----------------------------------------------------------------------


def depth_head(params, cfg: ModelConfig, feature: Tensor) -> Tensor:
    """Bin-based head: global bin widths plus per-pixel bin probabilities.

    Bin centers follow the cumulative mapping
    c_k = d_min + (d_max - d_min) * (cum_k - b_k / 2); the predicted depth
    is the probability-weighted sum of centers, hence always inside the
    configured depth range.
    """
    N = cfg.num_bins
    pooled = T.pool_spatial(feature, "avg")
    hid = T.relu(_conv(params, "bin1", pooled))
    b = T.softmax_channel(_conv(params, "bin2", hid))  # [N,1,1] widths
    b2 = T.reshape(b, (N, 1))
    cum = T.matmul(Tensor(np.tril(np.ones((N, N)))), b2)
    centers = T.add(
        T.scale(T.sub(cum, T.scale(b2, 0.5)), cfg.depth_max - cfg.depth_min),
        cfg.depth_min,
    )
    probs = T.softmax_channel(_conv(params, "prob", feature))  # [N,h,w]
    return T.sum_channel(T.mul(T.reshape(centers, (N, 1, 1)), probs))


# -- guided upsampling ------------------------------------------------------------------


def upsample_refine(params, cfg: ModelConfig, coarse: Tensor, guide: Tensor) -> Tensor:
    """Bilinear x4 upsample plus a guide-conditioned sub-pixel residual.

    The residual head predicts 16 channels at low resolution, rearranged
    depth-to-space; a tanh clamp bounds it to +-residual_clamp meters.
    """
    if guide.shape[1] != 4 * coarse.shape[1] or guide.shape[2] != 4 * coarse.shape[2]:
        raise ShapeError(f"guide {guide.shape} is not 4x the coarse grid {coarse.shape}")
    up = T.upsample_bilinear(coarse, 4)
    head_in = T.concat([coarse, T.space_to_depth(guide, 4)], axis=0)
    r = _conv(params, "up2", T.relu(_conv(params, "up1", head_in)))
    residual = T.scale(T.tanh(T.depth_to_space(r, 4)), cfg.residual_clamp)
    return T.add(up, residual)


# -- whole-window forward -----------------------------------------------------------------


def forward_window(params, cfg: ModelConfig, frames: list[FrameInput]):
    """Run the network on a window; returns per-frame (coarse, final) tensors."""
    if not frames:
        raise ShapeError("empty window")
    shape = frames[0].guidance.shape
    if any(f.guidance.shape != shape for f in frames):
        raise ShapeError("window frames have mismatched resolutions")
    feats, guides = [], []
    for f in frames:
        feat, g0 = encode(params, cfg, f.guidance, f.sparse_dense)
        feats.append(feat)
        guides.append(g0)
    h, w = feats[0].shape[1:]
    zero = FlowField.zeros(h, w)
    flows_fwd = [f.flow_fwd.downsample(4) if f.flow_fwd is not None else zero for f in frames]
    flows_bwd = [f.flow_bwd.downsample(4) if f.flow_bwd is not None else zero for f in frames]
    fused = bidirectional_propagate(params, cfg, feats, flows_fwd, flows_bwd)
    outputs = []
    for feat, g0 in zip(fused, guides):
        coarse = depth_head(params, cfg, feat)
        final = upsample_refine(params, cfg, coarse, g0)
        outputs.append((coarse, final))
    return outputs
