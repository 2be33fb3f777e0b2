"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

All training numerics are 64-bit floats so that finite-difference gradient
checks are meaningful. Tensors are plain numpy arrays plus an optional tape
node; the tape is rebuilt on every forward pass and released after backward.

Broadcasting is deliberately restricted: two operands must either share a
shape, or differ only in axes of size 1 (e.g. a ``[C,1,1]`` channel weight
against a ``[C,H,W]`` feature). Anything else raises :class:`ShapeError`.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """Dense float64 array participating in a differentiable graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = self.name or ("param" if self.requires_grad and not self._parents else "tensor")
        return f"Tensor({tag}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    """Wrap ndarrays / scalars as constant tensors; pass tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Create an op output, recording the tape only if a parent needs grads."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _check_broadcast(sa: tuple[int, ...], sb: tuple[int, ...]) -> None:
    if sa == sb:
        return
    if len(sa) != len(sb):
        # allow scalars against anything
        if np.prod(sa) == 1 or np.prod(sb) == 1:
            return
        raise ShapeError(f"cannot broadcast {sa} with {sb}")
    for a, b in zip(sa, sb):
        if a != b and a != 1 and b != 1:
            raise ShapeError(f"cannot broadcast {sa} with {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    if np.prod(shape) == 1:
        return g.sum().reshape(shape)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic -----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out_data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(out_data, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)

    def backward(g):
        _accum(a, g * s)

    return _node(a.data * s, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0

    def backward(g):
        _accum(a, g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # stable two-sided formulation: never exponentiates a large positive value
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        _accum(a, g * y * (1.0 - y))

    return _node(y, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - y * y))

    return _node(y, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)

    def backward(g):
        _accum(a, g * y)

    return _node(y, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g / a.data)

    return _node(np.log(a.data), (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)

    def backward(g):
        _accum(a, g * sign)

    return _node(np.abs(a.data), (a,), backward)


def clamp_min(a, lo: float) -> Tensor:
    """max(a, lo); gradient passes only where a > lo."""
    a = as_tensor(a)
    mask = a.data > lo

    def backward(g):
        _accum(a, g * mask)

    return _node(np.maximum(a.data, lo), (a,), backward)


def sqrt_floored(a, eps: float = 1e-12) -> Tensor:
    """sqrt(max(a, 0)) with the gradient zeroed at and below the floor.

    Guards the scale-invariant loss radicand, which can hit 0 for perfect
    predictions where sqrt has an infinite derivative.
    """
    a = as_tensor(a)
    r = np.maximum(a.data, 0.0)
    y = np.sqrt(r)

    def backward(g):
        safe = r > eps
        _accum(a, np.where(safe, g * 0.5 / np.where(safe, y, 1.0), 0.0))

    return _node(y, (a,), backward)


# -- reductions -----------------------------------------------------------------


def tsum(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, np.full(a.shape, float(g.sum())))

    return _node(np.array(a.data.sum()), (a,), backward)


def tmean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size

    def backward(g):
        _accum(a, np.full(a.shape, float(g.sum()) / n))

    return _node(np.array(a.data.mean()), (a,), backward)


def sum_channel(a) -> Tensor:
    """Sum a [C,H,W] tensor over its channel axis, keeping a leading axis of 1."""
    a = as_tensor(a)
    if a.ndim != 3:
        raise ShapeError(f"sum_channel expects [C,H,W], got {a.shape}")

    def backward(g):
        _accum(a, np.broadcast_to(g, a.shape))

    return _node(a.data.sum(axis=0, keepdims=True), (a,), backward)


# -- pooling ----------------------------------------------------------------------


def pool_spatial(a, mode: str) -> Tensor:
    """Global per-channel pooling of [C,H,W] down to [C,1,1]."""
    a = as_tensor(a)
    if a.ndim != 3:
        raise ShapeError(f"pool_spatial expects [C,H,W], got {a.shape}")
    C, H, W = a.shape
    if mode == "avg":
        out = a.data.mean(axis=(1, 2), keepdims=True)

        def backward(g):
            _accum(a, np.broadcast_to(g / (H * W), a.shape))

        return _node(out, (a,), backward)
    if mode == "max":
        flat = a.data.reshape(C, -1)
        idx = flat.argmax(axis=1)
        out = flat[np.arange(C), idx].reshape(C, 1, 1)

        def backward(g):
            da = np.zeros_like(flat)
            da[np.arange(C), idx] = g.reshape(C)
            _accum(a, da.reshape(a.shape))

        return _node(out, (a,), backward)
    raise ValueError(f"unknown pooling mode {mode!r}")


def pool_channel(a, mode: str) -> Tensor:
    """Per-pixel pooling of [C,H,W] along the channel axis, down to [1,H,W]."""
    a = as_tensor(a)
    if a.ndim != 3:
        raise ShapeError(f"pool_channel expects [C,H,W], got {a.shape}")
    C, H, W = a.shape
    if mode == "avg":
        out = a.data.mean(axis=0, keepdims=True)

        def backward(g):
            _accum(a, np.broadcast_to(g / C, a.shape))

        return _node(out, (a,), backward)
    if mode == "max":
        idx = a.data.argmax(axis=0)
        out = np.take_along_axis(a.data, idx[None], axis=0)

        def backward(g):
            da = np.zeros(a.shape)
            np.put_along_axis(da, idx[None], g, axis=0)
            _accum(a, da)

        return _node(out, (a,), backward)
    raise ValueError(f"unknown pooling mode {mode!r}")


def softmax_channel(a) -> Tensor:
    """Per-pixel softmax over the channel axis of [C,H,W] (max-subtracted)."""
    a = as_tensor(a)
    if a.ndim != 3:
        raise ShapeError(f"softmax_channel expects [C,H,W], got {a.shape}")
    z = a.data - a.data.max(axis=0, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=0, keepdims=True)
        _accum(a, y * (g - dot))

    return _node(y, (a,), backward)


# -- structural ops -----------------------------------------------------------------


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
            i != axis and d != ref[i] for i, d in enumerate(t.shape)
        ):
            raise ShapeError(f"concat shapes {[t.shape for t in ts]} on axis {axis}")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _node(out, tuple(ts), backward)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = as_tensor(a)
    if not 0 <= start <= start + length <= a.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}] out of range for {a.shape}")
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def backward(g):
        da = np.zeros(a.shape)
        da[sl] = g
        _accum(a, da)

    return _node(a.data[sl].copy(), (a,), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def backward(g):
        _accum(a, g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = np.argsort(axes)

    def backward(g):
        _accum(a, g.transpose(inv))

    return _node(a.data.transpose(axes), (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape}")
    out = a.data @ b.data

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(out, (a, b), backward)


def depth_to_space(a, r: int) -> Tensor:
    """Rearrange [C*r*r,h,w] into [C,h*r,w*r] (sub-pixel shuffle)."""
    a = as_tensor(a)
    Crr, h, w = a.shape
    if Crr % (r * r) != 0:
        raise ShapeError(f"depth_to_space: {Crr} channels not divisible by {r * r}")
    C = Crr // (r * r)
    out = (
        a.data.reshape(C, r, r, h, w)
        .transpose(0, 3, 1, 4, 2)
        .reshape(C, h * r, w * r)
    )

    def backward(g):
        da = (
            g.reshape(C, h, r, w, r)
            .transpose(0, 2, 4, 1, 3)
            .reshape(a.shape)
        )
        _accum(a, da)

    return _node(out, (a,), backward)


def space_to_depth(a, r: int) -> Tensor:
    """Rearrange [C,h*r,w*r] into [C*r*r,h,w] (inverse sub-pixel shuffle)."""
    a = as_tensor(a)
    C, H, W = a.shape
    if H % r or W % r:
        raise ShapeError(f"space_to_depth: {a.shape} not divisible by {r}")
    h, w = H // r, W // r
    out = (
        a.data.reshape(C, h, r, w, r)
        .transpose(0, 2, 4, 1, 3)
        .reshape(C * r * r, h, w)
    )

    def backward(g):
        da = (
            g.reshape(C, r, r, h, w)
            .transpose(0, 3, 1, 4, 2)
            .reshape(a.shape)
        )
        _accum(a, da)

    return _node(out, (a,), backward)


# -- convolution --------------------------------------------------------------------


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of [C_in,H,W] with [C_out,C_in,k,k] weights."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] input and [O,I,k,k] weight, got {x.shape}, {w.shape}")
    Cout, Cin, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d kernel must be square and odd, got {k}x{k2}")
    if x.shape[0] != Cin:
        raise ShapeError(f"conv2d input has {x.shape[0]} channels, weight expects {Cin}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (Cout,):
            raise ShapeError(f"conv2d bias shape {b.shape}, expected ({Cout},)")
    H, W = x.shape[1:]
    s, p = int(stride), int(padding)
    Ho = (H + 2 * p - k) // s + 1
    Wo = (W + 2 * p - k) // s + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}, k={k}, stride={s}, pad={p}")

    xp = np.pad(x.data, ((0, 0), (p, p), (p, p))) if p else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(Cin * k * k, Ho * Wo)
    w2 = w.data.reshape(Cout, Cin * k * k)
    out = (w2 @ cols).reshape(Cout, Ho, Wo)
    if b is not None:
        out = out + b.data[:, None, None]

    def backward(g):
        g2 = g.reshape(Cout, Ho * Wo)
        if w.requires_grad:
            _accum(w, (g2 @ cols.T).reshape(w.shape))
        if b is not None and b.requires_grad:
            _accum(b, g2.sum(axis=1))
        if x.requires_grad:
            dcols = (w2.T @ g2).reshape(Cin, k, k, Ho, Wo)
            dxp = np.zeros((Cin, H + 2 * p, W + 2 * p))
            for ki in range(k):
                for kj in range(k):
                    dxp[:, ki : ki + s * Ho : s, kj : kj + s * Wo : s] += dcols[:, ki, kj]
            _accum(x, dxp[:, p : p + H, p : p + W] if p else dxp)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, backward)


# -- bilinear sampling ----------------------------------------------------------------


def grid_sample(src, u, v) -> Tensor:
    """Bilinear sampling of [C,H,W] ``src`` at pixel coordinates ``(u, v)``.

    ``u``/``v`` are [h,w] arrays (or tensors, which makes the output
    differentiable with respect to the coordinates). Out-of-bounds
    coordinates clamp to the border; the coordinate gradient is zero in the
    clamped region.
    """
    src = as_tensor(src)
    u, v = as_tensor(u), as_tensor(v)
    if src.ndim != 3:
        raise ShapeError(f"grid_sample expects [C,H,W] source, got {src.shape}")
    if u.shape != v.shape:
        raise ShapeError(f"coordinate shapes differ: {u.shape} vs {v.shape}")
    C, H, W = src.shape

    uc = np.clip(u.data, 0.0, W - 1.0)
    vc = np.clip(v.data, 0.0, H - 1.0)
    i0 = np.minimum(np.floor(uc).astype(np.int64), W - 2) if W > 1 else np.zeros_like(uc, dtype=np.int64)
    j0 = np.minimum(np.floor(vc).astype(np.int64), H - 2) if H > 1 else np.zeros_like(vc, dtype=np.int64)
    i1 = np.minimum(i0 + 1, W - 1)
    j1 = np.minimum(j0 + 1, H - 1)
    fu = uc - i0
    fv = vc - j0

    s = src.data
    p00 = s[:, j0, i0]
    p01 = s[:, j0, i1]
    p10 = s[:, j1, i0]
    p11 = s[:, j1, i1]
    w00 = (1.0 - fv) * (1.0 - fu)
    w01 = (1.0 - fv) * fu
    w10 = fv * (1.0 - fu)
    w11 = fv * fu
    out = w00 * p00 + w01 * p01 + w10 * p10 + w11 * p11

    def backward(g):
        if src.requires_grad:
            flat = np.concatenate([(jj * W + ii).ravel()
                                   for jj, ii in ((j0, i0), (j0, i1), (j1, i0), (j1, i1))])
            vals = np.concatenate([(g * ww).reshape(C, -1)
                                   for ww in (w00, w01, w10, w11)], axis=1)
            dsrc = np.stack([np.bincount(flat, vals[c], minlength=H * W) for c in range(C)])
            _accum(src, dsrc.reshape(src.shape))
        if u.requires_grad or v.requires_grad:
            du_map = ((1.0 - fv) * (p01 - p00) + fv * (p11 - p10))
            dv_map = ((1.0 - fu) * (p10 - p00) + fu * (p11 - p01))
            in_u = (u.data > 0.0) & (u.data < W - 1.0)
            in_v = (v.data > 0.0) & (v.data < H - 1.0)
            _accum(u, (g * du_map).sum(axis=0) * in_u)
            _accum(v, (g * dv_map).sum(axis=0) * in_v)

    return _node(out, (src, u, v), backward)


def upsample_bilinear(a, factor: int) -> Tensor:
    """Bilinear upsampling of [C,h,w] by an integer factor (align-corners)."""
    a = as_tensor(a)
    if a.ndim != 3:
        raise ShapeError(f"upsample_bilinear expects [C,h,w], got {a.shape}")
    C, h, w = a.shape
    H, W = h * factor, w * factor
    # align-corners mapping keeps constants exactly constant
    u = np.linspace(0.0, w - 1.0, W) if w > 1 else np.zeros(W)
    v = np.linspace(0.0, h - 1.0, H) if h > 1 else np.zeros(H)
    uu, vv = np.meshgrid(u, v)
    return grid_sample(a, uu, vv)


# -- backward driver ------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Reverse-topological gradient accumulation from a scalar loss.

    Gradients accumulate into ``.grad`` buffers; call ``zero_grad`` on the
    leaves (or rebuild them) between optimisation steps. Repeated backward
    therefore acts as an explicit accumulate mode.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not connected to any trainable tensor")

    # iterative topological sort (graphs are deep enough to overflow recursion)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)
            if node._parents:
                node.grad = None  # interior grads are transient
