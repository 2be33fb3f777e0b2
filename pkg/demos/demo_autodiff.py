#!/usr/bin/env python3
"""Tour of the tensor engine: build a small graph, backprop it, and verify the
gradients against central finite differences."""

import numpy as np

from svdc import tensor as T

rng = np.random.default_rng(0)

# a tiny convolutional "model": conv -> relu -> conv -> sigmoid -> mean
x = T.Tensor(rng.normal(size=(2, 8, 8)))
w1 = T.Tensor(rng.normal(size=(4, 2, 3, 3)) * 0.3, requires_grad=True)
b1 = T.Tensor(np.zeros(4), requires_grad=True)
w2 = T.Tensor(rng.normal(size=(1, 4, 3, 3)) * 0.3, requires_grad=True)


def forward():
    h = T.relu(T.conv2d(x, w1, b1, padding=1))
    y = T.sigmoid(T.conv2d(h, w2, padding=1))
    return T.tmean(y)


loss = forward()
T.backward(loss)
print(f"loss = {loss.item():.6f}")
print(f"w1 grad norm = {np.linalg.norm(w1.grad):.6f}")

# spot-check a few weight entries with central differences
h = 1e-5
checked = 0
worst = 0.0
for leaf in (w1, b1, w2):
    flat = leaf.data.reshape(-1)
    gflat = leaf.grad.reshape(-1)
    for idx in rng.choice(flat.size, size=4, replace=False):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = forward().item()
        flat[idx] = orig - h
        fm = forward().item()
        flat[idx] = orig
        numeric = (fp - fm) / (2 * h)
        err = abs(gflat[idx] - numeric) / max(abs(numeric), 1e-6)
        worst = max(worst, err)
        checked += 1
print(f"checked {checked} entries, worst relative error {worst:.2e}")

# gradient accumulation: two backward passes double the gradient
w1.zero_grad()
b1.zero_grad()
w2.zero_grad()
T.backward(forward())
g_once = w1.grad.copy()
T.backward(forward())
print("accumulation doubles grads:", np.allclose(w1.grad, 2 * g_once))

# the bilinear sampler is differentiable in its coordinates too
src = T.Tensor(rng.normal(size=(1, 5, 5)))
u = T.Tensor(np.full((2, 2), 1.7), requires_grad=True)
v = T.Tensor(np.full((2, 2), 2.3), requires_grad=True)
T.backward(T.tsum(T.grid_sample(src, u, v)))
print("coordinate gradients:", u.grad.ravel()[:2], v.grad.ravel()[:2])
