import numpy as np
import pytest

from svdc import tensor as T


def rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-6)


def gradcheck(fn, leaves, h=1e-5, tol=1e-4, max_entries=None, rng=None):
    """Compare analytic gradients of scalar fn() against central differences.

    ``leaves`` are the trainable tensors fn reads. When ``max_entries`` is
    set, a random subset of entries per leaf is checked (for big models).
    Returns the worst relative error seen.
    """
    for leaf in leaves:
        leaf.zero_grad()
    loss = fn()
    T.backward(loss)
    analytic = [np.array(leaf.grad) if leaf.grad is not None else np.zeros(leaf.shape)
                for leaf in leaves]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for leaf, ag in zip(leaves, analytic):
        flat = leaf.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idxs = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            err = rel_err(ag.reshape(-1)[i], numeric)
            worst = max(worst, err)
            assert err < tol, (
                f"gradient mismatch for {leaf!r} entry {i}: "
                f"analytic {ag.reshape(-1)[i]:.8g} vs numeric {numeric:.8g} (rel {err:.2e})"
            )
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
