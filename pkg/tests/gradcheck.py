"""Central finite-difference helpers shared by the gradient tests."""

import numpy as np

H = 1e-5


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f, arr, h=H, max_entries=None, rng=None):
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (mutated in place and restored).

    Returns ``(indices, values)``; with ``max_entries`` only a random subset
    of entries is probed.
    """
    flat = arr.reshape(-1)
    idx = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False))
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[j] = (fp - fm) / (2 * h)
    return idx, out


def check_params(f, params, grads, max_entries=None, rng=None):
    """Largest per-tensor relative error between ``grads`` and finite differences."""
    worst = 0.0
    for k, p in params.items():
        if not p.flags.writeable:
            continue
        idx, num = numeric_grad(f, p, max_entries=max_entries, rng=rng)
        worst = max(worst, rel_err(grads[k].reshape(-1)[idx], num))
    return worst
