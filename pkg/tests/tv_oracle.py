"""Dense grid-search minimiser for tiny TV problems (test oracle)."""

import numpy as np


def tv_objective_dense(Hm, y, xs, lam, shape):
    """Objective for a stack of flattened candidates xs of shape (K, n)."""
    imgs = xs.reshape((-1,) + tuple(shape))
    tv = np.abs(np.diff(imgs, axis=1)).sum(axis=(1, 2)) + np.abs(np.diff(imgs, axis=2)).sum(axis=(1, 2))
    r = xs @ Hm.T - y
    return 0.5 * np.sum(r * r, axis=1) + lam * tv


def grid_minimum(Hm, y, lam, shape, lo=0.0, hi=2.0, step=1e-3, nodes=13):
    """Coarse-to-fine grid search over the box [lo, hi]^n.

    Each pass evaluates a full tensor grid and recentres a window of
    ±3 spacings on the best node; the final pass has spacing <= ``step``.
    """
    n = int(np.prod(shape))
    center = np.full(n, (lo + hi) / 2)
    half = (hi - lo) / 2
    while True:
        h = 2 * half / (nodes - 1)
        axes = [np.clip(np.linspace(c - half, c + half, nodes), lo, hi) for c in center]
        xs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        f = tv_objective_dense(Hm, y, xs, lam, shape)
        i = int(np.argmin(f))
        if h <= step:
            return xs[i], float(f[i])
        center = xs[i]
        half = 3 * h
