"""Pure numpy versions of the compiled kernels (same arithmetic order)."""

from __future__ import annotations

import numpy as np


def positions(digits, y, origin, scale):
    digits = np.asarray(digits, dtype=np.uint8)
    M, T = digits.shape
    x = np.empty((M, T + 1))
    v = np.asarray(y, dtype=float).copy()
    x[:, T] = v
    for t in range(T - 1, -1, -1):
        a = digits[:, t]
        v = origin[t, a] + scale[t, a] * v
        x[:, t] = v
    return x


def prefix_sums(digits, y, origin, scale, sym, bp, slope, icpt, centering):
    digits = np.asarray(digits, dtype=np.uint8)
    M, T = digits.shape
    n_obs = len(sym)
    P = slope.shape[1]
    S = np.empty((M, n_obs + 1))
    v = np.asarray(y, dtype=float).copy()
    for t in range(T - 1, -1, -1):
        a = digits[:, t]
        v = origin[t, a] + scale[t, a] * v
        if t < n_obs:
            s = sym[t]
            p = (v[:, None] >= bp[s, 1:P][None, :]).sum(axis=1)
            S[:, t + 1] = slope[s, p] * v + icpt[s, p] - centering[t]
    S[:, 0] = 0.0
    np.cumsum(S[:, 1:], axis=1, out=S[:, 1:])
    return S
