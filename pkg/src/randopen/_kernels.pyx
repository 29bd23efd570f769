# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled backward-orbit kernels.

Both routines release the GIL so chunks can run on worker threads.  The
arithmetic order matches the numpy fallback exactly (built with
``-ffp-contract=off``), so the two backends agree bit for bit.
"""

import numpy as np


def positions(const unsigned char[:, ::1] digits, const double[::1] y,
              const double[:, ::1] origin, const double[:, ::1] scale):
    """``x[:, T] = y`` and ``x[:, t] = origin[t, a_t] + scale[t, a_t] * x[:, t + 1]``."""
    cdef Py_ssize_t M = digits.shape[0]
    cdef Py_ssize_t T = digits.shape[1]
    cdef Py_ssize_t m, t
    cdef unsigned char a
    cdef double v
    out = np.empty((M, T + 1), dtype=np.float64)
    cdef double[:, ::1] x = out
    with nogil:
        for m in range(M):
            v = y[m]
            x[m, T] = v
            for t in range(T - 1, -1, -1):
                a = digits[m, t]
                v = origin[t, a] + scale[t, a] * v
                x[m, t] = v
    return out


def prefix_sums(const unsigned char[:, ::1] digits, const double[::1] y,
                const double[:, ::1] origin, const double[:, ::1] scale,
                const long long[::1] sym, const double[:, ::1] bp,
                const double[:, ::1] slope, const double[:, ::1] icpt,
                const double[::1] centering):
    """Prefix sums ``S[:, n] = sum_{j<n} (f_{sym_j}(x_j) - centering_j)`` for ``n <= len(sym)``."""
    cdef Py_ssize_t M = digits.shape[0]
    cdef Py_ssize_t T = digits.shape[1]
    cdef Py_ssize_t n_obs = sym.shape[0]
    cdef Py_ssize_t P = slope.shape[1]
    cdef Py_ssize_t m, t, p
    cdef long long s
    cdef unsigned char a
    cdef double v, acc
    out = np.empty((M, n_obs + 1), dtype=np.float64)
    cdef double[:, ::1] S = out
    with nogil:
        for m in range(M):
            v = y[m]
            for t in range(T - 1, -1, -1):
                a = digits[m, t]
                v = origin[t, a] + scale[t, a] * v
                if t < n_obs:
                    s = sym[t]
                    p = 0
                    while p < P - 1 and v >= bp[s, p + 1]:
                        p += 1
                    S[m, t + 1] = slope[s, p] * v + icpt[s, p] - centering[t]
            S[m, 0] = 0.0
            acc = 0.0
            for t in range(n_obs):
                acc = acc + S[m, t + 1]
                S[m, t + 1] = acc
    return out
