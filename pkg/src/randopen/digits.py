"""Symbolic coding of full-branch affine systems.

On a full-branch affine system every point is coded by its branch digits
``a_t`` (``T^t x`` lies in branch ``a_t`` of symbol ``omega_t``) and
``x_t = origin[t, a_t] + scale[t, a_t] * x_{t+1}``.  Lebesgue measure
restricted to the surviving set ``X_{omega,N}`` makes the digits independent,
with ``P(a_t = a)`` proportional to the branch width ``1/|slope|`` over the
branches outside the hole for ``t <= N``; ``x_{N+1}`` is then uniform.
Positions are therefore computed backwards from the tail, which keeps full
double precision at every time (forward iteration of ``4x mod 1`` loses two
bits per step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import kernels
from .errors import ConfigurationError
from .system import OpenSystem, Realization


@dataclass(frozen=True)
class DigitModel:
    """Per-time inverse-branch tables and digit laws along one fibre.

    Times ``0 .. T-1`` carry digits; the first ``n_surviving`` of them are
    restricted to branches outside the hole.
    """

    symbols: np.ndarray
    origin: np.ndarray
    scale: np.ndarray
    prob: np.ndarray
    cdf: np.ndarray
    n_surviving: int

    @property
    def T(self) -> int:
        return len(self.symbols)

    @classmethod
    def build(cls, system: OpenSystem, omega: Realization, length: int, n_surviving: int | None = None) -> "DigitModel":
        """Tables for digit times ``0 .. length-1``; ``n_surviving`` defaults to ``length``."""
        system.require_exact_path("the digit model")
        if length < 1:
            raise ConfigurationError("digit model needs at least one time")
        n_surv = length if n_surviving is None else int(n_surviving)
        syms = omega.window(0, length)
        B = system.max_branches
        origin = np.zeros((length, B))
        scale = np.zeros((length, B))
        prob = np.zeros((length, B))
        tables = {}
        for s in set(int(v) for v in syms):
            bm = system.maps[s]
            o = np.zeros(B)
            sc = np.zeros(B)
            w_all = np.zeros(B)
            for a in range(bm.n_branches):
                oo, ss = bm.inverse(a)
                o[a], sc[a] = float(oo), float(ss)
                w_all[a] = float(abs(ss))
            w_surv = np.zeros(B)
            for a in system.allowed_branches(s):
                w_surv[a] = w_all[a]
            tables[s] = (o, sc, w_all / w_all.sum(), w_surv / w_surv.sum())
        for t, s in enumerate(syms):
            o, sc, p_all, p_surv = tables[int(s)]
            origin[t], scale[t] = o, sc
            prob[t] = p_surv if t < n_surv else p_all
        cdf = np.cumsum(prob, axis=1)
        # force an exact 1 at the last supported digit so no zero-probability digit is ever drawn
        for t in range(length):
            last = int(np.nonzero(prob[t] > 0)[0][-1])
            cdf[t, last:] = 1.0
        return cls(syms.astype(np.int64), origin, scale, prob, cdf, n_surv)

    def digits_from_uniforms(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms of shape ``(M, T)`` to digits by inverting the per-time CDFs."""
        d = np.zeros(u.shape, dtype=np.uint8)
        for a in range(self.cdf.shape[1] - 1):
            d += u >= self.cdf[None, :, a]
        return d

    def sample(self, rng: np.random.Generator, M: int) -> tuple[np.ndarray, np.ndarray]:
        """Digits ``(M, T)`` and uniform tails ``(M,)``."""
        u = rng.random((M, self.T + 1))
        return self.digits_from_uniforms(u[:, : self.T]), np.ascontiguousarray(u[:, self.T])

    def positions(self, digits: np.ndarray, y: np.ndarray) -> np.ndarray:
        return kernels.positions(
            np.ascontiguousarray(digits, dtype=np.uint8), np.ascontiguousarray(y, dtype=float), self.origin, self.scale
        )

    def allowed_mask(self) -> np.ndarray:
        return self.prob > 0

    def certify(self, digits: np.ndarray, N: int) -> np.ndarray:
        """Survival certificate: every digit at times ``0..N`` avoids the hole."""
        if N + 1 > self.n_surviving:
            raise ConfigurationError("certificate horizon exceeds the surviving digit range")
        ok = np.ones(len(digits), dtype=bool)
        mask = self.allowed_mask()
        for t in range(N + 1):
            ok &= mask[t, digits[:, t]]
        return ok

    def mean_positions(self) -> np.ndarray:
        """``E x_t`` for ``t = 0..T`` under the product digit law with uniform tail."""
        mu = np.empty(self.T + 1)
        mu[self.T] = 0.5
        for t in range(self.T - 1, -1, -1):
            mu[t] = float(np.dot(self.prob[t], self.origin[t] + self.scale[t] * mu[t + 1]))
        return mu


def survival_mass(system: OpenSystem, omega: Realization, N: int) -> Fraction:
    """``Leb(X_{omega,N})`` exactly, as a product of surviving branch widths."""
    system.require_exact_path("exact survival mass")
    out = Fraction(1)
    for s in omega.window(0, N + 1):
        bm = system.maps[int(s)]
        out *= sum((abs(bm.inverse(a)[1]) for a in system.allowed_branches(int(s))), Fraction(0))
    return out


def gauss_legendre_unit(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]; exact for polynomials of degree ``2q - 1``."""
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


def affine_expectation(model: DigitModel, pieces, n: int, max_depth: int = 40) -> float:
    """Exact ``E f(x_n)`` for a piecewise-affine ``f`` under the product digit law.

    ``pieces`` is ``(breakpoints, slopes, intercepts)``.  The orbit is refined
    digit by digit until ``f`` is affine on the current cylinder image, where
    the expectation only needs the mean tail position.
    """
    bp, sl, ic = pieces
    inner = np.asarray(bp[1:-1], dtype=float)
    mu = model.mean_positions()

    def f_at(v: float) -> float:
        p = int(np.searchsorted(inner, v, side="right"))
        return sl[p] * v + ic[p]

    def piece_integral(lo: float, hi: float) -> float:
        # mean of f over [lo, hi]
        cuts = [lo] + [b for b in inner if lo < b < hi] + [hi]
        tot = 0.0
        for u, v in zip(cuts, cuts[1:]):
            p = int(np.searchsorted(inner, 0.5 * (u + v), side="right"))
            tot += sl[p] * 0.5 * (v * v - u * u) + ic[p] * (v - u)
        return tot / (hi - lo)

    total = 0.0
    stack = [(1.0, 0.0, 1.0, n)]
    while stack:
        pr, o, s, t = stack.pop()
        lo, hi = (o, o + s) if s > 0 else (o + s, o)
        if not np.any((inner > lo) & (inner < hi)):
            total += pr * f_at(o + s * mu[t]) if hi > lo else pr * f_at(lo)
            continue
        if t == model.T or t - n >= max_depth:
            total += pr * piece_integral(lo, hi)
            continue
        for a in np.nonzero(model.prob[t] > 0)[0]:
            stack.append((pr * model.prob[t, a], o + s * model.origin[t, a], s * model.scale[t, a], t + 1))
    return total


class CylinderQuadrature:
    """Deterministic quadrature over all surviving depth-``N+1`` cylinders.

    Each cylinder contributes ``q`` Gauss-Legendre nodes in the tail
    coordinate ``y = T^{N+1} x``.  Integrands that are polynomials of degree
    below ``2q`` in ``y`` on every cylinder are integrated exactly up to
    rounding.  ``psi`` (cell values on a grid) reweights nodes by the density
    at ``x_0``; it is exact when every cylinder lies inside one grid cell.
    """

    def __init__(self, model: DigitModel, N: int, q: int = 2, psi: np.ndarray | None = None,
                 chunk: int = 1 << 16, max_cylinders: int = 3**13):
        if model.n_surviving < N + 1 or model.T != N + 1:
            raise ConfigurationError("quadrature needs a digit model of length N+1 with all digits surviving")
        self.model = model
        self.N = N
        self.q = q
        self.psi = None if psi is None else np.asarray(psi, dtype=float)
        self.chunk = chunk
        allowed = [np.nonzero(model.prob[t] > 0)[0] for t in range(N + 1)]
        self.allowed = allowed
        self.count = math.prod(len(a) for a in allowed)
        if self.count > max_cylinders:
            raise ConfigurationError(
                f"{self.count} surviving cylinders exceed the exact-mode cap {max_cylinders}; use MC mode"
            )
        self.nodes, self.weights = gauss_legendre_unit(q)
        self._norm = None

    def _words(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        idx = np.arange(start, stop, dtype=np.int64)
        T = self.N + 1
        words = np.empty((len(idx), T), dtype=np.uint8)
        logp = np.zeros(len(idx))
        rem = idx
        for t in range(T - 1, -1, -1):
            al = self.allowed[t]
            words[:, t] = al[rem % len(al)]
            rem = rem // len(al)
        p = np.ones(len(idx))
        for t in range(T):
            p *= self.model.prob[t, words[:, t]]
        return words, p

    def chunks(self):
        """Yield ``(weights, positions)`` with weights summing to 1 over all chunks."""
        q = self.q
        norm = self.normaliser()
        for start in range(0, self.count, self.chunk):
            stop = min(self.count, start + self.chunk)
            words, p = self._words(start, stop)
            W = np.repeat(words, q, axis=0)
            y = np.tile(self.nodes, stop - start)
            w = np.repeat(p, q) * np.tile(self.weights, stop - start)
            x = self.model.positions(W, y)
            if self.psi is not None:
                w = w * self._psi_at(x[:, 0])
            yield w / norm, x

    def _psi_at(self, x0: np.ndarray) -> np.ndarray:
        k = len(self.psi)
        return self.psi[np.clip((x0 * k).astype(np.int64), 0, k - 1)]

    def normaliser(self) -> float:
        if self._norm is None:
            if self.psi is None:
                self._norm = 1.0
            else:
                tot = 0.0
                q = self.q
                for start in range(0, self.count, self.chunk):
                    stop = min(self.count, start + self.chunk)
                    words, p = self._words(start, stop)
                    W = np.repeat(words, q, axis=0)
                    y = np.tile(self.nodes, stop - start)
                    w = np.repeat(p, q) * np.tile(self.weights, stop - start)
                    x = self.model.positions(W, y)
                    tot += float(np.dot(w, self._psi_at(x[:, 0])))
                self._norm = tot
        return self._norm

    def expect(self, fn) -> np.ndarray:
        """``E fn(positions)`` where ``fn`` maps ``(P, N+2)`` positions to ``(P, ...)`` values."""
        acc = None
        for w, x in self.chunks():
            v = np.tensordot(w, fn(x), axes=(0, 0))
            acc = v if acc is None else acc + v
        return acc
