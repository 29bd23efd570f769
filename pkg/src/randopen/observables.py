"""Piecewise-affine observables and per-symbol observable families."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError
from .transfer import GridFunction


@dataclass(frozen=True)
class PiecewiseAffine:
    """``f(x) = slope[p] * x + intercept[p]`` on ``[bp[p], bp[p+1])``."""

    breakpoints: tuple
    slopes: tuple
    intercepts: tuple

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        sl = tuple(float(s) for s in self.slopes)
        ic = tuple(float(c) for c in self.intercepts)
        if bp[0] != 0.0 or bp[-1] != 1.0 or any(a >= b for a, b in zip(bp, bp[1:])):
            raise ConfigurationError("observable breakpoints must increase from 0 to 1")
        if not (len(sl) == len(ic) == len(bp) - 1):
            raise ConfigurationError("need one slope and intercept per observable piece")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", sl)
        object.__setattr__(self, "intercepts", ic)

    @classmethod
    def indicator(cls, a, b) -> "PiecewiseAffine":
        a, b = float(Fraction(a)), float(Fraction(b))
        bp = sorted({0.0, a, b, 1.0})
        vals = [1.0 if a <= 0.5 * (u + v) < b else 0.0 for u, v in zip(bp, bp[1:])]
        return cls(tuple(bp), (0.0,) * len(vals), tuple(vals))

    @classmethod
    def identity(cls) -> "PiecewiseAffine":
        return cls((0.0, 1.0), (1.0,), (0.0,))

    @classmethod
    def constant(cls, c: float) -> "PiecewiseAffine":
        return cls((0.0, 1.0), (0.0,), (float(c),))

    @classmethod
    def from_grid(cls, u: GridFunction) -> "PiecewiseAffine":
        k = u.k
        return cls(tuple(np.arange(k + 1) / k), (0.0,) * k, tuple(u.values))

    def shifted(self, c: float) -> "PiecewiseAffine":
        """``f - c``."""
        return PiecewiseAffine(self.breakpoints, self.slopes, tuple(v - c for v in self.intercepts))

    def scaled(self, a: float) -> "PiecewiseAffine":
        return PiecewiseAffine(self.breakpoints, tuple(a * s for s in self.slopes), tuple(a * c for c in self.intercepts))

    @property
    def n_pieces(self) -> int:
        return len(self.slopes)

    def __call__(self, xs):
        xs = np.asarray(xs, dtype=float)
        inner = np.asarray(self.breakpoints[1:-1])
        p = np.searchsorted(inner, xs, side="right")
        return np.asarray(self.slopes)[p] * xs + np.asarray(self.intercepts)[p]

    @property
    def sup_norm(self) -> float:
        vals = []
        for (a, b), s, c in zip(zip(self.breakpoints, self.breakpoints[1:]), self.slopes, self.intercepts):
            vals += [abs(s * a + c), abs(s * b + c)]
        return max(vals)

    @property
    def continuous(self) -> bool:
        for p in range(self.n_pieces - 1):
            b = self.breakpoints[p + 1]
            if not math.isclose(self.slopes[p] * b + self.intercepts[p], self.slopes[p + 1] * b + self.intercepts[p + 1], abs_tol=1e-15):
                return False
        return True

    def holder_norm(self, alpha: float = 1.0) -> float:
        """Upper bound for ``||f||_inf + [f]_alpha``; infinite when ``f`` jumps.

        For a continuous piecewise-affine ``f`` on [0, 1],
        ``|f(x) - f(y)| <= max|slope| |x - y| <= max|slope| |x - y|^alpha``.
        """
        if not self.continuous:
            return math.inf
        if not 0 < alpha <= 1:
            raise ConfigurationError("Hölder exponent must lie in (0, 1]")
        return self.sup_norm + max(abs(s) for s in self.slopes)

    def integral(self, a: float = 0.0, b: float = 1.0) -> float:
        """``∫_a^b f``."""
        tot = 0.0
        bp = self.breakpoints
        for p in range(self.n_pieces):
            u, v = max(a, bp[p]), min(b, bp[p + 1])
            if v > u:
                tot += self.slopes[p] * 0.5 * (v * v - u * u) + self.intercepts[p] * (v - u)
        return tot

    def grid(self, k: int) -> GridFunction:
        """Exact cell averages on ``k`` cells."""
        return GridFunction(np.array([self.integral(i / k, (i + 1) / k) * k for i in range(k)]))

    def is_grid_constant(self, k: int) -> bool:
        return all(s == 0 for s in self.slopes) and all(
            abs(b * k - round(b * k)) < 1e-12 for b in self.breakpoints
        )

    def tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.array(self.breakpoints), np.array(self.slopes), np.array(self.intercepts)

    def to_dict(self) -> dict:
        return {"breakpoints": list(self.breakpoints), "slopes": list(self.slopes), "intercepts": list(self.intercepts)}


@dataclass(frozen=True)
class Observable:
    """Per-symbol family ``f_omega = pieces[omega_0]``; a callable is allowed for Monte Carlo only.

    ``L`` is twice the largest Hölder norm over symbols.  For discontinuous
    observables (indicators) the Hölder norm is infinite; ``L_sup`` (twice the
    sup norm) is then the bound used for ``|fbar| <= L``.
    """

    pieces: tuple = ()
    fn: Callable | None = None
    name: str = "f"

    def __post_init__(self):
        if not self.pieces and self.fn is None:
            raise ConfigurationError("observable needs piecewise-affine pieces or a callable")
        object.__setattr__(self, "pieces", tuple(self.pieces))

    @classmethod
    def uniform(cls, f: PiecewiseAffine, n_symbols: int, name: str = "f") -> "Observable":
        return cls((f,) * n_symbols, None, name)

    @property
    def closed_form(self) -> bool:
        return bool(self.pieces)

    def for_symbol(self, s: int) -> PiecewiseAffine:
        return self.pieces[int(s)]

    def evaluate(self, s: int, xs: np.ndarray) -> np.ndarray:
        if self.closed_form:
            return self.pieces[int(s)](xs)
        return np.asarray(self.fn(int(s), xs), dtype=float)

    @property
    def L(self) -> float:
        if not self.closed_form:
            return math.nan
        return 2 * max(p.holder_norm() for p in self.pieces)

    @property
    def L_sup(self) -> float:
        if not self.closed_form:
            return math.nan
        return 2 * max(p.sup_norm for p in self.pieces)

    def tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Padded per-symbol ``(bp (S, P+1), slope (S, P), icpt (S, P))`` for the kernels."""
        P = max(p.n_pieces for p in self.pieces)
        S = len(self.pieces)
        bp = np.full((S, P + 1), np.inf)
        sl = np.zeros((S, P))
        ic = np.zeros((S, P))
        for s, p in enumerate(self.pieces):
            n = p.n_pieces
            bp[s, : n + 1] = p.breakpoints
            bp[s, 0] = -np.inf
            sl[s, :n] = p.slopes
            ic[s, :n] = p.intercepts
            # repeat the last piece into the padding
            sl[s, n:] = p.slopes[-1]
            ic[s, n:] = p.intercepts[-1]
            bp[s, n] = np.inf
        return bp, sl, ic

    def to_dict(self) -> dict:
        return {"name": self.name, "pieces": [p.to_dict() for p in self.pieces]}


def parse_observable(spec, n_symbols: int) -> Observable:
    """Observable from a config value.

    Accepts ``"indicator:a:b"``, ``"identity"``, ``"constant:c"`` or a dict with
    per-symbol ``pieces`` lists.
    """
    if isinstance(spec, Observable):
        return spec
    if isinstance(spec, str):
        parts = spec.split(":")
        kind = parts[0]
        if kind == "indicator" and len(parts) == 3:
            f = PiecewiseAffine.indicator(parts[1], parts[2])
        elif kind == "identity" and len(parts) == 1:
            f = PiecewiseAffine.identity()
        elif kind == "constant" and len(parts) == 2:
            f = PiecewiseAffine.constant(float(parts[1]))
        else:
            raise ConfigurationError(f"cannot parse observable {spec!r}")
        return Observable.uniform(f, n_symbols, spec)
    if isinstance(spec, dict) and "pieces" in spec:
        ps = [PiecewiseAffine(tuple(p["breakpoints"]), tuple(p["slopes"]), tuple(p["intercepts"])) for p in spec["pieces"]]
        if len(ps) == 1:
            ps = ps * n_symbols
        if len(ps) != n_symbols:
            raise ConfigurationError("observable needs one piece list per symbol")
        return Observable(tuple(ps), None, spec.get("name", "f"))
    raise ConfigurationError(f"cannot parse observable {spec!r}")


def breakpoints_aligned(pieces: Sequence[PiecewiseAffine], k: int) -> bool:
    return all(abs(b * k - round(b * k)) < 1e-12 for p in pieces for b in p.breakpoints)
