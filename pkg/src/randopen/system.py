"""Random open interval systems.

A system is a finite alphabet of symbols, each carrying a piecewise-affine
interval map and a hole, together with an environment process that picks the
symbol used at every time step.  Points are iterated along a fibre
``omega = (omega_j)`` of the environment, and escape as soon as they land in
the hole of the current symbol.

Coefficients are stored as :class:`fractions.Fraction`.  Orbits of rational
points are computed exactly; float points use IEEE doubles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from numbers import Rational
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, HorizonError, UnsupportedSystemError


def as_fraction(value) -> Fraction:
    """Parse ``"p/q"``, decimal strings, ints and Fractions exactly."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except ValueError as exc:
            raise ConfigurationError(f"not a rational number: {value!r}") from exc
    if isinstance(value, float):
        return Fraction(value)
    raise ConfigurationError(f"cannot interpret {value!r} as a rational number")


def _fmt(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


# ---------------------------------------------------------------------------
# branch maps and holes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BranchMap:
    """Piecewise-affine map ``T(x) = slope[a] * x + intercept[a]`` on ``[bp[a], bp[a+1])``.

    Branch boundaries belong to the right-hand branch; the point 1 belongs to
    the last branch.  Hyperbolicity (``|slope| > 1``) is deliberately not
    enforced here: it is a checked condition, reported by
    :func:`randopen.conditions.verify_conditions` and required by the
    discretisation routines.
    """

    breakpoints: tuple
    slopes: tuple
    intercepts: tuple

    def __post_init__(self):
        bp = tuple(as_fraction(b) for b in self.breakpoints)
        sl = tuple(as_fraction(s) for s in self.slopes)
        ic = tuple(as_fraction(c) for c in self.intercepts)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "slopes", sl)
        object.__setattr__(self, "intercepts", ic)
        if len(bp) < 2 or bp[0] != 0 or bp[-1] != 1:
            raise ConfigurationError("breakpoints must start at 0 and end at 1")
        if any(b >= c for b, c in zip(bp, bp[1:])):
            raise ConfigurationError("breakpoints must be strictly increasing")
        if not (len(sl) == len(ic) == len(bp) - 1):
            raise ConfigurationError("need one slope and one intercept per branch")
        for a in range(len(sl)):
            if sl[a] == 0:
                raise ConfigurationError(f"branch {a} has zero slope")
            lo, hi = self.image(a)
            if lo < 0 or hi > 1:
                raise ConfigurationError(f"image of branch {a} leaves [0, 1]: [{lo}, {hi}]")

    @classmethod
    def full_branches(cls, breakpoints: Sequence, decreasing: Sequence[bool] | None = None) -> "BranchMap":
        """Affine map whose every branch maps its interval onto [0, 1]."""
        bp = [as_fraction(b) for b in breakpoints]
        dec = list(decreasing) if decreasing is not None else [False] * (len(bp) - 1)
        slopes, icpts = [], []
        for a, (p, q) in enumerate(zip(bp, bp[1:])):
            s = 1 / (q - p)
            if dec[a]:
                slopes.append(-s)
                icpts.append(1 + s * p)
            else:
                slopes.append(s)
                icpts.append(-s * p)
        return cls(tuple(bp), tuple(slopes), tuple(icpts))

    @classmethod
    def multiply_mod1(cls, m: int) -> "BranchMap":
        """The map ``x -> m x mod 1``."""
        return cls.full_branches([Fraction(j, m) for j in range(m + 1)])

    @property
    def n_branches(self) -> int:
        return len(self.slopes)

    def interval(self, a: int) -> tuple[Fraction, Fraction]:
        return self.breakpoints[a], self.breakpoints[a + 1]

    def image(self, a: int) -> tuple[Fraction, Fraction]:
        p, q = self.interval(a)
        y0 = self.slopes[a] * p + self.intercepts[a]
        y1 = self.slopes[a] * q + self.intercepts[a]
        return min(y0, y1), max(y0, y1)

    def is_full(self, a: int) -> bool:
        return self.image(a) == (0, 1)

    @cached_property
    def full_branch(self) -> bool:
        return all(self.is_full(a) for a in range(self.n_branches))

    def inverse(self, a: int) -> tuple[Fraction, Fraction]:
        """``(origin, scale)`` with ``T_a^{-1}(y) = origin + scale * y``."""
        s = self.slopes[a]
        return -self.intercepts[a] / s, 1 / s

    @cached_property
    def min_abs_slope(self) -> Fraction:
        return min(abs(s) for s in self.slopes)

    @cached_property
    def max_abs_slope(self) -> Fraction:
        return max(abs(s) for s in self.slopes)

    @cached_property
    def _float_tables(self):
        return (
            np.array([float(b) for b in self.breakpoints]),
            np.array([float(s) for s in self.slopes]),
            np.array([float(c) for c in self.intercepts]),
        )

    def branch_index(self, x) -> int:
        if x < 0 or x > 1:
            raise ConfigurationError(f"point {x} outside [0, 1]")
        lo, hi = 0, self.n_branches - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.breakpoints[mid] <= x:
                lo = mid
            else:
                hi = mid - 1
        return lo

    def branch_indices(self, xs: np.ndarray) -> np.ndarray:
        bp = self._float_tables[0]
        idx = np.searchsorted(bp, xs, side="right") - 1
        return np.clip(idx, 0, self.n_branches - 1)

    def __call__(self, x):
        a = self.branch_index(x)
        if isinstance(x, Rational):
            return self.slopes[a] * Fraction(x) + self.intercepts[a]
        return float(self.slopes[a]) * x + float(self.intercepts[a])

    def apply(self, xs: np.ndarray) -> np.ndarray:
        _, sl, ic = self._float_tables
        a = self.branch_indices(xs)
        return sl[a] * xs + ic[a]

    def to_dict(self) -> dict:
        return {
            "breakpoints": [_fmt(b) for b in self.breakpoints],
            "slopes": [_fmt(s) for s in self.slopes],
            "intercepts": [_fmt(c) for c in self.intercepts],
        }


@dataclass(frozen=True)
class HoleSpec:
    """Finite union of disjoint half-open intervals ``[a, b)``.

    ``allow_empty`` is the closed-system bypass: it permits (and requires) an
    empty hole.
    """

    intervals: tuple = ()
    allow_empty: bool = False

    def __post_init__(self):
        ivs = tuple(sorted((as_fraction(a), as_fraction(b)) for a, b in self.intervals))
        object.__setattr__(self, "intervals", ivs)
        for a, b in ivs:
            if not (0 <= a < b <= 1):
                raise ConfigurationError(f"bad hole interval [{a}, {b})")
        for (_, b), (c, _) in zip(ivs, ivs[1:]):
            if c < b:
                raise ConfigurationError("hole intervals overlap")
        total = self.length
        if self.allow_empty:
            if ivs:
                raise ConfigurationError("closed-system bypass requires an empty hole")
        elif not (0 < total < 1):
            raise ConfigurationError(f"hole length must lie strictly in (0, 1), got {total}")

    @classmethod
    def empty(cls) -> "HoleSpec":
        return cls((), allow_empty=True)

    @property
    def length(self) -> Fraction:
        return sum((b - a for a, b in self.intervals), Fraction(0))

    @property
    def n_components(self) -> int:
        # adjacent intervals form one component
        comps = 0
        prev_end = None
        for a, b in self.intervals:
            if prev_end is None or a != prev_end:
                comps += 1
            prev_end = b
        return comps

    def contains(self, x) -> bool:
        return any(a <= x < b for a, b in self.intervals)

    def contains_array(self, xs: np.ndarray) -> np.ndarray:
        out = np.zeros(np.shape(xs), dtype=bool)
        for a, b in self.intervals:
            out |= (xs >= float(a)) & (xs < float(b))
        return out

    def endpoints(self) -> set:
        return {e for iv in self.intervals for e in iv}

    def aligned_with(self, bm: BranchMap) -> bool:
        return self.endpoints() <= set(bm.breakpoints)

    def to_dict(self) -> list:
        return [[_fmt(a), _fmt(b)] for a, b in self.intervals]


# ---------------------------------------------------------------------------
# environments
# ---------------------------------------------------------------------------

_BLOCK = 1024


class _IIDSource:
    def __init__(self, weights: np.ndarray, seed: int, index: int):
        self.weights = weights
        self.seed = seed
        self.index = index
        self._blocks: dict[int, np.ndarray] = {}

    def _block(self, b: int) -> np.ndarray:
        arr = self._blocks.get(b)
        if arr is None:
            ss = np.random.SeedSequence([self.seed, self.index, b + (1 << 40)])
            rng = np.random.Generator(np.random.PCG64(ss))
            arr = rng.choice(len(self.weights), size=_BLOCK, p=self.weights).astype(np.int64)
            self._blocks[b] = arr
        return arr

    def get(self, lo: int, hi: int) -> np.ndarray:
        out = np.empty(hi - lo, dtype=np.int64)
        pos = lo
        while pos < hi:
            b = pos // _BLOCK
            start = pos - b * _BLOCK
            take = min(_BLOCK - start, hi - pos)
            out[pos - lo : pos - lo + take] = self._block(b)[start : start + take]
            pos += take
        return out


class _MarkovSource:
    def __init__(self, matrix: np.ndarray, pi: np.ndarray, seed: int, index: int):
        self.fwd_cdf = np.cumsum(matrix, axis=1)
        rev = (matrix.T * pi[None, :]) / pi[:, None]
        self.bwd_cdf = np.cumsum(rev, axis=1)
        self._fwd_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index, 1])))
        self._bwd_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, index, 2])))
        x0 = int(np.searchsorted(np.cumsum(pi), self._fwd_rng.random(), side="right"))
        self._fwd = [min(x0, len(pi) - 1)]
        self._bwd = [self._fwd[0]]  # bwd[i] is the symbol at index -i

    @staticmethod
    def _extend(seq: list, cdf: np.ndarray, rng, upto: int):
        while len(seq) <= upto:
            u = rng.random(_BLOCK)
            for v in u:
                row = cdf[seq[-1]]
                seq.append(min(int(np.searchsorted(row, v, side="right")), len(row) - 1))

    def get(self, lo: int, hi: int) -> np.ndarray:
        if hi - 1 >= 0:
            self._extend(self._fwd, self.fwd_cdf, self._fwd_rng, hi - 1)
        if lo < 0:
            self._extend(self._bwd, self.bwd_cdf, self._bwd_rng, -lo)
        return np.array([self._fwd[i] if i >= 0 else self._bwd[-i] for i in range(lo, hi)], dtype=np.int64)


class _SequenceSource:
    def __init__(self, seq: Sequence[int], start: int):
        self.seq = np.asarray(seq, dtype=np.int64)
        self.start = start

    def get(self, lo: int, hi: int) -> np.ndarray:
        a, b = lo - self.start, hi - self.start
        if a < 0 or b > len(self.seq):
            raise HorizonError(
                f"indices [{lo}, {hi}) outside explicit sequence horizon "
                f"[{self.start}, {self.start + len(self.seq)})"
            )
        return self.seq[a:b].copy()


class Realization:
    """One fibre ``omega``: a lazily generated two-sided symbol sequence.

    ``omega[j]`` is the symbol used at time ``j``; ``omega.shift(n)`` is
    ``sigma^n omega``.
    """

    def __init__(self, source, offset: int = 0, label: str = ""):
        self._source = source
        self.offset = offset
        self.label = label

    @classmethod
    def from_sequence(cls, seq: Sequence[int], start: int = 0) -> "Realization":
        return cls(_SequenceSource(seq, start), 0, label="explicit")

    @classmethod
    def constant(cls, symbol: int) -> "Realization":
        return cls(_ConstantSource(symbol), 0, label=f"constant-{symbol}")

    def __getitem__(self, j: int) -> int:
        return int(self._source.get(self.offset + j, self.offset + j + 1)[0])

    def window(self, start: int, length: int) -> np.ndarray:
        return self._source.get(self.offset + start, self.offset + start + length)

    def shift(self, n: int) -> "Realization":
        return Realization(self._source, self.offset + n, self.label)

    def __repr__(self) -> str:
        head = ",".join(str(s) for s in self.window(0, 8))
        return f"Realization({self.label or 'omega'}, offset={self.offset}, [{head},...])"


class _ConstantSource:
    def __init__(self, symbol: int):
        self.symbol = symbol

    def get(self, lo: int, hi: int) -> np.ndarray:
        return np.full(hi - lo, self.symbol, dtype=np.int64)


@dataclass(frozen=True)
class Environment:
    """Environment process driving symbol choice.

    ``mode`` is ``"iid"`` (``weights``), ``"markov"`` (row-stochastic
    ``matrix``, started from its stationary law) or ``"sequence"`` (explicit
    symbols for indices ``sequence_start .. sequence_start + len - 1``).
    """

    n_symbols: int
    mode: str = "iid"
    weights: tuple | None = None
    matrix: tuple | None = None
    sequence: tuple | None = None
    sequence_start: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_symbols < 1:
            raise ConfigurationError("alphabet must be non-empty")
        if self.mode == "iid":
            w = self.weights if self.weights is not None else (1.0 / self.n_symbols,) * self.n_symbols
            w = tuple(float(v) for v in w)
            object.__setattr__(self, "weights", w)
            if len(w) != self.n_symbols or min(w) < 0 or abs(sum(w) - 1) > 1e-12:
                raise ConfigurationError("iid weights must be a probability vector over the alphabet")
        elif self.mode == "markov":
            if self.matrix is None:
                raise ConfigurationError("markov environment needs a matrix")
            m = tuple(tuple(float(v) for v in row) for row in self.matrix)
            object.__setattr__(self, "matrix", m)
            arr = np.array(m)
            if arr.shape != (self.n_symbols, self.n_symbols) or arr.min() < 0:
                raise ConfigurationError("markov matrix must be square over the alphabet and nonnegative")
            if np.abs(arr.sum(axis=1) - 1).max() > 1e-12:
                raise ConfigurationError("markov matrix must be row-stochastic")
        elif self.mode == "sequence":
            if not self.sequence:
                raise ConfigurationError("sequence environment needs a non-empty sequence")
            seq = tuple(int(s) for s in self.sequence)
            object.__setattr__(self, "sequence", seq)
            if min(seq) < 0 or max(seq) >= self.n_symbols:
                raise ConfigurationError("sequence symbol outside the alphabet")
        else:
            raise ConfigurationError(f"unknown environment mode {self.mode!r}")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    def stationary(self) -> np.ndarray:
        if self.mode == "iid":
            return np.array(self.weights)
        if self.mode == "markov":
            arr = np.array(self.matrix)
            vals, vecs = np.linalg.eig(arr.T)
            i = int(np.argmin(np.abs(vals - 1)))
            pi = np.abs(np.real(vecs[:, i]))
            return pi / pi.sum()
        counts = np.bincount(np.array(self.sequence), minlength=self.n_symbols)
        return counts / counts.sum()

    def realize(self, index: int = 0) -> Realization:
        """Fibre number ``index``; identical for identical ``(seed, index)``."""
        if self.mode == "iid":
            src = _IIDSource(np.array(self.weights), int(self.seed), int(index))
        elif self.mode == "markov":
            src = _MarkovSource(np.array(self.matrix), self.stationary(), int(self.seed), int(index))
        else:
            src = _SequenceSource(self.sequence, self.sequence_start)
        return Realization(src, 0, label=f"{self.mode}:{self.seed}:{index}")

    def word_distribution(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """All length-``n`` symbol words with their stationary probabilities.

        For explicit sequences these are empirical sliding-window frequencies.
        """
        if n == 0:
            return np.zeros((1, 0), dtype=np.int64), np.ones(1)
        if self.mode == "sequence":
            seq = np.array(self.sequence)
            if len(seq) < n:
                raise HorizonError("sequence shorter than requested word length")
            wins = np.lib.stride_tricks.sliding_window_view(seq, n)
            words, counts = np.unique(wins, axis=0, return_counts=True)
            return words.astype(np.int64), counts / counts.sum()
        S = self.n_symbols
        words = np.array(np.meshgrid(*[np.arange(S)] * n, indexing="ij")).reshape(n, -1).T
        pi = self.stationary()
        probs = pi[words[:, 0]].copy()
        if self.mode == "iid":
            w = np.array(self.weights)
            for j in range(1, n):
                probs *= w[words[:, j]]
        else:
            P = np.array(self.matrix)
            for j in range(1, n):
                probs *= P[words[:, j - 1], words[:, j]]
        keep = probs > 0
        return words[keep].astype(np.int64), probs[keep]

    def to_dict(self) -> dict:
        d: dict = {"mode": self.mode, "seed": int(self.seed)}
        if self.mode == "iid":
            d["weights"] = list(self.weights)
        elif self.mode == "markov":
            d["matrix"] = [list(r) for r in self.matrix]
        else:
            d["sequence"] = list(self.sequence)
            d["sequence_start"] = self.sequence_start
        return d


# ---------------------------------------------------------------------------
# the open system
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OpenSystem:
    """Symbol-indexed family of (branch map, hole) pairs plus an environment."""

    maps: tuple
    holes: tuple
    environment: Environment
    name: str = "custom"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "maps", tuple(self.maps))
        object.__setattr__(self, "holes", tuple(self.holes))
        if len(self.maps) != len(self.holes):
            raise ConfigurationError("every symbol needs both a map and a hole")
        if len(self.maps) != self.environment.n_symbols:
            raise ConfigurationError("environment alphabet size differs from the family size")
        for s, bm in enumerate(self.maps):
            if not _covers_unit_interval([bm.image(a) for a in range(bm.n_branches)]):
                raise ConfigurationError(f"map of symbol {s} is not surjective onto [0, 1]")

    @property
    def n_symbols(self) -> int:
        return len(self.maps)

    def check_symbol(self, s) -> int:
        if not isinstance(s, (int, np.integer)) or not (0 <= s < self.n_symbols):
            raise ConfigurationError(f"invalid symbol {s!r}")
        return int(s)

    @cached_property
    def full_branch(self) -> bool:
        return all(bm.full_branch for bm in self.maps)

    @property
    def affine(self) -> bool:
        return True

    @cached_property
    def hole_aligned(self) -> bool:
        return all(h.aligned_with(bm) for bm, h in zip(self.maps, self.holes))

    @cached_property
    def closed(self) -> bool:
        return all(h.length == 0 for h in self.holes)

    @property
    def exact_path(self) -> bool:
        return self.full_branch and self.affine and self.hole_aligned

    def require_exact_path(self, what: str) -> None:
        if not self.exact_path:
            raise UnsupportedSystemError(
                f"{what} needs a full-branch affine system with partition-aligned holes "
                f"(full_branch={self.full_branch}, hole_aligned={self.hole_aligned})"
            )

    def allowed_branches(self, s: int) -> tuple[int, ...]:
        """Branches of symbol ``s`` disjoint from its hole (hole-aligned systems)."""
        key = ("allowed", s)
        if key not in self._cache:
            bm, h = self.maps[s], self.holes[s]
            out = []
            for a in range(bm.n_branches):
                p, q = bm.interval(a)
                if not h.contains((p + q) / 2):
                    out.append(a)
            self._cache[key] = tuple(out)
        return self._cache[key]

    @cached_property
    def max_branches(self) -> int:
        return max(bm.n_branches for bm in self.maps)

    @cached_property
    def min_expansion(self) -> float:
        return float(min(bm.min_abs_slope for bm in self.maps))

    def with_environment(self, env: Environment) -> "OpenSystem":
        return OpenSystem(self.maps, self.holes, env, self.name)

    def with_seed(self, seed: int) -> "OpenSystem":
        env = self.environment
        return self.with_environment(
            Environment(env.n_symbols, env.mode, env.weights, env.matrix, env.sequence, env.sequence_start, seed)
        )

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "alphabet": self.n_symbols,
            "branches": [bm.to_dict() for bm in self.maps],
            "holes": [h.to_dict() for h in self.holes],
            "environment": self.environment.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OpenSystem":
        try:
            n = int(d["alphabet"]) if not isinstance(d["alphabet"], list) else len(d["alphabet"])
            maps = [BranchMap(b["breakpoints"], b["slopes"], b["intercepts"]) for b in d["branches"]]
            holes = [
                HoleSpec.empty() if not h else HoleSpec(tuple(tuple(iv) for iv in h)) for h in d["holes"]
            ]
            e = d.get("environment", {"mode": "iid"})
            env = Environment(
                n_symbols=n,
                mode=e.get("mode", "iid"),
                weights=tuple(e["weights"]) if "weights" in e else None,
                matrix=tuple(tuple(r) for r in e["matrix"]) if "matrix" in e else None,
                sequence=tuple(e["sequence"]) if "sequence" in e else None,
                sequence_start=int(e.get("sequence_start", 0)),
                seed=int(e.get("seed", 0)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed system definition: {exc}") from exc
        return cls(tuple(maps), tuple(holes), env, d.get("name", "custom"))

    @classmethod
    def from_json(cls, path) -> "OpenSystem":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _covers_unit_interval(intervals: Iterable[tuple[Fraction, Fraction]]) -> bool:
    reach = Fraction(0)
    for lo, hi in sorted(intervals):
        if lo > reach:
            return False
        reach = max(reach, hi)
    return reach >= 1


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------


def quadrupling_random_hole(seed: int = 0) -> OpenSystem:
    """``x -> 4x mod 1`` with hole ``[w/4, (w+1)/4)`` for symbol ``w``, iid uniform symbols."""
    bm = BranchMap.multiply_mod1(4)
    holes = tuple(HoleSpec(((Fraction(s, 4), Fraction(s + 1, 4)),)) for s in range(4))
    env = Environment(4, "iid", (0.25,) * 4, seed=seed)
    return OpenSystem((bm,) * 4, holes, env, "quadrupling-random-hole")


def quadrupling_double_hole(seed: int = 0) -> OpenSystem:
    """Variant whose hole is the two quarters ``w`` and ``w + 1 mod 4``."""
    bm = BranchMap.multiply_mod1(4)
    holes = []
    for s in range(4):
        qs = sorted([s, (s + 1) % 4])
        holes.append(HoleSpec(tuple((Fraction(q, 4), Fraction(q + 1, 4)) for q in qs)))
    env = Environment(4, "iid", (0.25,) * 4, seed=seed)
    return OpenSystem((bm,) * 4, tuple(holes), env, "quadrupling-double-hole")


def asymmetric_random_hole(seed: int = 0) -> OpenSystem:
    """Full-branch map with slopes 2, 4, 8, 8 and a random branch removed."""
    bp = [Fraction(0), Fraction(1, 2), Fraction(3, 4), Fraction(7, 8), Fraction(1)]
    bm = BranchMap.full_branches(bp)
    holes = tuple(HoleSpec(((bp[s], bp[s + 1]),)) for s in range(1, 4))
    env = Environment(3, "iid", (1 / 3,) * 3, seed=seed)
    return OpenSystem((bm,) * 3, holes, env, "asymmetric-random-hole")


def doubling_closed(seed: int = 0) -> OpenSystem:
    """Closed ``x -> 2x mod 1`` (single symbol, empty hole)."""
    env = Environment(1, "iid", (1.0,), seed=seed)
    return OpenSystem((BranchMap.multiply_mod1(2),), (HoleSpec.empty(),), env, "doubling-closed")


PRESETS = {
    "quadrupling-random-hole": quadrupling_random_hole,
    "quadrupling-double-hole": quadrupling_double_hole,
    "asymmetric-random-hole": asymmetric_random_hole,
    "doubling-closed": doubling_closed,
}


def preset(name: str, seed: int = 0) -> OpenSystem:
    try:
        return PRESETS[name](seed)
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# ---------------------------------------------------------------------------
# orbits and survival
# ---------------------------------------------------------------------------


def step(system: OpenSystem, symbol: int, x):
    """Apply ``T_symbol`` to ``x``; exact for rational ``x``."""
    s = system.check_symbol(symbol)
    return system.maps[s](x)


def step_array(system: OpenSystem, symbol: int, xs: np.ndarray) -> np.ndarray:
    s = system.check_symbol(symbol)
    return system.maps[s].apply(np.asarray(xs, dtype=float))


def orbit(system: OpenSystem, omega: Realization, x, n: int) -> list:
    """``[x, T_omega x, ..., T_omega^n x]``; exact when ``x`` is rational."""
    if n < 0:
        raise ConfigurationError("orbit length must be nonnegative")
    if isinstance(x, Rational):
        x = Fraction(x)
    out = [x]
    syms = omega.window(0, n)
    for j in range(n):
        x = step(system, int(syms[j]), x)
        out.append(x)
    return out


def survives(system: OpenSystem, omega: Realization, x, N: int) -> tuple[bool, int | None]:
    """Whether ``x`` avoids the holes at times ``0..N``, and its escape time otherwise."""
    if N < 0:
        raise ConfigurationError("horizon must be nonnegative")
    if isinstance(x, Rational):
        x = Fraction(x)
    syms = omega.window(0, N + 1)
    for j in range(N + 1):
        s = int(syms[j])
        if system.holes[s].contains(x):
            return False, j
        if j < N:
            x = system.maps[s](x)
    return True, None


def survives_array(system: OpenSystem, omega: Realization, xs: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised float version; escape time ``-1`` marks survivors."""
    xs = np.array(xs, dtype=float)
    esc = np.full(xs.shape, -1, dtype=np.int64)
    syms = omega.window(0, N + 1)
    for j in range(N + 1):
        s = int(syms[j])
        hit = (esc < 0) & system.holes[s].contains_array(xs)
        esc[hit] = j
        if j < N:
            xs = system.maps[s].apply(xs)
    return esc < 0, esc


# ---------------------------------------------------------------------------
# exact surviving cylinders
# ---------------------------------------------------------------------------

_INT64_SAFE = 1 << 61


@dataclass
class CylinderSet:
    """Surviving depth-``n`` cylinders ``[left/D, right/D)`` with their digit words.

    Endpoints are integer numerators over the common ``denominator`` (int64
    when safe, Python ints otherwise), so lengths and totals are exact.
    """

    depth: int
    words: np.ndarray
    left_num: np.ndarray
    right_num: np.ndarray
    denominator: int

    @property
    def count(self) -> int:
        return len(self.left_num)

    @property
    def total_length(self) -> Fraction:
        tot = int(np.sum(self.right_num - self.left_num, dtype=self.left_num.dtype))
        return Fraction(tot, self.denominator)

    @property
    def left(self) -> np.ndarray:
        return np.array([int(v) for v in self.left_num], dtype=float) / self.denominator if self.left_num.dtype == object else self.left_num / self.denominator

    @property
    def right(self) -> np.ndarray:
        return np.array([int(v) for v in self.right_num], dtype=float) / self.denominator if self.right_num.dtype == object else self.right_num / self.denominator

    @property
    def intervals(self) -> list[tuple[Fraction, Fraction, tuple]]:
        D = self.denominator
        return [
            (Fraction(int(l), D), Fraction(int(r), D), tuple(int(a) for a in w))
            for l, r, w in zip(self.left_num, self.right_num, self.words)
        ]

    def contains(self, x) -> bool:
        """Exact membership of a rational (or float) point."""
        q = Fraction(x)
        t = q * self.denominator
        i = int(np.searchsorted(self.left_num, math.floor(t), side="right")) - 1
        for j in (i - 1, i, i + 1):
            if 0 <= j < self.count and int(self.left_num[j]) <= t < int(self.right_num[j]):
                return True
        return False

    def cell_lengths(self, k: int) -> list[Fraction]:
        """Exact ``Leb(cell_i ∩ union)`` for the uniform grid of ``k`` cells."""
        num = self._cdf_numerators(k)
        scale = self.denominator * k
        return [Fraction(int(b) - int(a), scale) for a, b in zip(num[:-1], num[1:])]

    def cell_lengths_float(self, k: int) -> np.ndarray:
        num = self._cdf_numerators(k)
        diffs = np.diff(num)
        if diffs.dtype == object:
            diffs = np.array([int(v) for v in diffs], dtype=float)
        return diffs / (self.denominator * k)

    def _cdf_numerators(self, k: int) -> np.ndarray:
        # F(i/k) * D * k for i = 0..k
        obj = self.left_num.dtype == object or self.denominator * k * 4 >= _INT64_SAFE
        dt = object if obj else np.int64
        L = self.left_num.astype(dt) * k
        R = self.right_num.astype(dt) * k
        B = np.arange(k + 1).astype(dt) * self.denominator
        if self.count == 0:
            return np.zeros(k + 1, dtype=dt)
        lengths = R - L
        cum = np.concatenate([np.zeros(1, dtype=dt), np.cumsum(lengths)])
        idx = np.searchsorted(L, B, side="right") - 1
        out = np.zeros(k + 1, dtype=dt)
        ok = idx >= 0
        ii = idx[ok]
        partial = np.minimum(B[ok], R[ii]) - L[ii]
        out[ok] = cum[ii] + partial
        return out


def _symbol_denominator(bm: BranchMap) -> int:
    q = 1
    for a in range(bm.n_branches):
        o, s = bm.inverse(a)
        q = math.lcm(q, o.denominator, s.denominator)
    return q


def surviving_cylinders(system: OpenSystem, omega: Realization, n: int) -> CylinderSet:
    """All elements of the depth-``n`` surviving partition of a hole-aligned full-branch system."""
    system.require_exact_path("exact cylinder enumeration")
    if n < 1:
        raise ConfigurationError("cylinder depth must be at least 1")
    syms = omega.window(0, n)
    denoms = [_symbol_denominator(system.maps[int(s)]) for s in syms]
    D_total = math.prod(denoms)
    max_coef = max(
        max(abs(int(v.numerator)) for a in range(bm.n_branches) for v in bm.inverse(a)) for bm in system.maps
    )
    use_obj = D_total * (max_coef + 1) * 4 >= _INT64_SAFE
    dt = object if use_obj else np.int64

    left = np.array([0], dtype=dt)
    right = np.array([1], dtype=dt)
    words = np.zeros((1, 0), dtype=np.uint8)
    D = 1
    for j in range(n - 1, -1, -1):
        s = int(syms[j])
        bm = system.maps[s]
        q = denoms[j]
        nl, nr, nw = [], [], []
        for a in system.allowed_branches(s):
            o, sc = bm.inverse(a)
            po = o.numerator * (q // o.denominator)
            ps = sc.numerator * (q // sc.denominator)
            if ps > 0:
                l2 = po * D + ps * left
                r2 = po * D + ps * right
            else:
                l2 = po * D + ps * right
                r2 = po * D + ps * left
            nl.append(l2)
            nr.append(r2)
            nw.append(np.hstack([np.full((len(words), 1), a, dtype=np.uint8), words]))
        left = np.concatenate(nl).astype(dt)
        right = np.concatenate(nr).astype(dt)
        words = np.vstack(nw) if nw else np.zeros((0, n - j), dtype=np.uint8)
        D *= q
    order = np.argsort(left, kind="stable")
    return CylinderSet(n, words[order], left[order], right[order], D)


# ---------------------------------------------------------------------------
# generic monotonicity pieces (used by the condition checks)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Piece:
    """Interval ``[a, b)`` on which ``T^n x = slope * x + intercept``."""

    a: Fraction
    b: Fraction
    slope: Fraction
    intercept: Fraction

    @property
    def image(self) -> tuple[Fraction, Fraction]:
        y0 = self.slope * self.a + self.intercept
        y1 = self.slope * self.b + self.intercept
        return min(y0, y1), max(y0, y1)

    @property
    def full(self) -> bool:
        return self.image == (0, 1)

    @property
    def length(self) -> Fraction:
        return self.b - self.a


def monotonicity_pieces(system: OpenSystem, word: Sequence[int], holes: bool) -> list[Piece]:
    """Elements of ``P^(n)`` (``holes=False``) or of the surviving refinement ``P_*^(n)``.

    ``word`` holds the symbols ``omega_0 .. omega_{n-1}``.
    """
    pieces = [Piece(Fraction(0), Fraction(1), Fraction(1), Fraction(0))]
    for s in word:
        s = int(s)
        bm, hole = system.maps[s], system.holes[s]
        cut_set = set(bm.breakpoints)
        if holes:
            cut_set |= hole.endpoints()
        new = []
        for p in pieces:
            lo, hi = p.image
            cuts = sorted({lo, hi} | {c for c in cut_set if lo < c < hi})
            for u, v in zip(cuts, cuts[1:]):
                mid = (u + v) / 2
                if holes and hole.contains(mid):
                    continue
                a = bm.branch_index(mid)
                x0 = (u - p.intercept) / p.slope
                x1 = (v - p.intercept) / p.slope
                new.append(
                    Piece(
                        min(x0, x1),
                        max(x0, x1),
                        bm.slopes[a] * p.slope,
                        bm.slopes[a] * p.intercept + bm.intercepts[a],
                    )
                )
        pieces = new
    return sorted(pieces, key=lambda p: p.a)
