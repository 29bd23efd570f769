"""Random densities, conditional measures ``zeta_{omega,N}`` and their samplers.

``zeta_omega(u) = Leb(1_{X_{omega,0}} psi_omega u) / Leb(1_{X_{omega,0}} psi_omega)`` and
``zeta_{omega,N}`` is ``zeta_omega`` conditioned on the surviving set ``X_{omega,N}``.
With ``psi = phi`` (the equivariant density) this is the conditionally
invariant measure ``eta``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .digits import CylinderQuadrature, DigitModel, survival_mass
from .errors import ConfigurationError, DegenerateSystemError, SamplingError
from .observables import PiecewiseAffine
from .spectral import conformal_measures, equivariant_density, nu_integral
from .system import OpenSystem, Realization, surviving_cylinders, survives_array
from .transfer import GridFunction, OperatorCache

EXACT_CYLINDER_CAP = 3**13
REJECTION_DRAW_CAP = 10**8


@dataclass(frozen=True)
class RandomDensity:
    """``psi_omega``: the equivariant density (``kind="phi"``) or per-symbol grid densities.

    For ``kind="grid"`` the density of fibre ``omega`` is ``grids[omega_0]``.
    Conditional measures do not depend on the overall scale of ``psi``;
    :meth:`nu_normalised` returns the ``nu``-normalised version.
    """

    kind: str = "phi"
    grids: tuple = ()

    def __post_init__(self):
        if self.kind not in ("phi", "grid"):
            raise ConfigurationError(f"unknown density kind {self.kind!r}")
        if self.kind == "grid":
            if not self.grids:
                raise ConfigurationError("grid density needs per-symbol grid functions")
            for g in self.grids:
                if np.any(g.values < 0):
                    raise ConfigurationError("densities must be nonnegative")
                if g.integral <= 0:
                    raise ConfigurationError("densities must have positive Lebesgue mass")

    @classmethod
    def phi(cls) -> "RandomDensity":
        return cls("phi")

    @classmethod
    def per_symbol(cls, grids) -> "RandomDensity":
        return cls("grid", tuple(grids))

    @classmethod
    def constant_grid(cls, g: GridFunction, n_symbols: int) -> "RandomDensity":
        return cls("grid", (g,) * n_symbols)

    @property
    def is_phi(self) -> bool:
        return self.kind == "phi"

    def values(self, system: OpenSystem, omega: Realization, k: int | None = None) -> np.ndarray | None:
        """Cell values of ``psi_omega``; ``None`` means constant (``phi`` on full-branch affine systems)."""
        if self.kind == "grid":
            return self.grids[omega[0]].values
        if system.exact_path:
            return None
        return equivariant_density(system, omega, k=k or 4096).values

    def nu_normalised(self, system: OpenSystem, omega: Realization, k: int) -> GridFunction:
        vals = self.values(system, omega, k)
        if vals is None:
            vals = np.ones(k)
        g = GridFunction(vals)
        if g.k != k:
            raise ConfigurationError("density grid differs from the requested grid")
        nu = conformal_measures(system, omega, k)[0][0]
        c = nu_integral(nu, g)
        if not c > 0:
            raise DegenerateSystemError("density has zero conformal mass")
        return GridFunction(vals / c)


@dataclass
class ConditionalSample:
    """Points drawn from ``zeta_{omega,N}`` with survival certificates."""

    x: np.ndarray
    certificates: np.ndarray
    escape_time: np.ndarray
    weight: np.ndarray
    mode: str
    N: int
    digits: np.ndarray | None = None
    draws: int = 0
    tail: np.ndarray | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "x", "escape_time_or_-1", "weight"])
            for i, (x, e, wt) in enumerate(zip(self.x, self.escape_time, self.weight)):
                w.writerow([i, repr(float(x)), int(e), repr(float(wt))])


@dataclass(frozen=True)
class Integral:
    value: float
    se: float
    exact: bool
    rational: Fraction | None = None


@dataclass(eq=False)
class ConditionalMeasure:
    """``zeta_{omega,N}`` for a density ``psi`` on one fibre."""

    system: OpenSystem
    omega: Realization
    N: int
    psi: RandomDensity = field(default_factory=RandomDensity.phi)
    mode: str = "auto"
    k: int = 4096
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.N < 0:
            raise ConfigurationError("horizon must be nonnegative")
        if self.mode not in ("auto", "exact", "sequential", "rejection"):
            raise ConfigurationError(f"unknown sampler mode {self.mode!r}")
        if self.mode in ("exact", "sequential"):
            self.system.require_exact_path(f"{self.mode} sampling")
        if self.psi.kind == "grid":
            self.k = self.psi.grids[self.omega[0]].k

    # -- basic data --------------------------------------------------------

    @property
    def is_eta(self) -> bool:
        return self.psi.is_phi

    @property
    def psi_values(self) -> np.ndarray | None:
        if "psi" not in self._cache:
            self._cache["psi"] = self.psi.values(self.system, self.omega, self.k)
        return self._cache["psi"]

    @property
    def n_cylinders(self) -> int:
        if not self.system.exact_path:
            return -1
        return math.prod(len(self.system.allowed_branches(int(s))) for s in self.omega.window(0, self.N + 1))

    @property
    def exact_available(self) -> bool:
        return self.system.exact_path and self.n_cylinders <= EXACT_CYLINDER_CAP

    def resolved_mode(self) -> str:
        if self.mode != "auto":
            return self.mode
        if self.exact_available:
            return "exact"
        if self.system.exact_path:
            return "sequential"
        return "rejection"

    def cylinders(self, depth: int | None = None):
        depth = self.N + 1 if depth is None else depth
        key = ("cyl", depth)
        if key not in self._cache:
            self._cache[key] = surviving_cylinders(self.system, self.omega, depth)
        return self._cache[key]

    def digit_model(self, extra: int = 0) -> DigitModel:
        key = ("dm", extra)
        if key not in self._cache:
            self._cache[key] = DigitModel.build(self.system, self.omega, self.N + 1 + extra, self.N + 1)
        return self._cache[key]

    def quadrature(self, q: int = 2) -> CylinderQuadrature:
        key = ("quad", q)
        if key not in self._cache:
            if not self.exact_available:
                raise ConfigurationError("exact quadrature needs an enumerable cylinder set")
            psi = self.psi_values
            self._cache[key] = CylinderQuadrature(self.digit_model(), self.N, q, psi)
        return self._cache[key]

    # -- masses --------------------------------------------------------------

    def _weighted_leb(self, depth: int) -> Fraction | float:
        """``Leb(1_{X_{omega,depth-1}} psi)``, exact when possible."""
        psi = self.psi_values
        if psi is None:
            if self.system.exact_path:
                return survival_mass(self.system, self.omega, depth - 1)
            raise ConfigurationError("constant density off the exact path")  # pragma: no cover
        if self.system.exact_path and math.prod(
            len(self.system.allowed_branches(int(s))) for s in self.omega.window(0, depth)
        ) <= EXACT_CYLINDER_CAP:
            lengths = self.cylinders(depth).cell_lengths(len(psi))
            return sum((Fraction(float(v)) * l for v, l in zip(psi, lengths) if v != 0), Fraction(0))
        cache = OperatorCache(self.system, len(psi))
        u = np.asarray(psi, dtype=float)
        for s in self.omega.window(0, depth):
            u = cache[s].push(u)
        return float(u.mean())

    def conditional_mass(self) -> Fraction | float:
        """``zeta_omega(X_{omega,N})``; a Fraction on the exact path."""
        key = "mass"
        if key not in self._cache:
            num = self._weighted_leb(self.N + 1)
            den = self._weighted_leb(1)
            if den == 0:
                raise DegenerateSystemError("density vanishes on the surviving set X_{omega,0}")
            if num == 0:
                raise DegenerateSystemError(f"zeta_omega(X_omega,{self.N}) = 0")
            self._cache[key] = num / den
        return self._cache[key]

    # -- sampling ------------------------------------------------------------

    def sample(self, M: int, seed: int = 0, stream: int = 0, keep_digits: bool = False) -> ConditionalSample:
        """``M`` points from ``zeta_{omega,N}``, each certified to survive to time ``N``."""
        if M < 1:
            raise ConfigurationError("need at least one sample")
        mode = self.resolved_mode()
        if mode == "exact":
            return self._sample_exact(M, seed, stream)
        if mode == "sequential":
            return self._sample_sequential(M, seed, stream, keep_digits)
        return self._sample_rejection(M, seed, stream)

    def _rng(self, seed: int, stream: int, block: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, block])))

    def _psi_cdf(self) -> tuple[np.ndarray, np.ndarray]:
        psi = self.psi_values
        k = len(psi)
        cum = np.concatenate([[0.0], np.cumsum(psi) / k])
        return psi, cum

    def _sample_exact(self, M: int, seed: int, stream: int) -> ConditionalSample:
        cyl = self.cylinders()
        left, right = cyl.left, cyl.right
        psi = self.psi_values
        rng = self._rng(seed, stream, 0)
        if psi is None:
            w = right - left
            cdf = np.cumsum(w)
            c = np.minimum(np.searchsorted(cdf, rng.random(M) * cdf[-1], side="right"), len(w) - 1)
            x = left[c] + rng.random(M) * (right[c] - left[c])
        else:
            psi_arr, cum = self._psi_cdf()
            k = len(psi_arr)
            Psi = lambda z: np.interp(z, np.arange(k + 1) / k, cum)  # noqa: E731
            w = Psi(right) - Psi(left)
            if not w.sum() > 0:
                raise DegenerateSystemError("density vanishes on every surviving cylinder")
            cdf = np.cumsum(w)
            c = np.minimum(np.searchsorted(cdf, rng.random(M) * cdf[-1], side="right"), len(w) - 1)
            target = Psi(left[c]) + rng.random(M) * w[c]
            x = _inverse_piecewise_linear(target, cum, k)
            x = np.clip(x, left[c], right[c])
        x = np.minimum(x, np.nextafter(right[c], left[c]))
        ok, esc = survives_array(self.system, self.omega, x, self.N) if self.N <= 24 else (np.ones(M, bool), None)
        if esc is None:
            esc = np.full(M, -1)
        return ConditionalSample(x, ok, esc, np.ones(M), "exact", self.N, draws=M)

    def _sample_sequential(self, M: int, seed: int, stream: int, keep_digits: bool) -> ConditionalSample:
        dm = self.digit_model()
        psi = self.psi_values
        xs, ds, ys = [], [], []
        got, block, draws = 0, 0, 0
        bound = None if psi is None else float(np.max(psi))
        while got < M:
            rng = self._rng(seed, stream, block)
            n = max(1024, M - got) if psi is None else max(1024, 2 * (M - got))
            digits, y = dm.sample(rng, n)
            x = dm.positions(digits, y)[:, 0]
            if psi is not None:
                acc = rng.random(n) * bound < psi[np.clip((x * len(psi)).astype(np.int64), 0, len(psi) - 1)]
                x, digits, y = x[acc], digits[acc], y[acc]
            take = min(len(x), M - got)
            xs.append(x[:take])
            if keep_digits:
                ds.append(digits[:take])
                ys.append(y[:take])
            got += take
            draws += n
            block += 1
            if draws > REJECTION_DRAW_CAP:
                raise SamplingError(f"density rejection exceeded {REJECTION_DRAW_CAP} draws")
        x = np.concatenate(xs)
        digits = np.concatenate(ds) if keep_digits else None
        tail = np.concatenate(ys) if keep_digits else None
        cert = dm.certify(digits, self.N) if digits is not None else np.ones(M, dtype=bool)
        return ConditionalSample(x, cert, np.full(M, -1), np.ones(M), "sequential", self.N, digits, draws, tail)

    def _sample_rejection(self, M: int, seed: int, stream: int) -> ConditionalSample:
        psi = self.psi_values
        if psi is None:
            psi = np.ones(self.k)
        psi_arr, cum = self._psi_cdf() if self.psi_values is not None else (psi, np.linspace(0, 1, self.k + 1))
        k = len(psi_arr)
        xs = []
        got, draws, block = 0, 0, 0
        batch = 1 << 16
        while got < M:
            if draws >= REJECTION_DRAW_CAP:
                raise SamplingError(
                    f"rejection sampler drew {draws} points but accepted only {got} of {M}"
                )
            rng = self._rng(seed, stream, block)
            u = rng.random(batch) * cum[-1]
            x = _inverse_piecewise_linear(u, cum, k)
            ok, _ = survives_array(self.system, self.omega, x, self.N)
            acc = x[ok]
            take = min(len(acc), M - got)
            xs.append(acc[:take])
            got += take
            draws += batch
            block += 1
        x = np.concatenate(xs)
        ok, esc = survives_array(self.system, self.omega, x, self.N)
        return ConditionalSample(x, ok, esc, np.ones(M), "rejection", self.N, draws=draws)

    # -- integration -----------------------------------------------------------

    def integrate(self, u, mode: str = "exact", M: int = 100_000, seed: int = 0) -> Integral:
        """``zeta_{omega,N}(u)`` for a GridFunction, PiecewiseAffine or callable ``u``.

        Exact mode returns a rational for grid functions (summing cell values
        against exact surviving lengths) and a quadrature value otherwise.
        """
        if mode == "mc":
            s = self.sample(M, seed)
            vals = _evaluate(u, s.x)
            return Integral(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(M)), False)
        if mode != "exact":
            raise ConfigurationError(f"unknown integration mode {mode!r}")
        if not self.exact_available:
            raise ConfigurationError("exact integration needs an enumerable cylinder set")
        if isinstance(u, GridFunction):
            psi = self.psi_values
            k = u.k if psi is None else math.lcm(u.k, len(psi))
            uu = np.repeat(u.values, k // u.k)
            pp = np.ones(k) if psi is None else np.repeat(psi, k // len(psi))
            lengths = self.cylinders().cell_lengths(k)
            num = sum((Fraction(float(a)) * Fraction(float(b)) * l for a, b, l in zip(uu, pp, lengths) if a != 0 and b != 0), Fraction(0))
            den = sum((Fraction(float(b)) * l for b, l in zip(pp, lengths) if b != 0), Fraction(0))
            if den == 0:
                raise DegenerateSystemError("zero conditional mass")
            r = num / den
            return Integral(float(r), 0.0, True, r)
        quad = self.quadrature(q=4)
        v = quad.expect(lambda x: _evaluate(u, x[:, 0]))
        return Integral(float(v), 0.0, True)

    def integrate_composed(self, f, n: int) -> float:
        """Exact-mode ``zeta_{omega,N}(f ∘ T^n)`` by cylinder quadrature."""
        if not 0 <= n <= self.N:
            raise ConfigurationError("composition time outside 0..N")
        quad = self.quadrature(q=4)
        return float(quad.expect(lambda x: _evaluate(f, x[:, n])))


def _inverse_piecewise_linear(target: np.ndarray, cum: np.ndarray, k: int) -> np.ndarray:
    """Invert ``Psi`` given by cumulative cell masses ``cum`` on ``k`` cells."""
    i = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, k - 1)
    mass = cum[i + 1] - cum[i]
    frac = np.where(mass > 0, (target - cum[i]) / np.where(mass > 0, mass, 1.0), 0.0)
    return (i + np.clip(frac, 0.0, 1.0)) / k


def _evaluate(u, xs: np.ndarray) -> np.ndarray:
    if isinstance(u, GridFunction):
        return u.evaluate(xs)
    if isinstance(u, PiecewiseAffine):
        return u(xs)
    if callable(u):
        return np.asarray(u(xs), dtype=float)
    raise ConfigurationError(f"cannot integrate {type(u).__name__}")


def eta(system: OpenSystem, omega: Realization, N: int, mode: str = "auto") -> ConditionalMeasure:
    """The conditioned conditionally invariant measure ``eta_{omega,N}``."""
    return ConditionalMeasure(system, omega, N, RandomDensity.phi(), mode)


def sample_eta_infinity(system: OpenSystem, omega: Realization, M: int, seed: int = 0, depth: int = 64) -> np.ndarray:
    """Points from ``eta_{omega,infinity} = phi nu`` on full-branch affine systems.

    All ``depth`` digits are drawn from the surviving law; the remaining
    tail contributes below double precision once ``kappa_1^{-depth} < 2^{-53}``.
    """
    dm = DigitModel.build(system, omega, depth, depth)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 7, 0])))
    digits, y = dm.sample(rng, M)
    return dm.positions(digits, y)[:, 0]


def sample_conditional(measure: ConditionalMeasure, M: int, seed: int = 0) -> ConditionalSample:
    return measure.sample(M, seed)


def conditional_mass(measure: ConditionalMeasure):
    return measure.conditional_mass()


def integrate_conditional(measure: ConditionalMeasure, u, mode: str = "exact", M: int = 100_000, seed: int = 0) -> Integral:
    return measure.integrate(u, mode, M, seed)
