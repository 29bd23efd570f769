"""Centered Birkhoff sums under ``zeta_{omega,N}`` and their normal approximation.

Notation: ``fbar_n = f_{sigma^n omega} ∘ T^n - zeta_{omega,N}(f_{sigma^n omega} ∘ T^n)``
for ``0 <= n < N``, ``sigma_N^2 = Var(sum fbar_n)``,
``sigma_{N,n}^2 = sum_{i<n} sum_{j<N} E[fbar_i fbar_j]`` and the path process
``W(t) = sigma_N^{-1} sum_n 1{t >= sigma_{N,n}^2 / sigma_N^2} fbar_n``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import kernels
from .digits import DigitModel, affine_expectation
from .errors import ConfigurationError, ConvergenceError, PreconditionError
from .measures import ConditionalMeasure, ConditionalSample
from .observables import Observable
from .spectral import spectral_triple
from .system import OpenSystem, Realization, step_array
from .transfer import OperatorCache

COBOUNDARY_TOL = 1e-12


# ---------------------------------------------------------------------------
# centering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Centering:
    """``c_n = zeta_{omega,N}(f_{sigma^n omega} ∘ T^n)`` for ``n < N``."""

    values: np.ndarray
    se: np.ndarray | None
    exact: bool
    method: str


def centering_constants(f: Observable, measure: ConditionalMeasure, M: int = 200_000, seed: int = 0) -> Centering:
    """Exact on full-branch affine systems for ``eta``; quadrature or Monte Carlo otherwise."""
    N = measure.N
    syms = measure.omega.window(0, max(N, 1))
    if N == 0:
        return Centering(np.zeros(0), None, True, "empty")
    if f.closed_form and measure.system.exact_path and measure.is_eta:
        dm = measure.digit_model()
        vals = np.array([affine_expectation(dm, f.for_symbol(syms[n]).tables(), n) for n in range(N)])
        return Centering(vals, None, True, "digit-recursion")
    if measure.exact_available:
        quad = measure.quadrature(q=4)
        vals = quad.expect(lambda x: _fvalues(f, syms, x[:, :N]))
        return Centering(np.asarray(vals), None, True, "cylinder-quadrature")
    s = measure.sample(M, seed, stream=11)
    F = _fvalues(f, syms, _forward_positions(measure, s, N))
    return Centering(F.mean(axis=0), F.std(axis=0, ddof=1) / math.sqrt(M), False, "monte-carlo")


def _fvalues(f: Observable, syms: np.ndarray, X: np.ndarray) -> np.ndarray:
    out = np.empty_like(X)
    for n in range(X.shape[1]):
        out[:, n] = f.evaluate(int(syms[n]), X[:, n])
    return out


def _forward_positions(measure: ConditionalMeasure, sample: ConditionalSample, n_times: int) -> np.ndarray:
    """``T^n x`` for ``n < n_times``; backward digit recursion when digits are known."""
    if sample.digits is not None and sample.tail is not None:
        dm = measure.digit_model()
        X = dm.positions(np.ascontiguousarray(sample.digits[:, : dm.T]), sample.tail)
        return X[:, :n_times]
    if n_times > 48:
        warnings.warn("forward float orbits beyond 48 steps are dominated by rounding", stacklevel=3)
    X = np.empty((len(sample.x), n_times))
    x = sample.x.astype(float)
    syms = measure.omega.window(0, max(n_times, 1))
    for n in range(n_times):
        X[:, n] = x
        x = step_array(measure.system, int(syms[n]), x)
    return X


@dataclass
class CenteredArray:
    """``fbar_{omega,N,n}(x_m)`` for ``m < M``, ``n < N``."""

    values: np.ndarray
    centering: Centering
    N: int
    L: float

    @property
    def M(self) -> int:
        return self.values.shape[0]


def centered_observables(f: Observable, measure: ConditionalMeasure, points: ConditionalSample,
                         centering: Centering | None = None) -> CenteredArray:
    if points.N != measure.N:
        raise ConfigurationError(f"sample horizon {points.N} differs from measure horizon {measure.N}")
    if not np.all(points.certificates):
        raise ConfigurationError("sample contains points without survival certificates")
    N = measure.N
    c = centering or centering_constants(f, measure)
    syms = measure.omega.window(0, max(N, 1))
    F = _fvalues(f, syms, _forward_positions(measure, points, N)) - c.values[None, :]
    return CenteredArray(F, c, N, f.L_sup if f.closed_form else math.nan)


# ---------------------------------------------------------------------------
# variance profiles
# ---------------------------------------------------------------------------


@dataclass
class VarianceProfile:
    """``sigma_{N,n}^2`` for ``n = 0..N`` plus the covariance matrix when known."""

    profile: np.ndarray
    mode: str
    covariance: np.ndarray | None = None
    se: float | None = None
    coboundary_suspect: bool = False
    theory: bool = True
    centering: Centering | None = None

    @property
    def N(self) -> int:
        return len(self.profile) - 1

    @property
    def sigma2(self) -> float:
        return float(self.profile[-1])

    @property
    def sigma(self) -> float:
        return math.sqrt(max(self.sigma2, 0.0))

    @property
    def jump_times(self) -> np.ndarray:
        """``alpha_n = sigma_{N,n}^2 / sigma_N^2`` for ``n < N``."""
        if self.sigma2 <= 0:
            raise PreconditionError("sigma_N = 0; the path process is undefined")
        return self.profile[:-1] / self.sigma2


def _profile_from_cov(C: np.ndarray) -> np.ndarray:
    row = C.sum(axis=1)
    return np.concatenate([[0.0], np.cumsum(row)])


def variance_profile(f: Observable, measure: ConditionalMeasure, mode: str = "auto", M: int = 200_000,
                     seed: int = 0, k: int | None = None, threads: int = 1) -> VarianceProfile:
    """Variance structure of the centered sums.

    ``exact`` integrates all products ``fbar_i fbar_j`` over the surviving
    cylinders (N <= 12); ``transfer`` propagates densities with the open Ulam
    cocycle (exact for grid-constant ``f`` on aligned grids); ``mc`` uses
    sample moments of the prefix sums.
    """
    if mode == "auto":
        if measure.exact_available:
            mode = "exact"
        elif f.closed_form and all(p.is_grid_constant(k or _default_k(measure.system, f)) for p in f.pieces):
            mode = "transfer"
        else:
            mode = "mc"
    N = measure.N
    if N < 1:
        raise ConfigurationError("variance profile needs N >= 1")
    if mode == "exact":
        prof = _variance_exact(f, measure)
    elif mode == "transfer":
        prof = _variance_transfer(f, measure, k or _default_k(measure.system, f))
    elif mode == "mc":
        res = simulate_sums(measure.system, measure.omega, f, N, M, seed, threads=threads, measure=measure)
        prof = res.profile
    else:
        raise ConfigurationError(f"unknown variance mode {mode!r}")
    prof.theory = measure.is_eta
    prof.coboundary_suspect = prof.sigma2 <= COBOUNDARY_TOL * max(1.0, N)
    return prof


def _default_k(system: OpenSystem, f: Observable) -> int:
    from fractions import Fraction

    k = 1
    for p in f.pieces:
        for b in p.breakpoints:
            k = math.lcm(k, Fraction(b).limit_denominator(1 << 20).denominator)
    for bm, h in zip(system.maps, system.holes):
        for b in list(bm.breakpoints) + list(h.endpoints()):
            k = math.lcm(k, Fraction(b).denominator)
    if not all(p.is_grid_constant(k) for p in f.pieces):
        return 4096
    return max(k, system.max_branches)


def _variance_exact(f: Observable, measure: ConditionalMeasure) -> VarianceProfile:
    N = measure.N
    syms = measure.omega.window(0, N)
    c = centering_constants(f, measure)
    quad = measure.quadrature(q=2)
    S2 = np.zeros((N, N))
    for w, x in quad.chunks():
        F = _fvalues(f, syms, x[:, :N]) - c.values[None, :]
        S2 += F.T @ (F * w[:, None])
    C = 0.5 * (S2 + S2.T)
    return VarianceProfile(_profile_from_cov(C), "exact", C, None, centering=c)


def _variance_transfer(f: Observable, measure: ConditionalMeasure, k: int) -> VarianceProfile:
    N = measure.N
    system, omega = measure.system, measure.omega
    psi = measure.psi_values
    if psi is not None:
        k = math.lcm(k, len(psi))
    cache = OperatorCache(system, k)
    syms = omega.window(0, N + 1)
    p = np.ones(k) if psi is None else np.repeat(np.asarray(psi, float), k // len(psi))
    fg = np.stack([f.for_symbol(syms[t]).grid(k).values for t in range(N)], axis=0)
    # backward survival vectors b_t = A_t b_{t+1}, with log scales
    b = np.empty((N + 1, k))
    blog = np.zeros(N + 1)
    cur = np.ones(k)
    lg = 0.0
    for t in range(N, -1, -1):
        cur = cache[syms[t]].pull(cur)
        s = cur.max()
        if not s > 0:
            raise PreconditionError("no surviving mass")
        cur = cur / s
        lg += math.log(s)
        b[t], blog[t] = cur, lg
    # forward density p_t and moments
    plog = 0.0
    Z = None
    W = np.zeros((k, N))
    Wlog = np.zeros(N)
    E2 = np.zeros((N, N))
    E1 = np.zeros(N)
    for t in range(N + 1):
        if t == 0:
            Z = float(np.mean(p * b[0]))
            Zlog = blog[0]
        if t < N:
            E1[t] = np.mean(p * fg[t] * b[t]) * math.exp(plog + blog[t] - Zlog) / Z
            # centre before propagating so covariances avoid the E2 - E1 E1 cancellation
            ft = fg[t] - E1[t]
            W[:, t] = p * ft
            Wlog[t] = plog
            act = slice(0, t + 1)
            E2[act, t] = (W[:, act] * (ft * b[t])[:, None]).mean(axis=0) * np.exp(Wlog[act] + blog[t] - Zlog) / Z
        if t == N:
            break
        A = cache[syms[t]]
        p = A.push(p)
        W[:, : t + 1] = A.push(W[:, : t + 1])
        s = np.abs(p).max()
        p = p / s
        plog += math.log(s)
        sc = np.abs(W[:, : t + 1]).max(axis=0)
        sc[sc == 0] = 1.0
        W[:, : t + 1] /= sc
        Wlog[: t + 1] += np.log(sc)
    C = np.triu(E2) + np.triu(E2, 1).T
    cen = Centering(E1, None, True, "transfer")
    return VarianceProfile(_profile_from_cov(C), "transfer", C, None, centering=cen)


# ---------------------------------------------------------------------------
# streaming Monte Carlo over the digit coding
# ---------------------------------------------------------------------------


@dataclass
class SumSimulation:
    """Prefix-sum statistics of a Monte Carlo run."""

    N: int
    M: int
    totals: np.ndarray
    cuts: np.ndarray
    at_cuts: np.ndarray
    profile: VarianceProfile
    centering: Centering


def _chunk_rng(seed: int, N: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(N), int(chunk)])))


def simulate_sums(system: OpenSystem, omega: Realization, f: Observable, N: int, M: int, seed: int = 0,
                  threads: int = 1, chunk: int = 8192, cuts: Sequence[int] = (), measure: ConditionalMeasure | None = None,
                  centering: Centering | None = None) -> SumSimulation:
    """Draw ``M`` points of ``eta_{omega,N}`` chunk by chunk and accumulate prefix sums.

    Chunk ``c`` uses its own Philox stream keyed by ``(seed, N, c)``, and
    partial results are combined in chunk order, so the output does not
    depend on ``threads``.
    """
    measure = measure or ConditionalMeasure(system, omega, N)
    if not (system.exact_path and measure.is_eta and f.closed_form):
        return _simulate_sums_generic(measure, f, M, seed, threads, chunk, cuts, centering)
    dm = DigitModel.build(system, omega, N + 1, N + 1)
    cen = centering or centering_constants(f, measure)
    bp, sl, ic = f.tables()
    syms = np.ascontiguousarray(omega.window(0, N).astype(np.int64))
    cvals = np.ascontiguousarray(cen.values, dtype=float)
    cuts = np.asarray(sorted(set(int(c) for c in cuts)), dtype=np.int64)
    n_chunks = (M + chunk - 1) // chunk

    def run(c: int):
        m = min(chunk, M - c * chunk)
        rng = _chunk_rng(seed, N, c)
        digits, y = dm.sample(rng, m)
        S = kernels.prefix_sums(np.ascontiguousarray(digits), y, dm.origin, dm.scale, syms, bp, sl, ic, cvals)
        tot = S[:, N]
        return tot.copy(), S[:, cuts].copy(), S.sum(axis=0), S.T @ tot

    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as ex:
        parts = list(ex.map(run, range(n_chunks)))
    totals = np.concatenate([p[0] for p in parts])
    at_cuts = np.concatenate([p[1] for p in parts]) if len(cuts) else np.zeros((M, 0))
    sum_S = np.zeros(N + 1)
    sum_ST = np.zeros(N + 1)
    for p in parts:
        sum_S += p[2]
        sum_ST += p[3]
    mean_T = totals.mean()
    prof = (sum_ST - M * (sum_S / M) * mean_T) / (M - 1)
    prof[0] = 0.0
    se = float(np.std((totals - mean_T) ** 2, ddof=1) / math.sqrt(M))
    vp = VarianceProfile(prof, "mc", None, se, centering=cen)
    return SumSimulation(N, M, totals, cuts, at_cuts, vp, cen)


def _simulate_sums_generic(measure, f, M, seed, threads, chunk, cuts, centering):
    N = measure.N
    if N > 48:
        raise ConfigurationError("Monte Carlo off the digit path is limited to N <= 48")
    cen = centering or centering_constants(f, measure, seed=seed)
    s = measure.sample(M, seed, stream=N)
    syms = measure.omega.window(0, N)
    F = _fvalues(f, syms, _forward_positions(measure, s, N)) - cen.values[None, :]
    S = np.concatenate([np.zeros((M, 1)), np.cumsum(F, axis=1)], axis=1)
    totals = S[:, N].copy()
    cuts = np.asarray(sorted(set(int(c) for c in cuts)), dtype=np.int64)
    mean_T = totals.mean()
    prof = ((S - S.mean(axis=0)).T @ (totals - mean_T)) / (M - 1)
    prof[0] = 0.0
    se = float(np.std((totals - mean_T) ** 2, ddof=1) / math.sqrt(M))
    vp = VarianceProfile(prof, "mc", None, se, centering=cen)
    return SumSimulation(N, M, totals, cuts, S[:, cuts], vp, cen)


# ---------------------------------------------------------------------------
# normalised sums and the path process
# ---------------------------------------------------------------------------


def normalized_sum(array: CenteredArray, profile: VarianceProfile) -> np.ndarray:
    """``W = sigma_N^{-1} sum_n fbar_n`` for every sample point."""
    if profile.sigma2 <= 0:
        raise PreconditionError("sigma_N = 0; cannot normalise")
    if profile.N != array.N:
        raise ConfigurationError("profile and array have different horizons")
    return array.values.sum(axis=1) / profile.sigma


TIE_TOL = 1e-12


def _fires(t, alpha):
    # exact ties (e.g. alpha_n = n/N) must fire despite rounding in the cumulative sums
    alpha = np.asarray(alpha, dtype=float)
    return np.asarray(t) >= alpha - TIE_TOL * np.maximum(1.0, np.abs(alpha))


def J(alpha: float, t) -> np.ndarray:
    """``J_alpha(t) = 1`` iff ``t >= alpha``."""
    return _fires(t, alpha).astype(float)


def included_terms(profile: VarianceProfile, t: float) -> np.ndarray:
    """Indices ``n`` with ``t >= sigma_{N,n}^2 / sigma_N^2``."""
    return np.nonzero(_fires(t, profile.jump_times))[0]


@dataclass
class PathSample:
    """Step paths of ``W(t)`` for each sample point."""

    jump_times: np.ndarray
    increments: np.ndarray

    def at(self, t) -> np.ndarray:
        """``W(t)`` for every point; ``t`` scalar or 1-d array (returns ``(M, len(t))``)."""
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        inc = _fires(ts[None, :], self.jump_times[:, None]).astype(float)
        out = self.increments @ inc
        return out[:, 0] if np.ndim(t) == 0 else out

    @property
    def final(self) -> np.ndarray:
        return self.increments.sum(axis=1)


def path_process(array: CenteredArray, profile: VarianceProfile) -> PathSample:
    if profile.sigma2 <= 0:
        raise PreconditionError("sigma_N = 0; the path process is undefined")
    return PathSample(profile.jump_times, array.values / profile.sigma)


def path_values_from_prefix(sim: SumSimulation, profile: VarianceProfile, ts: Sequence[float]) -> np.ndarray:
    """``W(t)`` from stored prefix sums when each included set is a prefix ``{0..m-1}``."""
    out = np.empty((sim.M, len(ts)))
    for j, t in enumerate(ts):
        inc = included_terms(profile, t)
        m = len(inc)
        if m and not np.array_equal(inc, np.arange(m)):
            raise ConfigurationError("jump times are not monotone; store full increments instead")
        if m == 0:
            out[:, j] = 0.0
            continue
        idx = np.nonzero(sim.cuts == m)[0]
        if len(idx) == 0:
            raise ConfigurationError(f"prefix length {m} was not recorded")
        out[:, j] = sim.at_cuts[:, idx[0]]
    return out / profile.sigma


def path_cuts(profile: VarianceProfile, ts: Sequence[float]) -> list[int]:
    return [len(included_terms(profile, t)) for t in ts]


# ---------------------------------------------------------------------------
# distances to the standard normal
# ---------------------------------------------------------------------------


def dist_kolmogorov(sample) -> float:
    """One-sample Kolmogorov distance to ``N(0, 1)``."""
    x = np.sort(np.asarray(sample, dtype=float))
    M = len(x)
    if M < 1:
        raise ConfigurationError("empty sample")
    F = ndtr(x)
    i = np.arange(1, M + 1)
    return float(max(np.max(i / M - F), np.max(F - (i - 1) / M)))


def _G(x):
    # antiderivative of Phi
    return x * ndtr(x) + np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def dist_wasserstein(sample) -> float:
    """``∫ |F_emp - Phi| dx`` evaluated piecewise in closed form."""
    x = np.sort(np.asarray(sample, dtype=float))
    M = len(x)
    if M < 1:
        raise ConfigurationError("empty sample")
    phi = lambda z: np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)  # noqa: E731
    total = float(_G(x[0]))  # ∫_{-inf}^{x_1} Phi
    total += float(phi(x[-1]) - x[-1] * (1 - ndtr(x[-1])))  # ∫_{x_M}^{inf} (1 - Phi)
    a, b = x[:-1], x[1:]
    c = np.arange(1, M) / M
    keep = b > a
    a, b, c = a[keep], b[keep], c[keep]
    xs = ndtri(c)
    # c - Phi >= 0 left of xs, <= 0 right of it
    lo = np.clip(xs, a, b)
    left = c * (lo - a) - (_G(lo) - _G(a))
    right = (_G(b) - _G(lo)) - c * (b - lo)
    return total + float(np.sum(left + right))


# ---------------------------------------------------------------------------
# asymptotic variance
# ---------------------------------------------------------------------------


@dataclass
class SigmaInfinity:
    value: float
    se: float
    truncation_bound: float
    autocovariance: np.ndarray
    r_fit: float
    n_fibres: int
    k: int


def fibre_autocovariances(system: OpenSystem, omega: Realization, f: Observable, n_T: int, k: int) -> np.ndarray:
    """``c_n = eta_{omega,inf}(f_omega f_{sigma^n omega} ∘ T^n)`` for the ``eta_inf``-centered family."""
    cache = OperatorCache(system, k)
    tr = spectral_triple(system, omega, n_T, k, cache=cache)
    syms = omega.window(0, n_T + 1)
    ftil = []
    for j in range(n_T + 1):
        g = f.for_symbol(syms[j]).grid(k).values
        mean = float(np.dot(tr.nus[j], tr.phis[j].values * g))
        ftil.append(g - mean)
    out = np.empty(n_T + 1)
    w = tr.phis[0].values * ftil[0]
    lam = 1.0
    for n in range(n_T + 1):
        out[n] = float(np.dot(tr.nus[n], w * ftil[n])) / lam
        if n < n_T:
            w = cache[syms[n]].push(w)
            lam *= tr.lambdas[n]
    return out


def sigma_infinity(f: Observable, system: OpenSystem, n_T: int = 30, n_fibres: int = 32, k: int | None = None,
                   first_fibre: int = 0) -> SigmaInfinity:
    """Truncated series ``c_0 + 2 sum_{n=1}^{n_T} c_n`` averaged over seeded fibres."""
    if not f.closed_form:
        raise ConfigurationError("sigma_infinity needs a piecewise-affine observable")
    k = k or _default_k(system, f)
    k = max(k, 4)
    covs = np.array([
        fibre_autocovariances(system, system.environment.realize(first_fibre + i), f, n_T, k)
        for i in range(n_fibres)
    ])
    per = covs[:, 0] + 2 * covs[:, 1:].sum(axis=1)
    mean_c = np.abs(covs.mean(axis=0))
    n = np.arange(n_T + 1)
    sel = (n >= 1) & (mean_c > 1e-15)
    r_fit, bound = 0.0, 0.0
    if sel.sum() >= 2:
        slope, icpt = np.polyfit(n[sel], np.log(mean_c[sel]), 1)
        r_fit = float(math.exp(slope))
        if r_fit >= 1:
            raise ConvergenceError(f"autocovariances do not decay (fitted ratio {r_fit:.3f})")
        bound = float(2 * math.exp(icpt) * r_fit ** (n_T + 1) / (1 - r_fit))
    elif sel.sum() == 1:
        bound = float(2 * mean_c[sel][0] * 0.5 ** (n_T))
    se = float(per.std(ddof=1) / math.sqrt(n_fibres)) if n_fibres > 1 else 0.0
    return SigmaInfinity(float(per.mean()), se, bound, covs.mean(axis=0), r_fit, n_fibres, k)


# ---------------------------------------------------------------------------
# functional correlation bound
# ---------------------------------------------------------------------------


@dataclass
class FCBRow:
    gap: int
    lhs: float
    placement: int
    se: float = 0.0


@dataclass
class FCBEstimate:
    rows: list
    r: float
    residual: float
    log_intercept: float
    mode: str

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.rows])

    @property
    def lhs(self) -> np.ndarray:
        return np.array([r.lhs for r in self.rows])


def _validate_blocks(times: Sequence[int], blocks: Sequence[int], N: int) -> list[list[int]]:
    times = list(times)
    ls = list(blocks)
    k = len(times)
    if k < 2 or not ls or ls[0] != 0 or ls[-1] != k or any(a >= b for a, b in zip(ls, ls[1:])):
        raise ConfigurationError("blocks must be 0 = l_0 < l_1 < ... < l_{p+1} = k with k >= 2")
    if any(not 0 <= t < N for t in times) or any(a > b for a, b in zip(times, times[1:])):
        raise ConfigurationError("times must satisfy 0 <= n_1 <= ... <= n_k < N")
    out = []
    for i in range(len(ls) - 1):
        blk = list(range(ls[i], ls[i + 1]))
        if any(times[j] >= times[j + 1] for j in blk[:-1]):
            raise ConfigurationError("times must increase strictly inside a block")
        out.append(blk)
    return out


def fcb_lhs(factors: Sequence[Callable], f: Observable, measure: ConditionalMeasure, times: Sequence[int],
            blocks: Sequence[int], mode: str = "exact", M: int = 200_000, seed: int = 0, q: int = 4):
    """LHS of the correlation bound for ``g = prod_i h_i(block_i)``.

    ``factors[i]`` maps the ``(P, len(block_i))`` array of block values to
    ``(P,)``.  Exact mode integrates over cylinders; the decoupled integral
    factorises into block-wise single integrals.  Returns ``(value, se)``.
    """
    N = measure.N
    blks = _validate_blocks(times, blocks, N)
    if len(factors) != len(blks):
        raise ConfigurationError("need one factor per block")
    syms = measure.omega.window(0, N)
    times = np.asarray(times)
    if mode == "exact":
        c = centering_constants(f, measure)
        quad = measure.quadrature(q=q)
        coupled = 0.0
        single = np.zeros(len(blks))
        for w, x in quad.chunks():
            F = _fvalues(f, syms, x[:, :N]) - c.values[None, :]
            vals = [h(F[:, times[b]]) for h, b in zip(factors, blks)]
            coupled += float(np.dot(w, np.prod(vals, axis=0)))
            single += np.array([np.dot(w, v) for v in vals])
        return abs(coupled - float(np.prod(single))), 0.0
    if mode != "mc":
        raise ConfigurationError(f"unknown FCB mode {mode!r}")
    c = centering_constants(f, measure, seed=seed)
    arrays = []
    for i in range(len(blks) + 1):
        s = measure.sample(M, seed, stream=1000 + i, keep_digits=measure.resolved_mode() == "sequential")
        arrays.append(_fvalues(f, syms, _forward_positions(measure, s, N)) - c.values[None, :])
    coupled_v = np.prod([h(arrays[0][:, times[b]]) for h, b in zip(factors, blks)], axis=0)
    dec = [h(arrays[i + 1][:, times[b]]) for i, (h, b) in enumerate(zip(factors, blks))]
    means = [d.mean() for d in dec]
    val = coupled_v.mean() - float(np.prod(means))
    var = coupled_v.var(ddof=1) / M
    for i, d in enumerate(dec):
        others = np.prod([m for j, m in enumerate(means) if j != i]) if len(means) > 1 else 1.0
        var += (others**2) * d.var(ddof=1) / M
    return abs(float(val)), math.sqrt(var)


def _identity_factor(v: np.ndarray) -> np.ndarray:
    return v[:, 0]


def _exact_pair_lhs(factors: Sequence[Callable], f: Observable, measure: ConditionalMeasure,
                    pairs: Sequence[tuple], q: int = 4) -> list[float]:
    """Exact two-block LHS for many time pairs in one quadrature pass."""
    N = measure.N
    syms = measure.omega.window(0, N)
    c = centering_constants(f, measure)
    coupled = np.zeros(len(pairs))
    single = np.zeros((2, N))
    for w, x in measure.quadrature(q=q).chunks():
        F = _fvalues(f, syms, x[:, :N]) - c.values[None, :]
        H = [np.stack([h(F[:, t:t + 1]) for t in range(N)], axis=1) for h in factors]
        for j in range(2):
            single[j] += w @ H[j]
        for k, (a, b) in enumerate(pairs):
            coupled[k] += float(np.dot(w, H[0][:, a] * H[1][:, b]))
    return [abs(coupled[k] - single[0, a] * single[1, b]) for k, (a, b) in enumerate(pairs)]


def fcb_gap_estimate(f: Observable, measure: ConditionalMeasure, gaps: Sequence[int] = range(1, 9),
                     factors: Sequence[Callable] | None = None, placement: str | int = "max",
                     mode: str = "exact", M: int = 200_000, seed: int = 0) -> FCBEstimate:
    """Sweep the gap between two single-time blocks and fit ``lhs ≈ C r^gap``.

    With the default factors ``g(x, y) = x y`` the LHS is ``|Cov(fbar_i, fbar_{i+gap})|``.
    ``placement="max"`` reports, for each gap, the largest LHS over all
    admissible start times ``i``; an integer fixes ``i``.
    """
    N = measure.N
    factors = list(factors or (_identity_factor, _identity_factor))
    pairs = {}
    for g in gaps:
        if g < 1 or g >= N:
            raise ConfigurationError(f"gap {g} not admissible for N = {N}")
        starts = range(0, N - g) if placement == "max" else [int(placement)]
        for i in starts:
            if i + g >= N:
                raise ConfigurationError(f"placement {i} + gap {g} exceeds N - 1")
        pairs[int(g)] = [(int(i), int(i) + int(g)) for i in starts]
    if mode == "exact":
        flat = [pq for ps in pairs.values() for pq in ps]
        table = dict(zip(flat, _exact_pair_lhs(factors, f, measure, flat)))
        lookup = lambda pq: (table[pq], 0.0)  # noqa: E731
    else:
        lookup = lambda pq: fcb_lhs(factors, f, measure, list(pq), [0, 1, 2], mode, M, seed)  # noqa: E731
    rows = []
    for g, ps in pairs.items():
        best = None
        for pq in ps:
            v, se = lookup(pq)
            if best is None or v > best.lhs:
                best = FCBRow(g, v, pq[0], se)
        rows.append(best)
    lhs = np.array([r.lhs for r in rows])
    gs = np.array([r.gap for r in rows], dtype=float)
    sel = lhs > 0
    if sel.sum() < 2:
        return FCBEstimate(rows, 0.0, 0.0, -math.inf, mode)
    slope, icpt = np.polyfit(gs[sel], np.log(lhs[sel]), 1)
    res = float(np.sqrt(np.mean((np.log(lhs[sel]) - (slope * gs[sel] + icpt)) ** 2)))
    return FCBEstimate(rows, float(math.exp(slope)), res, float(icpt), mode)


def covariance_fcb_table(profile: VarianceProfile, gaps: Sequence[int], placement: str | int = "max") -> np.ndarray:
    """``max_i |C[i, i+gap]|`` from a covariance matrix (or the fixed placement)."""
    C = profile.covariance
    if C is None:
        raise ConfigurationError("profile carries no covariance matrix")
    N = C.shape[0]
    out = []
    for g in gaps:
        vals = np.abs(np.diagonal(C, offset=g))
        out.append(vals.max() if placement == "max" else vals[int(placement)])
    return np.array(out)


def loglog_slope(xs, ys) -> float:
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])
