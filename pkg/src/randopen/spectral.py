"""Fibrewise spectral data of the open cocycle on an Ulam grid.

* conformal measure ``nu_omega``: cell masses obtained by pushing the adjoint
  down from a far-future fibre, ``m_j ∝ A_j m_{j+1}``;
* escape rate ``lambda_omega = nu_{sigma omega}(L_omega 1)``;
* equivariant density ``phi_omega``: pullback of the constant density from a
  far-past fibre, normalised by ``nu_omega(phi_omega) = 1``;
* decay table of ``Q_{omega,n}(u) = L^n u / lambda^n - nu(u) phi_{sigma^n omega}``.

Horizons are doubled until the fibre-0 object changes by less than ``tol``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConvergenceError, DegenerateSystemError
from .system import OpenSystem, Realization
from .transfer import GridFunction, OperatorCache

DEFAULT_TOL = 1e-10
MAX_HORIZON = 4096


def _push_down(cache: OperatorCache, omega: Realization, top: int, keep: int) -> list[np.ndarray]:
    """Normalised adjoint masses ``m_j`` for ``j = keep-1, ..., 0`` starting uniform at ``top``."""
    k = cache.k
    m = np.full(k, 1.0 / k)
    syms = omega.window(0, top)
    out: list[np.ndarray] = [None] * keep  # type: ignore[list-item]
    if top < keep:
        raise ConfigurationError("push-down horizon shorter than the requested fibres")
    for j in range(top - 1, -1, -1):
        v = cache[syms[j]].pull(m)
        tot = v.sum()
        if not tot > 0:
            raise DegenerateSystemError(f"conformal push-down lost all mass at fibre {j}")
        m = v / tot
        if j < keep:
            out[j] = m
    return out


def conformal_measures(
    system: OpenSystem,
    omega: Realization,
    k: int,
    steps: int = 0,
    horizon: int = 16,
    tol: float = DEFAULT_TOL,
    max_horizon: int = MAX_HORIZON,
    cache: OperatorCache | None = None,
) -> tuple[list[np.ndarray], int]:
    """Cell masses of ``nu_{sigma^j omega}`` for ``j = 0..steps`` and the horizon used."""
    cache = cache or OperatorCache(system, k)
    H = max(1, int(horizon))
    prev = _push_down(cache, omega, steps + H, steps + 1)
    while True:
        H2 = 2 * H
        if H2 > max_horizon:
            raise ConvergenceError(
                f"conformal measure did not settle to {tol:g} within horizon {max_horizon}"
            )
        cur = _push_down(cache, omega, steps + H2, steps + 1)
        if np.abs(cur[0] - prev[0]).max() < tol:
            return cur, H2
        prev, H = cur, H2


def conformal_measure(
    system: OpenSystem,
    omega: Realization,
    horizon: int = 16,
    k: int = 4096,
    tol: float = DEFAULT_TOL,
) -> "ConformalResult":
    """Cell masses of ``nu_omega`` with the adjoint-equivariance residual."""
    cache = OperatorCache(system, k)
    nus, H = conformal_measures(system, omega, k, steps=1, horizon=horizon, tol=tol, cache=cache)
    A0 = cache[omega[0]]
    lam = float(A0.pull(nus[1]).sum())
    residual = float(np.abs(A0.pull(nus[1]) - lam * nus[0]).sum())
    return ConformalResult(nus[0], lam, residual, H, k)


@dataclass(frozen=True)
class ConformalResult:
    masses: np.ndarray
    lam: float
    residual: float
    horizon: int
    k: int

    def mass(self, a, b) -> float:
        return interval_mass(self.masses, a, b)


def interval_mass(masses: np.ndarray, a, b) -> float:
    """Mass of ``[a, b)``; exact when ``a`` and ``b`` are grid points."""
    k = len(masses)
    fa, fb = float(a) * k, float(b) * k
    ia, ib = int(math.floor(fa)), int(math.floor(fb))
    if ia == ib:
        return float(masses[min(ia, k - 1)] * (fb - fa)) if ia < k else 0.0
    tot = masses[ia + 1 : ib].sum() if ib > ia + 1 else 0.0
    tot += masses[ia] * (ia + 1 - fa)
    if ib < k:
        tot += masses[ib] * (fb - ib)
    return float(tot)


def nu_integral(masses: np.ndarray, u) -> float:
    vals = u.values if isinstance(u, GridFunction) else np.asarray(u)
    if len(vals) != len(masses):
        raise ConfigurationError("measure and function live on different grids")
    return float(np.dot(masses, vals))


def _pullback(cache: OperatorCache, omega: Realization, B: int) -> np.ndarray:
    syms = omega.window(-B, B)
    u = np.ones(cache.k)
    for s in syms:
        v = cache[s].push(u)
        tot = v.mean()
        if not tot > 0:
            raise DegenerateSystemError("pullback density lost all mass")
        u = v / tot
    return u


def equivariant_density(
    system: OpenSystem,
    omega: Realization,
    horizon: int = 16,
    tol: float = DEFAULT_TOL,
    k: int = 4096,
    nu: np.ndarray | None = None,
    max_horizon: int = MAX_HORIZON,
    cache: OperatorCache | None = None,
) -> GridFunction:
    """``phi_omega`` as the normalised pullback of the constant density from ``sigma^{-B} omega``."""
    cache = cache or OperatorCache(system, k)
    if nu is None:
        nu = conformal_measures(system, omega, cache.k, 0, tol=tol, cache=cache)[0][0]
    B = max(1, int(horizon))

    def normalised(B_):
        u = _pullback(cache, omega, B_)
        c = float(np.dot(nu, u))
        if not c > 0:
            raise DegenerateSystemError("equivariant density has zero conformal mass")
        return u / c

    prev = normalised(B)
    while True:
        B2 = 2 * B
        if B2 > max_horizon:
            raise ConvergenceError(
                f"pullback density did not settle to {tol:g} within horizon {max_horizon}"
            )
        cur = normalised(B2)
        if np.abs(cur - prev).max() < tol:
            return GridFunction(cur)
        prev, B = cur, B2


@dataclass
class SpectralTriple:
    """Escape rates, equivariant densities and conformal masses along ``omega``."""

    lambdas: np.ndarray
    phis: list
    nus: list
    k: int
    pullback_horizon: int
    pushdown_horizon: int

    @property
    def phi(self) -> GridFunction:
        return self.phis[0]

    @property
    def nu(self) -> np.ndarray:
        return self.nus[0]

    @property
    def normalisation(self) -> float:
        return nu_integral(self.nus[0], self.phis[0])


@dataclass(frozen=True)
class EscapeRates:
    lambdas: np.ndarray
    geometric_mean: float
    method: str
    k: int


def escape_rate(
    system: OpenSystem,
    omega: Realization,
    n_max: int,
    k: int = 4096,
    method: str = "conformal",
    tol: float = DEFAULT_TOL,
) -> EscapeRates:
    """Per-step escape rates ``lambda_{sigma^i omega}``, ``i < n_max``.

    ``method="conformal"`` evaluates ``nu_{sigma^{i+1} omega}(L 1)``;
    ``method="mass-ratio"`` reports ``∫L u_i / ∫u_i`` along the normalised
    cocycle started from the pulled-back density.
    """
    if n_max < 1:
        raise ConfigurationError("need at least one step")
    cache = OperatorCache(system, k)
    syms = omega.window(0, n_max)
    if method == "conformal":
        nus, _ = conformal_measures(system, omega, k, steps=n_max, tol=tol, cache=cache)
        lams = np.array([cache[syms[i]].pull(nus[i + 1]).sum() for i in range(n_max)])
    elif method == "mass-ratio":
        u = equivariant_density(system, omega, tol=tol, k=k, cache=cache).values
        lams = np.empty(n_max)
        u = u / u.mean()
        for i in range(n_max):
            v = cache[syms[i]].push(u)
            lams[i] = v.mean()
            if not lams[i] > 0:
                raise DegenerateSystemError(f"all mass escaped at step {i}")
            u = v / lams[i]
    else:
        raise ConfigurationError(f"unknown escape-rate method {method!r}")
    if np.any(lams <= 0):
        raise DegenerateSystemError("an escape rate vanished")
    return EscapeRates(lams, float(np.exp(np.mean(np.log(lams)))), method, k)


def spectral_triple(
    system: OpenSystem,
    omega: Realization,
    n: int,
    k: int = 4096,
    tol: float = DEFAULT_TOL,
    cache: OperatorCache | None = None,
) -> SpectralTriple:
    """Triple for fibres ``0..n``; ``phi`` is propagated forward by the eigen-relation."""
    cache = cache or OperatorCache(system, k)
    nus, Hn = conformal_measures(system, omega, k, steps=n, tol=tol, cache=cache)
    syms = omega.window(0, max(n, 1))
    lams = np.array([cache[syms[i]].pull(nus[i + 1]).sum() for i in range(n)])
    phi0 = equivariant_density(system, omega, tol=tol, k=k, nu=nus[0], cache=cache)
    phis = [phi0]
    cur = phi0.values
    for i in range(n):
        cur = cache[syms[i]].push(cur) / lams[i]
        phis.append(GridFunction(cur))
    return SpectralTriple(lams, phis, nus, k, 0, Hn)


@dataclass
class QDecayFit:
    """Sup-norms of ``Q_{omega,n}(u)`` and their exponential fit ``D kappa^n``."""

    n: np.ndarray
    values: np.ndarray
    D: float
    kappa: float
    residual: float
    kappa_max_ratio: float
    annihilated: bool
    fit_range: tuple = field(default=(2, 0))

    def bound_holds(self, D: float, kappa: float, norm: float, slack: float = 1e-10) -> bool:
        return bool(np.all(self.values <= D * norm * kappa ** self.n + slack))


def q_table(triple: SpectralTriple, cache: OperatorCache, omega: Realization, u: GridFunction, n_max: int) -> np.ndarray:
    if len(triple.lambdas) < n_max:
        raise ConfigurationError("spectral triple shorter than the decay table")
    nu_u = nu_integral(triple.nus[0], u)
    syms = omega.window(0, max(n_max, 1))
    vals = np.empty(n_max + 1)
    cur = u.values.astype(float)
    vals[0] = np.abs(cur - nu_u * triple.phis[0].values).max()
    for i in range(n_max):
        cur = cache[syms[i]].push(cur) / triple.lambdas[i]
        vals[i + 1] = np.abs(cur - nu_u * triple.phis[i + 1].values).max()
    return vals


def fit_decay(values: np.ndarray, first: int = 2, zero_tol: float = 0.0) -> tuple[float, float, float, float, bool]:
    """Least-squares fit of ``log values[n]`` on ``n >= first``.

    Returns ``(D, kappa, rms_residual, max_ratio, annihilated)``.  Entries at
    or below ``zero_tol`` count as exact zeros; if fewer than two positive
    entries remain the table is reported as annihilated with ``D = 0`` and
    ``kappa = nan``.
    """
    n = np.arange(len(values))
    sel = (n >= first) & (values > zero_tol)
    if sel.sum() < 2:
        return 0.0, float("nan"), float("nan"), float("nan"), True
    x, y = n[sel].astype(float), np.log(values[sel])
    slope, icpt = np.polyfit(x, y, 1)
    res = float(np.sqrt(np.mean((y - (slope * x + icpt)) ** 2)))
    v = values[first:]
    ratios = v[1:][v[:-1] > zero_tol] / v[:-1][v[:-1] > zero_tol]
    return float(np.exp(icpt)), float(np.exp(slope)), res, float(ratios.max()) if len(ratios) else float("nan"), False


def q_decay(
    system: OpenSystem,
    omega: Realization,
    u: GridFunction,
    n_max: int,
    k: int | None = None,
    triple: SpectralTriple | None = None,
    zero_tol: float = 1e-12,
) -> QDecayFit:
    """Decay table of ``||Q_{omega,n}(u)||_inf`` for ``n = 0..n_max`` with its fit.

    Values below ``zero_tol * ||u||_BV`` are treated as exact annihilation.
    """
    k = k or u.k
    if u.k != k:
        raise ConfigurationError("observable grid differs from the operator grid")
    cache = OperatorCache(system, k)
    if triple is None:
        triple = spectral_triple(system, omega, n_max, k, cache=cache)
    vals = q_table(triple, cache, omega, u, n_max)
    scale = max(u.bv_norm, 1e-300)
    D, kappa, res, mr, ann = fit_decay(vals, 2, zero_tol * scale)
    return QDecayFit(np.arange(n_max + 1), vals, D, kappa, res, mr, ann, (2, n_max))


from .conditions import ConditionReport, lasota_yorke_check, verify_conditions  # noqa: E402,F401
