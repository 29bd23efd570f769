"""Closed-form normal-approximation rate bounds under a functional correlation bound.

All absolute constants (``C`` and the geometric constant ``C_theta``) are
free parameters defaulting to 1; only shapes in ``N`` are meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PreconditionError


@dataclass(frozen=True)
class RateFunction:
    """``R(n)`` for ``n >= 1`` with ``R(0) := 1``.

    ``geometric`` uses ``R(n) = theta^n``.  ``tabulated`` holds ``R(1), R(2), ...``
    and is zero past the table.
    """

    kind: str
    theta: float | None = None
    values: tuple = ()

    def __post_init__(self):
        if self.kind == "geometric":
            if self.theta is None or not 0 < self.theta < 1:
                raise ConfigurationError("geometric rate needs theta in (0, 1)")
        elif self.kind == "tabulated":
            vals = tuple(float(v) for v in self.values)
            if any(v < 0 or not math.isfinite(v) for v in vals):
                raise ConfigurationError("tabulated rates must be finite and nonnegative")
            object.__setattr__(self, "values", vals)
        else:
            raise ConfigurationError(f"unknown rate kind {self.kind!r}")

    @classmethod
    def geometric(cls, theta: float) -> "RateFunction":
        return cls("geometric", float(theta))

    @classmethod
    def tabulated(cls, values) -> "RateFunction":
        return cls("tabulated", None, tuple(values))

    def __call__(self, n: int) -> float:
        if n <= 0:
            return 1.0
        if self.kind == "geometric":
            return self.theta**n
        return self.values[n - 1] if n <= len(self.values) else 0.0

    def table(self, n_max: int) -> np.ndarray:
        """``R(0..n_max)``."""
        return np.array([self(n) for n in range(n_max + 1)])

    def tail_sup(self, n: int) -> float:
        """``sup_{l >= n} R(l)``."""
        if n <= 0:
            return 1.0
        if self.kind == "geometric":
            return self.theta**n
        rest = self.values[n - 1:]
        return max(rest) if rest else 0.0


@dataclass(frozen=True)
class RateHats:
    hat: np.ndarray
    R1: float
    R2: float
    R3: float


def rate_hats(R: RateFunction, N: int) -> RateHats:
    """Running suprema ``Rhat(n)`` for ``n < N`` and the three weighted sums."""
    if N < 1:
        raise ConfigurationError("N must be at least 1")
    hat = np.empty(N)
    hat[0] = 1.0
    if N > 1:
        hat[N - 1] = R.tail_sup(N - 1)
        for n in range(N - 2, 0, -1):
            hat[n] = max(R(n), hat[n + 1])
    n = np.arange(N)
    return RateHats(hat, math.fsum(hat), math.fsum(np.sqrt(n) * hat), math.fsum(n * hat))


@dataclass(frozen=True)
class RateBoundInputs:
    N: int
    L: float
    sigma_N: float
    C_star: float
    R: RateFunction
    K: int | None = None
    C0: float = 1.0
    C: float = 1.0

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError("N must be at least 1")
        if not self.L >= 1:
            raise ConfigurationError("L must be at least 1")
        if not self.sigma_N > 0:
            raise ConfigurationError("sigma_N must be positive")
        if not self.C_star >= 1:
            raise ConfigurationError("C_star must be at least 1")
        if self.C0 < 0 or self.C <= 0:
            raise ConfigurationError("C0 must be nonnegative and C positive")


def kolmogorov_window(N: int) -> tuple[float, int]:
    """Admissible ``K``: ``lower < K <= N``."""
    return 2 + 0.5 * math.log(N) / math.log(2), N


def smallest_admissible_K(N: int) -> int:
    lo, _ = kolmogorov_window(N)
    return math.floor(lo) + 1


def wasserstein_bound(inp: RateBoundInputs) -> float:
    h = rate_hats(inp.R, inp.N)
    return inp.C * inp.C_star * inp.L**5 * inp.sigma_N**-3 * inp.N * (1 + h.R3)


def kolmogorov_terms(inp: RateBoundInputs) -> np.ndarray:
    """The six nonnegative summands of the Kolmogorov bound."""
    N, K, L, s, Cs, C = inp.N, inp.K, inp.L, inp.sigma_N, inp.C_star, inp.C
    if K is None:
        raise ConfigurationError("the Kolmogorov bound needs K")
    lo, hi = kolmogorov_window(N)
    if not lo < K <= hi:
        raise PreconditionError(f"K = {K} outside the admissible window {lo:.6g} < K <= {hi}")
    h = rate_hats(inp.R, N)
    tail = math.fsum(inp.R(j) for j in range(K, N))
    return np.array([
        C * L**2 * s**-2 * N * tail,
        C * Cs * L**3 * K**2 * N * s**-3,
        C * Cs * L * N * s**-1 * inp.R.tail_sup(K),
        C * math.sqrt(N) * s**-2 * L**2 * K,
        C * math.sqrt(Cs) * math.sqrt(N) * s**-2 * L**2 * K**1.5 * (1 + math.sqrt(h.R1)),
        C * L * K * s**-1,
    ])


def kolmogorov_bound(inp: RateBoundInputs) -> float:
    return float(math.fsum(kolmogorov_terms(inp)))


@dataclass(frozen=True)
class GeometricKolmogorov:
    """Corollary value, the ``K`` it uses and the six-term bound evaluated with geometric closed forms."""

    value: float
    K: int
    K_corollary: int
    theorem_value: float


def corollary_K(N: int, theta: float, C_theta: float = 1.0) -> int:
    return max(1, math.ceil(C_theta * math.log(N) / math.log(1 / theta))) if N > 1 else 1


def kolmogorov_bound_geometric(inp: RateBoundInputs, C_theta: float = 1.0) -> GeometricKolmogorov:
    """Geometric-rate Kolmogorov bound.

    ``K_corollary = ceil(C_theta log N / log(1/theta))``.  When that falls
    below the admissible window it is raised to the smallest admissible
    value; ``theorem_value`` is NaN when the window is empty.
    """
    if inp.R.kind != "geometric":
        raise ConfigurationError("kolmogorov_bound_geometric needs a geometric rate")
    th = inp.R.theta
    N, L, s, Cs, C = inp.N, inp.L, inp.sigma_N, inp.C_star, inp.C
    value = C_theta * Cs * L**3 * math.log(N + 1) ** 2 * (N**-0.5 + s**-1 + N * s**-3 + math.sqrt(N) * s**-2)
    Kc = corollary_K(N, th, C_theta)
    K = max(Kc, smallest_admissible_K(N))
    if K > N:
        return GeometricKolmogorov(value, K, Kc, math.nan)
    tail = (th**K - th**N) / (1 - th)
    R1 = 1 + (th - th**N) / (1 - th)
    terms = [
        C * L**2 * s**-2 * N * tail,
        C * Cs * L**3 * K**2 * N * s**-3,
        C * Cs * L * N * s**-1 * th**K,
        C * math.sqrt(N) * s**-2 * L**2 * K,
        C * math.sqrt(Cs) * math.sqrt(N) * s**-2 * L**2 * K**1.5 * (1 + math.sqrt(R1)),
        C * L * K * s**-1,
    ]
    return GeometricKolmogorov(value, K, Kc, math.fsum(terms))


def functional_bound(inp: RateBoundInputs) -> float:
    h = rate_hats(inp.R, inp.N)
    CN = (inp.L + 1) ** 3 * (1 + (inp.C_star + 1) * h.R3 + inp.C0 * inp.C_star**1.5 * math.sqrt(h.R1) * (1 + h.R2))
    return inp.C * CN * inp.sigma_N**-3 * inp.N


@dataclass
class BoundRow:
    N: int
    wasserstein_bound: float
    kolmogorov_bound: float
    functional_bound: float
    K_used: int


def bound_curve(Ns, L: float, Sigma: float, C_star: float, R: RateFunction, C: float = 1.0, C0: float = 1.0,
                C_theta: float = 1.0, sigma_of_N=None) -> list[BoundRow]:
    """Bounds along ``N`` with ``sigma_N = Sigma sqrt(N)`` unless ``sigma_of_N`` is given."""
    rows = []
    for N in Ns:
        s = sigma_of_N(N) if sigma_of_N else Sigma * math.sqrt(N)
        base = RateBoundInputs(int(N), L, s, C_star, R, None, C0, C)
        if R.kind == "geometric":
            K = max(corollary_K(int(N), R.theta, C_theta), smallest_admissible_K(int(N)))
        else:
            K = smallest_admissible_K(int(N))
        if K <= N:
            kb = kolmogorov_bound(RateBoundInputs(int(N), L, s, C_star, R, K, C0, C))
        else:
            kb = math.nan
        rows.append(BoundRow(int(N), wasserstein_bound(base), kb, functional_bound(base), K))
    return rows
