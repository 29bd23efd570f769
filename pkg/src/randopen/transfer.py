"""Grid densities and Ulam discretisations of the closed and open transfer operators.

A density on the uniform grid of ``k`` cells is stored by its cell averages.
For a branch map ``T`` the Ulam matrix is

    A[i, j] = Leb(C_i ∩ T^{-1} C_j) / Leb(C_i),

so that pushing a density forward is ``u' = A^T u`` and pulling back a grid
function is ``A v``.  The open matrix drops the parts of ``C_i`` lying in the
hole.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DegenerateSystemError, PreconditionError
from .system import OpenSystem, Realization


@dataclass(frozen=True)
class GridFunction:
    """Cell-averaged values of a function on ``k`` equal cells of [0, 1)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) < 1:
            raise ConfigurationError("grid function needs a 1-d array of cell values")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("grid function values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return len(self.values)

    @classmethod
    def constant(cls, k: int, c: float = 1.0) -> "GridFunction":
        return cls(np.full(k, float(c)))

    @classmethod
    def indicator(cls, k: int, a, b) -> "GridFunction":
        """Cell averages of ``1_[a, b)``; exact overlap fractions."""
        a, b = Fraction(a), Fraction(b)
        vals = np.zeros(k)
        lo = max(0, math.floor(a * k))
        hi = min(k, math.ceil(b * k))
        for i in range(lo, hi):
            ov = min(b, Fraction(i + 1, k)) - max(a, Fraction(i, k))
            if ov > 0:
                vals[i] = float(ov * k)
        return cls(vals)

    @classmethod
    def from_callable(cls, k: int, fn, nodes: int = 8) -> "GridFunction":
        """Cell averages of ``fn`` by Gauss-Legendre quadrature inside each cell."""
        x, w = np.polynomial.legendre.leggauss(nodes)
        centres = (np.arange(k) + 0.5) / k
        pts = centres[:, None] + x[None, :] / (2 * k)
        return cls((np.asarray(fn(pts)) * w[None, :]).sum(axis=1) / 2)

    @property
    def integral(self) -> float:
        return float(np.mean(self.values))

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def l1_norm(self) -> float:
        return float(np.mean(np.abs(self.values)))

    @property
    def variation(self) -> float:
        return grid_variation(self)

    @property
    def bv_norm(self) -> float:
        """``var(u) + ||u||_inf``."""
        return self.variation + self.sup_norm

    def refine(self, factor: int) -> "GridFunction":
        return GridFunction(np.repeat(self.values, factor))

    def evaluate(self, xs: np.ndarray) -> np.ndarray:
        idx = np.clip((np.asarray(xs) * self.k).astype(np.int64), 0, self.k - 1)
        return self.values[idx]

    def __add__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        return GridFunction(self.values - other.values)

    def __mul__(self, c) -> "GridFunction":
        if isinstance(c, GridFunction):
            return GridFunction(self.values * c.values)
        return GridFunction(self.values * float(c))

    __rmul__ = __mul__


def grid_variation(u: GridFunction) -> float:
    """``sum_i |u_{i+1} - u_i|``; the exact variation of a grid-constant function."""
    if u.k < 2:
        raise ConfigurationError("grid variation needs at least two cells")
    return float(np.abs(np.diff(u.values)).sum())


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Sparse Ulam matrix of one symbol's transfer operator."""

    matrix: sp.csr_matrix
    open: bool
    masked_cells: np.ndarray
    symbol: int
    exact: bool = True

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def matrix_t(self) -> sp.csr_matrix:
        cached = self.__dict__.get("_mt")
        if cached is None:
            cached = self.matrix.T.tocsr()
            object.__setattr__(self, "_mt", cached)
        return cached

    def push(self, u: np.ndarray) -> np.ndarray:
        """Transfer operator on cell values (``A^T u``); accepts stacked columns."""
        return self.matrix_t @ u

    def pull(self, v: np.ndarray) -> np.ndarray:
        """Cell averages of ``v ∘ T`` restricted to survivors (``A v``)."""
        return self.matrix @ v

    def apply(self, u: GridFunction) -> GridFunction:
        return GridFunction(self.push(u.values))

    def dump(self, path) -> None:
        """Little-endian ``int64 k, int64 nnz`` then ``(int64 row, int64 col, f64 value)`` triples."""
        coo = self.matrix.tocoo()
        rec = np.zeros(coo.nnz, dtype=[("r", "<i8"), ("c", "<i8"), ("v", "<f8")])
        rec["r"], rec["c"], rec["v"] = coo.row, coo.col, coo.data
        order = np.lexsort((rec["c"], rec["r"]))
        with open(path, "wb") as fh:
            fh.write(struct.pack("<qq", self.k, coo.nnz))
            fh.write(rec[order].tobytes())

    @staticmethod
    def load(path) -> sp.csr_matrix:
        with open(path, "rb") as fh:
            k, nnz = struct.unpack("<qq", fh.read(16))
            rec = np.frombuffer(fh.read(), dtype=[("r", "<i8"), ("c", "<i8"), ("v", "<f8")], count=nnz)
        return sp.csr_matrix((rec["v"], (rec["r"], rec["c"])), shape=(k, k))


def _grid_aligned(values, k: int) -> bool:
    return all((Fraction(v) * k).denominator == 1 for v in values)


def _ulam(system: OpenSystem, symbol: int, k: int, open_: bool) -> OperatorMatrix:
    s = system.check_symbol(symbol)
    bm, hole = system.maps[s], system.holes[s]
    if k < bm.n_branches:
        raise PreconditionError(f"grid of {k} cells is coarser than the {bm.n_branches} branches")
    if bm.min_abs_slope <= 1:
        raise PreconditionError(
            f"symbol {s} has a branch with |slope| = {bm.min_abs_slope} <= 1; Ulam discretisation needs expansion"
        )
    cuts = set(bm.breakpoints) | (hole.endpoints() if open_ else set())
    exact = _grid_aligned(cuts, k)
    if not exact:
        warnings.warn(
            f"grid k={k} is not aligned with the breakpoints or hole of symbol {s}; entries are inexact",
            stacklevel=3,
        )

    rows, cols, vals = [], [], []
    edges = np.arange(k + 1) / k
    # split [0, 1) at cell edges, branch breakpoints and (open) hole endpoints
    pts = np.unique(np.concatenate([edges, [float(c) for c in cuts]]))
    lo, hi = pts[:-1], pts[1:]
    mid = 0.5 * (lo + hi)
    keep = hi > lo
    if open_:
        keep &= ~hole.contains_array(mid)
    lo, hi, mid = lo[keep], hi[keep], mid[keep]
    cell = np.minimum((mid * k).astype(np.int64), k - 1)
    _, slopes, icpts = bm._float_tables
    a = bm.branch_indices(mid)
    s_ = slopes[a]
    y0 = s_ * lo + icpts[a]
    y1 = s_ * hi + icpts[a]
    ylo, yhi = np.minimum(y0, y1), np.maximum(y0, y1)
    inv = 1.0 / np.abs(s_)
    j0 = np.clip(np.floor(ylo * k).astype(np.int64), 0, k - 1)
    j1 = np.clip(np.ceil(yhi * k).astype(np.int64) - 1, 0, k - 1)
    span = int((j1 - j0).max()) + 1 if len(j0) else 0
    for t in range(span):
        j = j0 + t
        ok = j <= j1
        ov = np.minimum(yhi, (j + 1) / k) - np.maximum(ylo, j / k)
        ok &= ov > 0
        rows.append(cell[ok])
        cols.append(j[ok])
        vals.append(ov[ok] * inv[ok] * k)
    r = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    c = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    v = np.concatenate(vals) if vals else np.zeros(0)
    A = sp.csr_matrix((v, (r, c)), shape=(k, k))
    A.sum_duplicates()
    A.sort_indices()
    masked = np.nonzero(np.asarray(A.sum(axis=1)).ravel() == 0)[0] if open_ else np.zeros(0, dtype=np.int64)
    return OperatorMatrix(A, open_, masked, s, exact)


def ulam_closed(system: OpenSystem, symbol: int, k: int) -> OperatorMatrix:
    """Ulam matrix of the closed transfer operator of ``symbol`` on ``k`` cells."""
    return _ulam(system, symbol, k, False)


def ulam_open(system: OpenSystem, symbol: int, k: int) -> OperatorMatrix:
    """Ulam matrix of the open operator ``u -> L_0(u 1_{I \\ H})``."""
    return _ulam(system, symbol, k, True)


class OperatorCache:
    """Per-symbol open (or closed) Ulam matrices for one system and grid."""

    def __init__(self, system: OpenSystem, k: int, open_: bool = True):
        self.system = system
        self.k = k
        self.open = open_
        self._ops: dict[int, OperatorMatrix] = {}

    def __getitem__(self, symbol: int) -> OperatorMatrix:
        s = int(symbol)
        op = self._ops.get(s)
        if op is None:
            op = _ulam(self.system, s, self.k, self.open)
            self._ops[s] = op
        return op


@dataclass
class CocycleProduct:
    """Running product ``L_{sigma^{n-1} omega} ... L_omega`` applied to a density.

    The density is renormalised to unit integral after every step; the log of
    the true integral accumulates in ``log_mass``.
    """

    operators: list = field(default_factory=list)
    log_mass: float = 0.0
    current: GridFunction | None = None
    step_masses: list = field(default_factory=list)

    def reset(self, u: GridFunction) -> None:
        m = u.integral
        if m <= 0:
            raise DegenerateSystemError("initial density must have positive integral")
        self.current = GridFunction(u.values / m)
        self.log_mass = math.log(m)
        self.step_masses = []

    def advance(self, op: OperatorMatrix) -> float:
        v = op.push(self.current.values)
        m = float(np.mean(v))
        if not m > 0:
            raise DegenerateSystemError(f"all mass escaped at step {len(self.step_masses)} (symbol {op.symbol})")
        self.current = GridFunction(v / m)
        self.log_mass += math.log(m)
        self.operators.append(op)
        self.step_masses.append(m)
        return m


def apply_cocycle(
    product: CocycleProduct | OperatorCache,
    u: GridFunction,
    n: int,
    omega: Realization,
) -> tuple[GridFunction, float]:
    """Normalised ``L_omega^n u`` and the log of its integral.

    ``product`` may be an :class:`OperatorCache` (a fresh product is built) or
    a :class:`CocycleProduct` whose ``operators`` already hold at least the
    ``n`` matrices for ``omega_0 .. omega_{n-1}``.
    """
    if n < 1:
        raise ConfigurationError("cocycle length must be at least 1")
    if isinstance(product, OperatorCache):
        ops = [product[s] for s in omega.window(0, n)]
        prod = CocycleProduct()
    else:
        ops = list(product.operators[:n])
        if len(ops) < n:
            raise ConfigurationError(f"cocycle holds {len(ops)} operators, {n} requested")
        syms = omega.window(0, n)
        if any(op.symbol != s for op, s in zip(ops, syms)):
            raise ConfigurationError("cocycle operators do not match the symbols of omega")
        prod = product
        prod.operators = []
    prod.reset(u)
    for op in ops:
        prod.advance(op)
    return prod.current, prod.log_mass


def bv_proxy_holds(u: GridFunction) -> bool:
    """``var(u) + ||u||_inf <= 2 var(u) + ||u||_1`` on the grid."""
    return u.variation + u.sup_norm <= 2 * u.variation + u.l1_norm + 1e-12 * max(1.0, u.sup_norm)


def cocycle_masses(cache: OperatorCache, omega: Realization, n: int, u: GridFunction | None = None) -> np.ndarray:
    """Integrals of ``L_omega^j u`` for ``j = 1..n`` (``u = 1`` by default)."""
    prod = CocycleProduct()
    prod.reset(u if u is not None else GridFunction.constant(cache.k))
    out = np.empty(n)
    for j, s in enumerate(omega.window(0, n)):
        prod.advance(cache[s])
        out[j] = math.exp(prod.log_mass)
    return out


def operators_for(cache: OperatorCache, symbols: Sequence[int]) -> list[OperatorMatrix]:
    return [cache[s] for s in symbols]
